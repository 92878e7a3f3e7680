import numpy as np
import pytest

from pyavrobust.exceptions import ShapeError
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.gradcheck import finite_difference_check
from pyavrobust.tensorcore.graph import TensorNode, backward, record


def ones(*shape):
    return TensorNode.constant(np.ones(shape))


def away_from_zero(rng, shape, low=0.1):
    values = rng.uniform(low, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


def test_backward_sets_leaf_gradients():
    x = TensorNode.variable(np.array([1.0, 2.0, 3.0]))
    w = TensorNode.constant(np.array([2.0, 0.5, -1.0]))
    loss = P.sum(P.mul(x, w))

    grads = backward(loss)

    np.testing.assert_array_equal(grads[x], [2.0, 0.5, -1.0])
    np.testing.assert_array_equal(x.grad, grads[x])
    assert w.grad is None


def test_backward_accumulates_shared_parents():
    x = TensorNode.variable(np.array([3.0]))
    loss = P.sum(x * x + x)

    backward(loss)

    np.testing.assert_allclose(x.grad, [7.0])


def test_backward_requires_scalar_root():
    x = TensorNode.variable(np.ones(3))
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_backward_of_constant_graph_is_empty():
    assert backward(P.sum(TensorNode.constant(np.ones(2)))) == {}


def test_backward_is_deterministic(rng):
    values = rng.normal(size=(4, 5))
    weight = rng.normal(size=(5, 3))

    def sweep():
        x = TensorNode.variable(values)
        logits = P.linear(x, TensorNode.constant(weight))
        loss = P.softmax_cross_entropy(logits, [0, 1, 2, 0])
        return backward(loss)[x]

    np.testing.assert_array_equal(sweep(), sweep())


PRIMITIVE_CASES = [
    ("add", lambda a, b: P.sum(P.add(a, b) * P.add(a, b)), [(3, 4), (4,)]),
    ("sub", lambda a, b: P.sum(P.sub(a, b) * a), [(2, 3), (2, 3)]),
    ("mul", lambda a, b: P.sum(P.mul(a, b)), [(2, 3), (1, 3)]),
    (
        "linear",
        lambda x, w, b: P.sum(P.linear(x, w, b) * 0.5),
        [(3, 4), (4, 2), (2,)],
    ),
    ("mean", lambda x: P.mean(P.mean(x, axis=1) * P.mean(x, axis=1)), [(3, 4)]),
    ("var", lambda x: P.sum(P.var_along_axis(x, axis=0)), [(5, 3)]),
    ("softmax", lambda x: P.sum(P.softmax(x) * P.softmax(x)), [(2, 4)]),
    (
        "cosine",
        lambda u, v: P.sum(P.cosine_similarity(u, v, axis=-1)),
        [(3, 5), (3, 5)],
    ),
    ("relu", lambda x: P.sum(P.relu(x) * P.relu(x)), [(3, 4)]),
    (
        "concat",
        lambda a, b: P.sum(P.concat([a, b], axis=0) * P.concat([b, a], axis=0)),
        [(2, 3), (2, 3)],
    ),
    ("reshape", lambda x: P.sum(P.reshape(x, (6,)) * P.reshape(x, (6,))), [(2, 3)]),
]


@pytest.mark.parametrize("name, builder, shapes", PRIMITIVE_CASES)
def test_primitive_gradients(rng, name, builder, shapes):
    point = [away_from_zero(rng, shape) for shape in shapes]

    report = finite_difference_check(builder, point)

    assert report.passed, f"{name}: {report.max_rel_err}"
    assert report.n_non_finite == 0


SWEEP_SEEDS = range(100)


@pytest.mark.parametrize("name, builder, shapes", PRIMITIVE_CASES)
def test_primitive_gradients_over_many_seeds(name, builder, shapes):
    worst = 0.0
    for seed in SWEEP_SEEDS:
        rng = np.random.default_rng(seed)
        point = [away_from_zero(rng, shape) for shape in shapes]
        report = finite_difference_check(builder, point)
        assert report.passed, f"{name} seed {seed}: {report.max_rel_err}"
        worst = max(worst, report.max_rel_err)
    assert worst <= 1e-4


def test_conv2d_and_maxpool_gradients_over_many_seeds():
    def builder(x, w, b):
        out = P.maxpool(P.relu(P.conv2d(x, w, b, stride=1, padding=1)), 2)
        return P.sum(out * out)

    checked = 0
    for seed in SWEEP_SEEDS:
        rng = np.random.default_rng(seed)
        point = [
            rng.normal(size=(1, 1, 4, 4)),
            rng.normal(size=(2, 1, 3, 3)),
            rng.normal(size=(2,)),
        ]
        out = P.conv2d(*[TensorNode.constant(p) for p in point], stride=1, padding=1)
        blocks = out.values.reshape(1, 2, 2, 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        windows = np.sort(blocks.reshape(-1, 4))
        # kinks of relu and ties in the pooling windows break central differences
        if np.min(np.abs(out.values)) < 1e-3 or np.min(np.diff(windows)) < 1e-3:
            continue
        report = finite_difference_check(builder, point, h=1e-6)
        assert report.passed, f"seed {seed}: {report.max_rel_err}"
        checked += 1
    assert checked >= 50


def test_conv2d_gradient(rng):
    point = [
        rng.normal(size=(2, 2, 5, 4)),
        rng.normal(size=(3, 2, 3, 3)),
        rng.normal(size=(3,)),
    ]

    def builder(x, w, b):
        out = P.conv2d(x, w, b, stride=(2, 1), padding=1)
        return P.sum(out * out)

    assert finite_difference_check(builder, point).passed


def test_maxpool_gradient(rng):
    # distinct values keep the window maxima away from ties
    point = rng.permutation(32).reshape(1, 2, 4, 4) / 32.0

    report = finite_difference_check(
        lambda x: P.sum(P.maxpool(x, 2) * P.maxpool(x, 2)), point, h=1e-5
    )

    assert report.passed


def test_maxpool_ties_route_to_first_maximum():
    x = TensorNode.variable(np.ones((1, 1, 2, 2)))
    backward(P.sum(P.maxpool(x, 2)))

    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_cross_entropy_gradient(rng):
    target = TensorNode.constant(np.eye(3)[[0, 2]])
    logits = rng.normal(size=(2, 3))

    report = finite_difference_check(
        lambda x: P.cross_entropy(P.softmax(x), target), logits
    )

    assert report.passed


def test_softmax_cross_entropy_matches_composition(rng):
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 1])

    fused = P.softmax_cross_entropy(TensorNode.constant(logits), labels).item()
    composed = P.cross_entropy(
        P.softmax(TensorNode.constant(logits)), TensorNode.constant(np.eye(3)[labels])
    ).item()

    assert fused == pytest.approx(composed, rel=1e-12)
    assert finite_difference_check(
        lambda x: P.softmax_cross_entropy(x, labels), logits
    ).passed


def test_softmax_cross_entropy_rejects_bad_labels():
    logits = TensorNode.constant(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        P.softmax_cross_entropy(logits, [0, 1, 2])
    with pytest.raises(ShapeError):
        P.softmax_cross_entropy(logits, [0, 3])


def test_dropout_and_frame_mix_gradients(rng):
    mask = rng.random((3, 4)) > 0.5
    matrix = rng.normal(size=(3, 3))

    report = finite_difference_check(
        lambda x: P.sum(P.frame_mix(P.dropout_mask_apply(x, mask, 2.0), matrix)),
        rng.normal(size=(3, 4)),
    )

    assert report.passed


def test_cosine_of_zero_vector_is_finite():
    u = TensorNode.variable(np.zeros((1, 3)))
    v = TensorNode.constant(np.ones((1, 3)))
    cos = P.cosine_similarity(u, v)
    backward(P.sum(cos))

    assert cos.values[0] == 0.0
    assert np.isfinite(u.grad).all()


@pytest.mark.parametrize(
    "builder",
    [
        lambda: P.add(ones(2, 3), ones(4)),
        lambda: P.linear(ones(2, 3), ones(4, 2)),
        lambda: P.conv2d(ones(1, 2, 4, 4), ones(1, 3, 3, 3)),
        lambda: P.maxpool(ones(1, 1, 3, 4), 2),
        lambda: P.cosine_similarity(ones(3), ones(4)),
    ],
)
def test_shape_errors(builder):
    with pytest.raises(ShapeError):
        builder()


def test_forward_primitive_dispatch():
    x = np.array([[1.0, -2.0]])
    np.testing.assert_array_equal(P.forward_primitive("relu", [x]).values, [[1.0, 0.0]])
    np.testing.assert_array_equal(
        P.forward_primitive("concat", [x, x], axis=0).values, np.vstack([x, x])
    )
    with pytest.raises(KeyError):
        P.forward_primitive("gelu", [x])


def test_gradcheck_flags_wrong_gradient():
    def broken(x):
        # forward is x^2 but the recorded gradient is 1
        return P.sum(
            record("square", x.values**2, (x,), lambda g: (g * np.ones_like(x.values),))
        )

    report = finite_difference_check(broken, np.array([3.0]))

    assert not report.passed
    assert report.max_rel_err > 0.5


def test_gradcheck_rejects_non_positive_step():
    with pytest.raises(ValueError):
        finite_difference_check(lambda x: P.sum(x), np.ones(2), h=0.0)


def test_gradcheck_is_relative_for_small_gradients():
    def scaled(x):
        # forward is 1e-3 * x but the recorded gradient is 1.05e-3
        return P.sum(
            record(
                "scale",
                1e-3 * x.values,
                (x,),
                lambda g: (g * np.full_like(x.values, 1.05e-3),),
            )
        )

    report = finite_difference_check(scaled, np.array([0.5, -2.0]))

    assert not report.passed
    assert report.max_rel_err == pytest.approx(0.05 / 1.05, rel=1e-3)


def test_gradcheck_accepts_correct_small_gradients():
    report = finite_difference_check(lambda x: P.sum(x * 1e-3), np.array([0.5, -2.0]))

    assert report.passed
    np.testing.assert_allclose(report.analytic[0], [1e-3, 1e-3])

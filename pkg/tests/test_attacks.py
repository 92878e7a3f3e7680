from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from pyavrobust.attacks.config import AttackConfig, Budget
from pyavrobust.attacks.evaluation import (
    TRANSFER_COLUMNS,
    asr_matrix,
    cosine_vs_asr,
    ensemble_attack,
    iteration_ablation,
    rank_correlation,
    summarize_transfer,
    transfer_matrix,
)
from pyavrobust.attacks.losses import (
    attack_objective,
    check_surrogates,
    copy_plans,
    mma_loss,
    tia_loss,
)
from pyavrobust.attacks.pgd import box_feasible, project, projected_ascent, run_attack
from pyavrobust.avmodels.network import (
    ForwardTrace,
    build_model,
    forward,
    model_grid,
    predict,
)
from pyavrobust.avmodels.spec import ModelSpec
from pyavrobust.avmodels.training import train_grid
from pyavrobust.defense.universal import craft_universal, segment_and_sample
from pyavrobust.exceptions import NonFiniteGradientError
from pyavrobust.synthav.generator import GenConfig, generate_dataset
from pyavrobust.synthav.transforms import IDENTITY_PLAN, make_plan
from pyavrobust.tensorcore.gradcheck import finite_difference_check
from pyavrobust.tensorcore.graph import TensorNode, backward

EPS = 8 / 255


def test_budget_defaults():
    budget = Budget()

    assert budget.epsilons == (EPS, EPS)
    assert budget.step_sizes == (EPS / 4, EPS / 4)
    assert budget.with_epsilon(0.1).step_sizes == (0.025, 0.025)
    with pytest.raises(ValueError):
        Budget(p="2")
    with pytest.raises(ValueError):
        Budget(steps=0)


def test_fgsm_is_single_step():
    with pytest.raises(ValueError):
        AttackConfig(method="FGSM", budget=Budget(steps=10))

    fgsm = AttackConfig().with_method("FGSM")
    assert fgsm.budget.steps == 1
    assert fgsm.step_sizes == fgsm.budget.epsilons


@pytest.mark.parametrize(
    "method, lambda1, lambda2, momentum, copies",
    [
        ("IFGSM", 0.0, 0.0, False, 1),
        ("MIFGSM", 0.0, 0.0, True, 1),
        ("TIA", 1.0, 0.0, True, 4),
        ("MMA", 0.0, 1.0, True, 1),
        ("TMA", 1.0, 1.0, True, 4),
    ],
)
def test_method_components(method, lambda1, lambda2, momentum, copies):
    cfg = AttackConfig.for_method(method)

    assert cfg.effective_lambda1 == lambda1
    assert cfg.effective_lambda2 == lambda2
    assert cfg.uses_momentum is momentum
    assert cfg.copy_count == copies


def test_masked_copies_apply_to_every_method():
    cfg = AttackConfig.for_method("IFGSM", mask_ratio=0.25, n_copies=3)

    plans = copy_plans(cfg, 8, iteration=1)

    assert len(plans) == 3
    assert plans[0].is_identity
    assert all(plan.kind == "mask" for plan in plans[1:])


def test_project_and_box():
    delta = np.array([-0.5, 0.01, 0.5])

    np.testing.assert_array_equal(project(delta, 0.1), [-0.1, 0.01, 0.1])
    feasible = box_feasible(np.array([0.05, 0.5, 0.98]), delta, 0.1)
    np.testing.assert_allclose(feasible, [-0.05, 0.01, 0.02])
    with pytest.raises(ValueError):
        project(delta, -1.0)


def test_projected_ascent_maximizes_linear_objective():
    weights = np.array([1.0, -2.0, 0.0])

    def gradient(deltas, k):
        return float(weights @ deltas[0]), [weights.copy()]

    result = projected_ascent(
        gradient, shapes=[(3,)], epsilons=[0.3], step_sizes=[0.1], n_steps=5
    )

    np.testing.assert_allclose(result.deltas[0], [0.3, -0.3, 0.0])
    assert result.best_iteration == 5


def test_fgsm_reaches_corner_of_linear_objective():
    cfg = AttackConfig.for_method("FGSM")
    weights = np.array([0.3, -2.0, 1e-6, 0.0])

    def gradient(deltas, k):
        return float(weights @ deltas[0]), [weights.copy()]

    result = projected_ascent(
        gradient,
        shapes=[(4,)],
        epsilons=cfg.budget.epsilons[:1],
        step_sizes=cfg.step_sizes[:1],
        n_steps=cfg.budget.steps,
    )

    np.testing.assert_allclose(result.deltas[0], [EPS, -EPS, EPS, 0.0])


def test_momentum_free_mifgsm_equals_ifgsm(trained_model, sample):
    budget = Budget(steps=5)
    plain = AttackConfig.for_method("IFGSM", budget=budget)
    damped = AttackConfig.for_method("MIFGSM", budget=replace(budget, momentum=0.0))

    one = run_attack([trained_model], sample, plain)
    two = run_attack([trained_model], sample, damped)

    np.testing.assert_array_equal(one.delta_v, two.delta_v)
    np.testing.assert_array_equal(one.delta_a, two.delta_a)
    np.testing.assert_array_equal(one.objective_trace, two.objective_trace)


def test_projected_ascent_rejects_non_finite_gradient():
    def gradient(deltas, k):
        return 0.0, [np.full(2, np.nan if k == 2 else 1.0)]

    with pytest.raises(NonFiniteGradientError) as error:
        projected_ascent(gradient, [(2,)], [0.1], [0.05], n_steps=3)
    assert error.value.iteration == 2


def test_tia_loss_of_constant_features_is_zero(model, sample):
    frozen = sample.replace(
        x_v=np.repeat(sample.x_v[:1], 8, axis=0),
        x_a=np.repeat(sample.x_a[:1], 8, axis=0),
    )

    frozen_loss = tia_loss(forward(model, frozen.x_v, frozen.x_a)).item()
    assert frozen_loss == pytest.approx(0.0, abs=1e-12)
    assert tia_loss(forward(model, sample.x_v, sample.x_a)).item() > 0.0


def test_tia_loss_needs_two_frames(model, sample):
    trace = forward(model, sample.x_v[:1], sample.x_a[:1])
    with pytest.raises(ValueError):
        tia_loss(trace)


def test_mma_loss_is_a_cosine(model, sample):
    value = mma_loss(forward(model, sample.x_v, sample.x_a)).item()

    assert -1.0 <= value <= 1.0


def _trace(audio_frames, visual_frames, pooled_a=None, pooled_v=None):
    audio = TensorNode.constant(np.asarray(audio_frames, dtype=float))
    visual = TensorNode.constant(np.asarray(visual_frames, dtype=float))
    if pooled_a is None:
        pooled_a = audio.values.mean(axis=0)
    if pooled_v is None:
        pooled_v = visual.values.mean(axis=0)
    fused = TensorNode.constant(pooled_a + pooled_v)
    return ForwardTrace(
        visual_frames=visual,
        audio_frames=audio,
        pooled_v=TensorNode.constant(pooled_v),
        pooled_a=TensorNode.constant(pooled_a),
        fused=fused,
        logits=fused,
    )


def test_tia_loss_pinned_value():
    # audio frame means 0 and 2 have population variance 1; video is static
    trace = _trace([[1.0, -1.0], [3.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]])

    assert tia_loss(trace).item() == pytest.approx(1.0, abs=1e-12)


def test_mma_loss_pinned_value():
    trace = _trace(
        np.zeros((2, 2)),
        np.zeros((2, 2)),
        pooled_a=np.array([1.0, 0.0]),
        pooled_v=np.array([1.0, 1.0]),
    )

    assert mma_loss(trace).item() == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-12)


def test_composite_objective_matches_finite_differences(model, sample, rng):
    clip = sample.replace(x_v=sample.x_v[:2], x_a=sample.x_a[:2])
    cfg = AttackConfig.for_method("TMA", n_copies=2)
    plans = [
        IDENTITY_PLAN,
        make_plan("blur", {"kernel": (0.25, 0.5, 0.25)}, "both_sync", 2, rng),
    ]
    point = [
        rng.uniform(-EPS, EPS, size=clip.x_v.shape),
        rng.uniform(-EPS, EPS, size=clip.x_a.shape),
    ]

    def objective(delta_v, delta_a):
        return attack_objective([model], clip, delta_v, delta_a, cfg, plans)

    report = finite_difference_check(objective, point, h=1e-7)

    assert report.passed, report.max_rel_err
    assert all(np.abs(grad).sum() > 0 for grad in report.analytic)


def test_objective_gradient_flows_to_both_modalities(model, sample, attack_config):
    delta_v = TensorNode.variable(np.zeros_like(sample.x_v))
    delta_a = TensorNode.variable(np.zeros_like(sample.x_a))

    backward(attack_objective([model], sample, delta_v, delta_a, attack_config))

    assert np.abs(delta_v.grad).sum() > 0
    assert np.abs(delta_a.grad).sum() > 0


def test_alignment_methods_reject_unequal_feature_dims(geometry, sample):
    spec = ModelSpec(**{**geometry, "fusion": "concat", "audio_feature_dim": 4})
    model = build_model(spec, seed=0)
    budget = Budget(steps=2)

    for method in ("MMA", "TMA"):
        with pytest.raises(ValueError, match="feature dims"):
            run_attack([model], sample, AttackConfig.for_method(method, budget=budget))
    with pytest.raises(ValueError, match="feature dims"):
        craft_universal(
            model,
            sample,
            segment_and_sample(sample, 2, 0.25, seed=0),
            AttackConfig(budget=budget),
            seed=0,
        )

    # the cosine term is the only one that needs equal dims
    result = run_attack([model], sample, AttackConfig.for_method("TIA", budget=budget))
    assert result.delta_v.shape == sample.x_v.shape
    with pytest.raises(ValueError):
        check_surrogates([], AttackConfig())


@pytest.mark.parametrize(
    "method", ["FGSM", "IFGSM", "MIFGSM", "NIFGSM", "TIA", "MMA", "TMA"]
)
def test_run_attack_respects_budget(trained_model, sample, attack_config, method):
    cfg = attack_config.with_method(method)

    result = run_attack([trained_model], sample, cfg)

    eps_v, eps_a = cfg.budget.epsilons
    assert np.abs(result.delta_v).max() <= eps_v
    assert np.abs(result.delta_a).max() <= eps_a
    assert result.adv_v.min() >= 0.0 and result.adv_v.max() <= 1.0
    assert result.adv_a.min() >= 0.0 and result.adv_a.max() <= 1.0
    assert len(result.objective_trace) == cfg.budget.steps
    assert 1 <= result.best_iteration <= cfg.budget.steps


def test_run_attack_is_deterministic(trained_model, sample, attack_config):
    first = run_attack([trained_model], sample, attack_config)
    second = run_attack([trained_model], sample, attack_config)

    np.testing.assert_array_equal(first.delta_v, second.delta_v)
    np.testing.assert_array_equal(first.delta_a, second.delta_a)


def test_zero_budget_leaves_clip_unchanged(trained_model, sample, attack_config):
    cfg = replace(attack_config, budget=attack_config.budget.with_epsilon(0.0))

    result = run_attack([trained_model], sample, cfg)

    np.testing.assert_array_equal(result.adv_v, sample.x_v)
    np.testing.assert_array_equal(result.adv_a, sample.x_a)
    assert result.linf == (0.0, 0.0)


def _correct_clips(model, dataset):
    correct = predict(model, dataset) == dataset.y
    return [dataset[int(i)] for i in np.flatnonzero(correct)]


def test_default_budget_fools_white_box(trained_model, eval_set, splits):
    cfg = AttackConfig(method="TMA", budget=Budget(steps=10), seed=0)
    partners = list(splits.train)[:4]
    clips = _correct_clips(trained_model, eval_set)
    assert len(clips) >= 5

    outcomes = [
        run_attack([trained_model], clip, cfg, partners).success for clip in clips
    ]

    assert np.mean(outcomes) >= 0.95


def test_attack_gradient_reaches_inputs_of_trained_model(trained_model, eval_set):
    clip = eval_set[0]
    cfg = AttackConfig.for_method("IFGSM")
    delta_v = TensorNode.variable(np.zeros_like(clip.x_v))
    delta_a = TensorNode.variable(np.zeros_like(clip.x_a))

    clean = attack_objective([trained_model], clip, delta_v, delta_a, cfg)
    backward(clean)
    result = run_attack([trained_model], clip, cfg)

    assert np.abs(delta_v.grad).max() > 0
    assert np.abs(delta_a.grad).max() > 0
    assert result.objective_trace.max() > clean.item()


def test_white_box_success_is_monotone_in_steps(trained_model, eval_set):
    steps = (1, 2, 5, 10)
    budget = Budget(eps_v=4 / 255, eps_a=4 / 255)

    for clip in eval_set:
        outcomes = [
            run_attack(
                [trained_model],
                clip,
                AttackConfig.for_method("IFGSM", budget=replace(budget, steps=k)),
            ).success
            for k in steps
        ]
        assert outcomes == sorted(outcomes)


@pytest.mark.slow
def test_default_budget_fools_every_grid_model():
    splits = generate_dataset(GenConfig())
    grid, _ = train_grid(model_grid(0), splits.train)
    partners = list(splits.train)[:8]

    for model_id, model in grid.items():
        clips = _correct_clips(model, splits.test)
        outcomes = [
            run_attack([model], clip, AttackConfig(), partners).success
            for clip in clips
        ]
        assert np.mean(outcomes) >= 0.95, model_id


def test_run_attack_records_transfer(trained_model, small_grid, sample, attack_config):
    victims = list(small_grid.values())

    result = run_attack([trained_model], sample, attack_config, victims=victims)

    assert set(result.transfer) == {"VsA", "RcR"}


@pytest.mark.parametrize("method, term", [("TIA", tia_loss), ("MMA", mma_loss)])
def test_auxiliary_term_is_lower_than_under_ifgsm(
    trained_model, splits, method, term
):
    clips, partners = list(splits.train)[:20], list(splits.train)[20:]
    budget = Budget(steps=5)

    def mean_term(cfg):
        values = []
        for clip in clips:
            result = run_attack([trained_model], clip, cfg, partners)
            trace = forward(trained_model, result.adv_v, result.adv_a)
            values.append(term(trace).item())
        return float(np.mean(values))

    lowered = mean_term(AttackConfig.for_method(method, budget=budget))
    baseline = mean_term(AttackConfig.for_method("IFGSM", budget=budget))

    assert lowered < baseline


def test_tma_transfers_at_least_as_well_as_fgsm(trained_pair, eval_set, splits):
    configs = [AttackConfig.for_method("FGSM"), AttackConfig(method="TMA")]

    table = transfer_matrix(trained_pair, eval_set, configs, list(splits.train)[:4])

    summary = summarize_transfer(table).set_index("method")
    assert summary.loc["TMA", "whitebox_asr"] >= 0.95
    assert summary.loc["TMA", "blackbox_asr"] >= summary.loc["FGSM", "blackbox_asr"]


def test_transfer_matrix_layout(small_grid, splits, attack_config):
    configs = [attack_config.with_method("FGSM"), attack_config.with_method("TMA")]

    table = transfer_matrix(small_grid, splits.test, configs)

    assert list(table.columns) == TRANSFER_COLUMNS
    assert len(table) == 2 * 2 * 2
    matrix = asr_matrix(table, "TMA")
    assert matrix.shape == (2, 2)
    summary = summarize_transfer(table)
    assert list(summary["method"]) == ["FGSM", "TMA"]
    assert {"whitebox_asr", "blackbox_asr", "mean_cosine"} <= set(summary.columns)


def test_ensemble_attack_excludes_victim(small_grid, splits, attack_config):
    row = ensemble_attack(small_grid, "VsA", splits.test, attack_config)

    assert row["surrogate"].iloc[0] == "RcR"
    assert row["victim"].iloc[0] == "VsA"
    with pytest.raises(KeyError):
        ensemble_attack(small_grid, "XxX", splits.test, attack_config)


def test_rank_correlation():
    table = pd.DataFrame(
        {
            "method": ["a", "b", "c"],
            "mean_cosine": [0.9, 0.5, 0.1],
            "blackbox_asr": [0.1, 0.2, 0.3],
        }
    )

    # lower cosine goes with higher ASR
    assert rank_correlation(table) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rank_correlation(table.head(1))


def test_cosine_vs_asr_reuses_transfer_table(small_grid, splits, attack_config):
    configs = [attack_config.with_method("FGSM"), attack_config.with_method("TMA")]
    transfer = transfer_matrix(small_grid, splits.test, configs)

    table = cosine_vs_asr(small_grid, splits.test, configs, transfer=transfer)

    assert list(table.columns) == ["method", "mean_cosine", "blackbox_asr"]
    with pytest.raises(ValueError):
        cosine_vs_asr(small_grid, splits.test, configs[:1], transfer=transfer)


def test_iteration_ablation_skips_fgsm(small_grid, splits, attack_config):
    table = iteration_ablation(
        small_grid,
        splits.test.head(2),
        attack_config,
        steps=(1, 2),
        methods=("FGSM", "IFGSM"),
    )

    assert list(table["method"]) == ["IFGSM", "IFGSM"]
    assert list(table["K"]) == [1, 2]

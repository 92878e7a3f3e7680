import math
import threading
from dataclasses import replace

import numpy as np
import pytest

from pyavrobust.attacks.config import AttackConfig, Budget
from pyavrobust.attacks.evaluation import adversarial_dataset, craft_adversarial
from pyavrobust.avmodels.network import forward
from pyavrobust.avmodels.training import TrainConfig, train_clean
from pyavrobust.defense.ablations import (
    ABLATION_COLUMNS,
    pass_comparison,
    sampling_ablation,
    scheduler_ablation,
)
from pyavrobust.defense.curriculum import (
    CurriculumState,
    SchedulerConfig,
    phase,
    schedule,
)
from pyavrobust.defense.training import (
    LOG_COLUMNS,
    DefenseConfig,
    adversarial_train,
    evaluate_defense,
    training_budget,
)
from pyavrobust.defense.universal import (
    PassCounter,
    Segment,
    UniversalPerturbation,
    craft_universal,
    perturb,
    propagate,
    segment_and_sample,
    within_budget,
)
from pyavrobust.tensorcore import primitives as P

INNER = AttackConfig(method="TMA", budget=Budget(steps=5), n_copies=1, seed=0)


def test_segment_and_sample_counts():
    segments = segment_and_sample(8, n_segments=2, ratio=0.5, seed=0)

    assert [(s.start, s.stop) for s in segments] == [(0, 4), (4, 8)]
    assert [len(s.sampled) for s in segments] == [2, 2]
    for segment in segments:
        assert all(segment.start <= t < segment.stop for t in segment.sampled)
        assert list(segment.sampled) == sorted(set(segment.sampled))


def test_segment_and_sample_uneven_split():
    segments = segment_and_sample(10, n_segments=3, ratio=0.15, seed=1)

    assert [s.length for s in segments] == [4, 3, 3]
    # at least one frame per segment
    assert all(len(s.sampled) == math.ceil(0.15 * s.length) for s in segments)


@pytest.mark.parametrize("n_segments, ratio", [(0, 0.5), (9, 0.5), (2, 0.0), (2, 1.5)])
def test_segment_and_sample_validation(n_segments, ratio):
    with pytest.raises(ValueError):
        segment_and_sample(8, n_segments, ratio, seed=0)


def test_propagate_copies_segment_perturbation():
    segments = tuple(segment_and_sample(8, 2, 0.25, seed=0))
    delta_v = np.stack([np.full((1, 8, 8), 0.01), np.full((1, 8, 8), -0.02)])
    delta_a = np.stack([np.full(8, 0.03), np.full(8, -0.04)])

    full_v, full_a = propagate(UniversalPerturbation(delta_v, delta_a, segments), 8)

    for t in range(4):
        np.testing.assert_array_equal(full_v[t], delta_v[0])
        np.testing.assert_array_equal(full_a[t], delta_a[0])
    for t in range(4, 8):
        np.testing.assert_array_equal(full_v[t], delta_v[1])
        np.testing.assert_array_equal(full_a[t], delta_a[1])


def test_propagate_rejects_gaps():
    segments = (Segment(0, 3, np.array([0])), Segment(4, 8, np.array([5])))
    perturbation = UniversalPerturbation(
        np.zeros((2, 1, 8, 8)), np.zeros((2, 8)), segments
    )

    with pytest.raises(ValueError):
        propagate(perturbation, 8)


def test_craft_universal_budget_and_passes(trained_model, sample):
    segments = segment_and_sample(sample, 2, 0.25, seed=0)
    counter = PassCounter()

    perturbation = craft_universal(
        trained_model, sample, segments, INNER, seed=0, counter=counter
    )

    assert perturbation.delta_v.shape == (2, 1, 8, 8)
    assert perturbation.delta_a.shape == (2, 8)
    assert within_budget(perturbation.delta_v, INNER.budget.eps_v)
    assert within_budget(perturbation.delta_a, INNER.budget.eps_a)
    # T' = 2 sampled frames, K = 5 iterations
    assert counter.forward_frames == 10
    assert counter.backward_frames == 10

    adversarial = perturb(sample, perturbation)
    assert np.abs(adversarial.x_v - sample.x_v).max() <= INNER.budget.eps_v + 1e-12
    assert adversarial.y == sample.y


def test_per_frame_crafting_costs_more(trained_model, sample):
    counter = PassCounter()
    segments = segment_and_sample(sample, 8, 1.0, seed=0)

    craft_universal(trained_model, sample, segments, INNER, seed=0, counter=counter)

    assert counter.forward_frames == 40


def test_segments_get_their_own_perturbation(trained_model, sample):
    segments = segment_and_sample(sample, 2, 0.5, seed=0)

    perturbation = craft_universal(trained_model, sample, segments, INNER, seed=0)
    full_v, full_a = propagate(perturbation, sample.n_frames)

    assert not np.array_equal(perturbation.delta_v[0], perturbation.delta_v[1])
    assert not np.array_equal(perturbation.delta_a[0], perturbation.delta_a[1])
    for index, segment in enumerate(segments):
        for t in range(segment.start, segment.stop):
            np.testing.assert_array_equal(full_v[t], perturbation.delta_v[index])
            np.testing.assert_array_equal(full_a[t], perturbation.delta_a[index])


def test_craft_universal_with_masking_and_dropout(trained_model, sample):
    segments = segment_and_sample(sample, 2, 0.5, seed=0)

    first = craft_universal(
        trained_model, sample, segments, INNER, seed=3, rho_x=0.5, rho_f=0.2, n_steps=2
    )
    second = craft_universal(
        trained_model, sample, segments, INNER, seed=3, rho_x=0.5, rho_f=0.2, n_steps=2
    )

    np.testing.assert_array_equal(first.delta_v, second.delta_v)
    np.testing.assert_array_equal(first.delta_a, second.delta_a)


def test_pass_counter_is_thread_safe():
    counter = PassCounter()

    def work():
        for _ in range(1000):
            counter.record(forward=2, backward=1)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    assert (counter.forward_frames, counter.backward_frames) == (8000, 4000)
    with pytest.raises(ValueError):
        counter.record(forward=-1)


def test_cyclic_schedule():
    cfg = SchedulerConfig(kind="cyclic", lo=0.05, hi=0.20, period=10, k_lo=2, k_hi=5)

    start = schedule(CurriculumState(step=0, total_steps=100), cfg)
    middle = schedule(CurriculumState(step=5, total_steps=100), cfg)
    wrapped = schedule(CurriculumState(step=10, total_steps=100), cfg)

    assert start.rho_x == pytest.approx(0.05)
    assert start.n_attack_steps == 2
    assert middle.rho_x == pytest.approx(0.20)
    assert middle.n_attack_steps == 5
    assert wrapped.rho_x == pytest.approx(0.05)
    assert start.rho_f == start.rho_x


def test_linear_and_cosine_endpoints():
    for kind in ("linear", "cosine"):
        cfg = SchedulerConfig(kind=kind, lo=0.05, hi=0.20)
        first = schedule(CurriculumState(step=0, total_steps=11), cfg)
        last = schedule(CurriculumState(step=10, total_steps=11), cfg)
        assert first.rho_x == pytest.approx(0.05)
        assert last.rho_x == pytest.approx(0.20)

    assert phase(5, 11, SchedulerConfig(kind="cosine")) == pytest.approx(0.5)


def test_constant_and_none_schedules():
    state = CurriculumState(step=7, total_steps=20)
    constant = schedule(state, SchedulerConfig(kind="constant", value=0.1))
    none = schedule(state, SchedulerConfig(kind="none"))

    assert (constant.rho_x, constant.rho_f) == (0.1, 0.1)
    assert constant.n_attack_steps == 5
    assert (none.rho_x, none.rho_f) == (0.0, 0.0)
    assert none.n_attack_steps == 5


def test_schedule_targets():
    state = CurriculumState(step=5)
    data_only = schedule(state, SchedulerConfig(kind="constant", target="data"))
    model_only = schedule(state, SchedulerConfig(kind="constant", target="model"))

    assert (data_only.rho_x, data_only.rho_f) == (0.2, 0.0)
    assert (model_only.rho_x, model_only.rho_f) == (0.0, 0.2)


def _trace(cfg, total_steps=40):
    state, rows = CurriculumState(total_steps=total_steps), []
    for _ in range(total_steps):
        state = schedule(state, cfg)
        rows.append((state.rho_x, state.rho_f, state.n_attack_steps))
        state = state.advance()
    return np.array(rows)


@pytest.mark.parametrize("kind", ["none", "constant", "cyclic", "linear", "cosine"])
def test_schedule_keeps_steps_in_range(kind):
    cfg = SchedulerConfig(kind=kind, period=6, k_lo=2, k_hi=7)

    k = _trace(cfg)[:, 2]

    assert (k >= cfg.k_lo).all() and (k <= cfg.k_hi).all()
    assert (k >= 1).all()


def test_cyclic_schedule_repeats_every_period():
    cfg = SchedulerConfig(kind="cyclic", lo=0.05, hi=0.25, period=8, k_lo=1, k_hi=6)

    trace = _trace(cfg)

    np.testing.assert_allclose(trace[8:], trace[:-8])
    assert trace[:, 0].min() == pytest.approx(0.05)
    assert trace[:, 0].max() == pytest.approx(0.25)
    # rises for half a period, then falls
    assert (np.diff(trace[:5, 0]) > 0).all() and (np.diff(trace[4:9, 0]) < 0).all()


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_ramped_schedules_are_monotone(kind):
    trace = _trace(SchedulerConfig(kind=kind, lo=0.05, hi=0.2, k_lo=1, k_hi=9))

    assert (np.diff(trace[:, 0]) >= 0).all()
    assert (np.diff(trace[:, 2]) >= 0).all()
    assert trace[0, 0] == pytest.approx(0.05) and trace[-1, 0] == pytest.approx(0.2)
    assert (trace[0, 2], trace[-1, 2]) == (1, 9)


def test_constant_schedule_is_flat():
    trace = _trace(SchedulerConfig(kind="constant", value=0.15, k_lo=2, k_hi=4))

    assert (trace == trace[0]).all()
    assert tuple(trace[0]) == (0.15, 0.15, 4)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "step"},
        {"lo": 0.3, "hi": 0.2},
        {"period": 1},
        {"k_lo": 6},
        {"target": "audio"},
    ],
)
def test_scheduler_validation(kwargs):
    with pytest.raises(ValueError):
        SchedulerConfig(**kwargs)


def test_defense_config_vanilla():
    cfg = DefenseConfig.vanilla(8, eval_samples=0)

    assert (cfg.n_segments, cfg.sampling_ratio, cfg.scheduler.kind) == (8, 1.0, "none")
    with pytest.raises(ValueError):
        DefenseConfig(sampling_ratio=0.0)


def test_zero_budget_matches_clean_training(model, splits):
    training = TrainConfig(epochs=2, batch=8, seed=1)
    cfg = training_budget(
        DefenseConfig(attack=INNER, training=training, eval_samples=0), eps=0.0
    )

    defended = adversarial_train(model, splits.train, cfg)
    clean, _ = train_clean(model, splits.train, training)

    for name in clean.params:
        np.testing.assert_array_equal(defended.model.params[name], clean.params[name])


def test_adversarial_train_logs(model, splits):
    cfg = DefenseConfig(
        n_segments=2,
        sampling_ratio=0.25,
        attack=replace(INNER, budget=Budget(steps=2)),
        scheduler=SchedulerConfig(kind="cyclic", period=2, k_lo=1, k_hi=2),
        training=TrainConfig(epochs=2, batch=16, seed=0),
        eval_samples=2,
    )

    result = adversarial_train(model, splits.train, cfg, eval_set=splits.test)

    assert list(result.log.columns) == LOG_COLUMNS
    assert len(result.log) == 2
    assert result.log["robust_acc"].notna().all()
    # 21 clips in batches of 16: two steps per epoch
    assert list(result.schedule_trace["step"]) == [0, 1, 2, 3]
    assert list(result.schedule_trace["k"]) == [1, 2, 1, 2]
    assert result.log["fwd_passes"].is_monotonic_increasing
    assert result.counter.forward_frames == result.log["fwd_passes"].iloc[-1]


def test_adversarial_train_rejects_empty(model, splits):
    with pytest.raises(ValueError):
        adversarial_train(model, splits.train.subset([]))


def test_evaluate_defense_layout(trained_model, splits):
    attacks = [INNER.with_method("IFGSM"), INNER.with_method("FGSM")]

    table = evaluate_defense(trained_model, attacks, splits.test.head(2))

    assert list(table.columns) == [
        "model",
        "method",
        "epsilon_v",
        "epsilon_a",
        "K",
        "clean_acc",
        "robust_acc",
    ]
    assert list(table["method"]) == ["IFGSM", "FGSM"]
    assert list(table["K"]) == [5, 1]


def _adversarial_loss(model, dataset, attack):
    results = craft_adversarial([model], dataset, attack)
    adversarial = adversarial_dataset(dataset, results)
    logits = forward(model, adversarial.x_v, adversarial.x_a).logits
    return P.softmax_cross_entropy(logits, adversarial.y).item()


def test_curriculum_training_beats_undefended_model(trained_model, splits, eval_set):
    cfg = DefenseConfig(
        n_segments=2,
        sampling_ratio=0.25,
        attack=INNER,
        scheduler=SchedulerConfig(kind="cyclic", period=4, k_lo=2, k_hi=5),
        training=TrainConfig(epochs=10, batch=8, seed=0),
        eval_samples=0,
    )
    attack = AttackConfig.for_method(
        "IFGSM", budget=Budget(eps_v=4 / 255, eps_a=4 / 255)
    )

    defended = adversarial_train(trained_model, splits.train, cfg).model
    before = evaluate_defense(trained_model, [attack], eval_set)
    after = evaluate_defense(defended, [attack], eval_set)

    assert after["robust_acc"].iloc[0] >= before["robust_acc"].iloc[0]
    assert _adversarial_loss(defended, eval_set, attack) < _adversarial_loss(
        trained_model, eval_set, attack
    )


def test_pass_comparison_ratio(model, splits):
    cfg = DefenseConfig(
        n_segments=2,
        sampling_ratio=0.25,
        attack=INNER,
        scheduler=SchedulerConfig(kind="cyclic", k_lo=1, k_hi=3),
        training=TrainConfig(epochs=1, batch=32),
    )

    table = pass_comparison(model, splits.train.head(4), cfg)

    assert list(table["mode"]) == ["universal", "per_frame"]
    # K = 3 for both runs: 2 frames against 8 frames per clip
    assert list(table["fwd_passes"]) == [4 * 2 * 3, 4 * 8 * 3]
    assert table["ratio"].iloc[0] == pytest.approx(0.25)


def test_ablation_tables(model, splits):
    cfg = DefenseConfig(
        attack=replace(INNER, budget=Budget(steps=1)),
        scheduler=SchedulerConfig(k_lo=1, k_hi=1),
        training=TrainConfig(epochs=1, batch=32),
        eval_samples=0,
    )
    train, test = splits.train.head(4), splits.test.head(2)

    sampling = sampling_ablation(model, train, test, cfg, ratios=(0.25, 0.5))
    schedulers = scheduler_ablation(model, train, test, cfg, kinds=("none", "cyclic"))

    assert list(sampling.columns) == ABLATION_COLUMNS
    assert list(sampling["value"]) == [0.25, 0.5]
    assert sampling["fwd_passes"].iloc[0] < sampling["fwd_passes"].iloc[1]
    assert list(schedulers["value"]) == ["none", "cyclic"]

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from pyavrobust.attacks.config import AttackConfig
from pyavrobust.attacks.evaluation import adversarial_dataset, craft_adversarial
from pyavrobust.avmodels.network import AVModel, accuracy, predict
from pyavrobust.avmodels.training import SGD, TrainConfig, minibatches, sgd_step
from pyavrobust.defense.curriculum import CurriculumState, SchedulerConfig, schedule
from pyavrobust.defense.universal import (
    PassCounter,
    craft_universal,
    perturb,
    segment_and_sample,
)
from pyavrobust.parallel import derive_seed, parallel_map
from pyavrobust.synthav.sample import AVDataset, AVSample

LOG_COLUMNS = [
    "epoch",
    "clean_acc",
    "robust_acc",
    "rho_x",
    "rho_f",
    "k",
    "fwd_passes",
    "bwd_passes",
]


@dataclass(frozen=True)
class DefenseConfig:
    """
    Curriculum adversarial training settings.

    Attributes
    -----------
    n_segments: int = 2
        S, segments per clip.
    sampling_ratio: float = 0.15
        alpha in (0, 1], fraction of each segment's frames used for crafting.
    attack: AttackConfig
        Inner maximization (TMA objective by default); its budget sets the
        radius and step sizes.
    scheduler: SchedulerConfig
        Drives rho_x, rho_f and the number of inner attack steps.
    training: TrainConfig
        Outer SGD settings (epochs, lr, batch, momentum, shuffle seed).
    eval_samples: int = 16
        Clips of the evaluation split attacked to log robust accuracy each
        epoch; 0 disables it.
    """

    n_segments: int = 2
    sampling_ratio: float = 0.15
    attack: AttackConfig = field(default_factory=AttackConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval_samples: int = 16

    def __post_init__(self) -> None:
        if self.n_segments < 1:
            raise ValueError(f"n_segments must be >= 1, got {self.n_segments}")
        if not 0.0 < self.sampling_ratio <= 1.0:
            raise ValueError(
                f"sampling_ratio must lie in (0, 1], got {self.sampling_ratio}"
            )
        if self.eval_samples < 0:
            raise ValueError(f"eval_samples must be >= 0, got {self.eval_samples}")

    @classmethod
    def vanilla(cls, n_frames: int, **kwargs) -> "DefenseConfig":
        """Per-frame adversarial training: S = T, alpha = 1, no curriculum."""
        return cls(
            n_segments=n_frames,
            sampling_ratio=1.0,
            scheduler=SchedulerConfig(kind="none"),
            **kwargs,
        )


@dataclass(frozen=True)
class DefenseResult:
    """
    Attributes
    -----------
    model: AVModel
        Robust model.
    log: pd.DataFrame
        Per epoch, with ``LOG_COLUMNS``.
    schedule_trace: pd.DataFrame
        Per step: step, rho_x, rho_f, k.
    counter: PassCounter
        Crafting cost of the whole run.
    """

    model: AVModel
    log: pd.DataFrame
    schedule_trace: pd.DataFrame
    counter: PassCounter


def _craft_batch(
    model: AVModel,
    batch: AVDataset,
    cfg: DefenseConfig,
    state: CurriculumState,
    counter: PassCounter,
) -> AVDataset:
    """Segment-universal adversarial version of every clip in the batch."""

    def work(index: int) -> AVSample:
        sample = batch[index]
        seed = derive_seed(cfg.training.seed, state.step, index)
        segments = segment_and_sample(sample, cfg.n_segments, cfg.sampling_ratio, seed)
        perturbation = craft_universal(
            model,
            sample,
            segments,
            cfg.attack,
            seed=seed,
            rho_x=state.rho_x,
            rho_f=state.rho_f,
            n_steps=state.n_attack_steps,
            counter=counter,
        )
        return perturb(sample, perturbation)

    return AVDataset.from_samples(parallel_map(work, range(len(batch))))


def robust_accuracy(
    model: AVModel,
    dataset: AVDataset,
    attack: AttackConfig,
    partners: Sequence[AVSample] = (),
) -> float:
    """Accuracy on white-box adversarial versions of every clip."""
    if len(dataset) == 0:
        return float("nan")
    results = craft_adversarial([model], dataset, attack, partners)
    predicted = predict(model, adversarial_dataset(dataset, results))
    return float((predicted == dataset.y).mean())


def adversarial_train(
    model: AVModel,
    dataset: AVDataset,
    cfg: DefenseConfig | None = None,
    eval_set: AVDataset | None = None,
    progress: bool = False,
) -> DefenseResult:
    """
    Train a copy of ``model`` on segment-universal adversarial clips.

    Per batch: read the curriculum, craft one perturbation per segment of each
    clip (frame masking rho_x and fusion dropout rho_f active while crafting),
    propagate it over the segment and take one SGD step on the perturbed clips
    with dropout off. The shuffle order and optimizer match ``train_clean``,
    so a zero budget reproduces clean training.

    Parameters
    ----------
    model:
        Starting point (fresh or clean-pretrained); left untouched.
    dataset:
        Training split, non-empty.
    cfg:
        Defaults to ``DefenseConfig()``.
    eval_set:
        Split for the per-epoch clean and robust accuracy (robust on its first
        ``cfg.eval_samples`` clips, white-box ``cfg.attack``).
    progress:
        Show a progress bar over epochs.

    Returns
    -------
    result: DefenseResult

    Raises
    -------
    DivergenceError:
        Non-finite loss; carries the global step index.
    """
    cfg = cfg or DefenseConfig()
    if len(dataset) == 0:
        raise ValueError("adversarial_train needs a non-empty dataset")
    trained = model.copy()
    optimizer = SGD(trained.params, cfg.training.lr, cfg.training.momentum)
    rng = np.random.default_rng(cfg.training.seed)
    counter = PassCounter()

    batches_per_epoch = -(-len(dataset) // cfg.training.batch)
    state = CurriculumState(total_steps=max(1, cfg.training.epochs * batches_per_epoch))
    trace: List[dict] = []
    rows: List[dict] = []
    epochs = tqdm(
        range(cfg.training.epochs), desc="adversarial training", disable=not progress
    )
    for epoch in epochs:
        for index in minibatches(len(dataset), cfg.training.batch, rng):
            state = schedule(state, cfg.scheduler)
            batch = _craft_batch(trained, dataset.subset(index), cfg, state, counter)
            sgd_step(trained, optimizer, batch.x_v, batch.x_a, batch.y, state.step)
            trace.append(
                {
                    "step": state.step,
                    "rho_x": state.rho_x,
                    "rho_f": state.rho_f,
                    "k": state.n_attack_steps,
                }
            )
            state = state.advance()
        rows.append(
            _epoch_row(epoch + 1, trained, dataset, eval_set, cfg, trace[-1], counter)
        )
        logging.info(
            f"Adversarial training epoch {epoch + 1}: clean acc {rows[-1]['clean_acc']:.3f}, "
            f"robust acc {rows[-1]['robust_acc']:.3f}, rho {trace[-1]['rho_x']:.3f}, "
            f"k {trace[-1]['k']}, {counter.forward_frames} crafting frames"
        )
    return DefenseResult(
        model=trained,
        log=pd.DataFrame(rows, columns=LOG_COLUMNS),
        schedule_trace=pd.DataFrame(trace, columns=["step", "rho_x", "rho_f", "k"]),
        counter=counter,
    )


def _epoch_row(
    epoch: int,
    model: AVModel,
    dataset: AVDataset,
    eval_set: Optional[AVDataset],
    cfg: DefenseConfig,
    last: dict,
    counter: PassCounter,
) -> dict:
    split = dataset if eval_set is None else eval_set
    robust = float("nan")
    if eval_set is not None and cfg.eval_samples > 0:
        robust = robust_accuracy(model, eval_set.head(cfg.eval_samples), cfg.attack)
    return {
        "epoch": epoch,
        "clean_acc": accuracy(model, split),
        "robust_acc": robust,
        "rho_x": last["rho_x"],
        "rho_f": last["rho_f"],
        "k": last["k"],
        "fwd_passes": counter.forward_frames,
        "bwd_passes": counter.backward_frames,
    }


def evaluate_defense(
    model: AVModel,
    attacks: Sequence[AttackConfig],
    test_set: AVDataset,
    partners: Sequence[AVSample] = (),
) -> pd.DataFrame:
    """
    Clean and robust accuracy of ``model`` under each white-box attack.

    Returns
    -------
    table: pd.DataFrame
        Columns model, method, epsilon_v, epsilon_a, K, clean_acc, robust_acc.
    """
    clean = accuracy(model, test_set)
    rows = []
    for attack in attacks:
        robust = robust_accuracy(model, test_set, attack, partners)
        rows.append(
            {
                "model": model.model_id,
                "method": attack.method,
                "epsilon_v": attack.budget.eps_v,
                "epsilon_a": attack.budget.eps_a,
                "K": attack.budget.steps,
                "clean_acc": clean,
                "robust_acc": robust,
            }
        )
        logging.info(
            f"{model.model_id} under {attack.method}: robust acc {robust:.3f} (clean {clean:.3f})"
        )
    return pd.DataFrame(
        rows,
        columns=[
            "model",
            "method",
            "epsilon_v",
            "epsilon_a",
            "K",
            "clean_acc",
            "robust_acc",
        ],
    )


def training_budget(cfg: DefenseConfig, eps: float) -> DefenseConfig:
    """``cfg`` with the inner attack radius set to ``eps`` in both modalities."""
    attack = replace(cfg.attack, budget=cfg.attack.budget.with_epsilon(eps))
    return replace(cfg, attack=attack)
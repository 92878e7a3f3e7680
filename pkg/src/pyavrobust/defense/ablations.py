from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

import pandas as pd

from pyavrobust.attacks.config import AttackConfig
from pyavrobust.avmodels.network import AVModel, accuracy
from pyavrobust.defense.training import (
    DefenseConfig,
    adversarial_train,
    robust_accuracy,
)
from pyavrobust.synthav.sample import AVDataset, AVSample

SAMPLING_RATIOS = (0.05, 0.15, 0.25)
SCHEDULER_KINDS = ("none", "cyclic", "linear", "cosine")
ABLATION_COLUMNS = [
    "variant",
    "value",
    "clean_acc",
    "robust_acc",
    "fwd_passes",
    "bwd_passes",
]


def _run_variant(
    model: AVModel,
    train_set: AVDataset,
    test_set: AVDataset,
    cfg: DefenseConfig,
    attack: AttackConfig,
    variant: str,
    value,
    partners: Sequence[AVSample],
) -> dict:
    result = adversarial_train(model, train_set, cfg)
    robust = robust_accuracy(result.model, test_set, attack, partners)
    row = {
        "variant": variant,
        "value": value,
        "clean_acc": accuracy(result.model, test_set),
        "robust_acc": robust,
        "fwd_passes": result.counter.forward_frames,
        "bwd_passes": result.counter.backward_frames,
    }
    logging.info(
        f"{variant}={value}: robust acc {robust:.3f}, "
        f"{row['fwd_passes']} forward crafting frames"
    )
    return row


def sampling_ablation(
    model: AVModel,
    train_set: AVDataset,
    test_set: AVDataset,
    cfg: DefenseConfig,
    attack: AttackConfig | None = None,
    ratios: Sequence[float] = SAMPLING_RATIOS,
    partners: Sequence[AVSample] = (),
) -> pd.DataFrame:
    """
    Robust accuracy and crafting cost against the segment sampling ratio.

    Parameters
    ----------
    model:
        Starting point of every run.
    train_set, test_set:
        Training split and the split attacked after training.
    cfg:
        Base defense; only ``sampling_ratio`` changes between runs.
    attack:
        White-box evaluation attack, ``cfg.attack`` by default.
    ratios:
        alpha values.

    Returns
    -------
    table: pd.DataFrame
        ``ABLATION_COLUMNS`` with variant "alpha".
    """
    attack = attack or cfg.attack
    rows = [
        _run_variant(
            model,
            train_set,
            test_set,
            replace(cfg, sampling_ratio=ratio),
            attack,
            "alpha",
            ratio,
            partners,
        )
        for ratio in ratios
    ]
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def scheduler_ablation(
    model: AVModel,
    train_set: AVDataset,
    test_set: AVDataset,
    cfg: DefenseConfig,
    attack: AttackConfig | None = None,
    kinds: Sequence[str] = SCHEDULER_KINDS,
    partners: Sequence[AVSample] = (),
) -> pd.DataFrame:
    """Robust accuracy per curriculum scheduler; the other scheduler settings are kept."""
    attack = attack or cfg.attack
    rows = [
        _run_variant(
            model,
            train_set,
            test_set,
            replace(cfg, scheduler=replace(cfg.scheduler, kind=kind)),
            attack,
            "scheduler",
            kind,
            partners,
        )
        for kind in kinds
    ]
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def pass_comparison(
    model: AVModel,
    train_set: AVDataset,
    cfg: DefenseConfig,
) -> pd.DataFrame:
    """
    Crafting cost of segment-universal training against per-frame training.

    Both runs use the same epochs, batches and a fixed inner step count
    (``scheduler`` "none" so K = k_hi in both), so the ratio of counted frames
    only reflects the crafting clip length.

    Returns
    -------
    table: pd.DataFrame
        Columns mode, n_segments, sampling_ratio, fwd_passes, bwd_passes,
        ratio (each row relative to the per-frame run).
    """
    fixed = replace(cfg, scheduler=replace(cfg.scheduler, kind="none"), eval_samples=0)
    vanilla = DefenseConfig.vanilla(
        train_set.x_v.shape[1],
        attack=cfg.attack,
        training=cfg.training,
        eval_samples=0,
    )
    vanilla = replace(vanilla, scheduler=fixed.scheduler)
    rows = []
    for mode, run_cfg in (("universal", fixed), ("per_frame", vanilla)):
        counter = adversarial_train(model, train_set, run_cfg).counter
        rows.append(
            {
                "mode": mode,
                "n_segments": run_cfg.n_segments,
                "sampling_ratio": run_cfg.sampling_ratio,
                "fwd_passes": counter.forward_frames,
                "bwd_passes": counter.backward_frames,
            }
        )
    table = pd.DataFrame(rows)
    table["ratio"] = table["fwd_passes"] / max(int(table["fwd_passes"].iloc[-1]), 1)
    logging.info(
        f"Segment-universal crafting uses {table['ratio'].iloc[0]:.3f} of the per-frame passes."
    )
    return table

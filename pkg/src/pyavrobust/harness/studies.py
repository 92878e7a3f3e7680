from __future__ import annotations

import logging
from dataclasses import replace
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from pyavrobust.attacks.config import AttackConfig
from pyavrobust.attacks.evaluation import summarize_transfer, transfer_matrix
from pyavrobust.avmodels.network import AVModel, predict
from pyavrobust.parallel import derive_seed, parallel_map
from pyavrobust.synthav.corruption import MASK_TARGETS, temporal_mask
from pyavrobust.synthav.sample import AVDataset, AVSample

CORRUPTION_COLUMNS = ["model", "target", "rho", "mask_seed", "accuracy"]


def masked_dataset(
    dataset: AVDataset, ratio: float, target: str, seed: int
) -> AVDataset:
    """``temporal_mask`` on every clip; clip ``i`` uses ``derive_seed(seed, i)``."""
    return AVDataset.from_samples(
        [
            temporal_mask(sample, ratio, target, derive_seed(seed, index))
            for index, sample in enumerate(dataset)
        ]
    )


def corruption_study(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    ratios: Sequence[float] = (0.0, 0.1, 0.2, 0.3),
    targets: Sequence[str] = MASK_TARGETS,
    n_seeds: int = 5,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Clean-model accuracy under temporal masking.

    Parameters
    ----------
    grid:
        Clean-trained models.
    dataset:
        Test split.
    ratios:
        rho values in [0, 1).
    targets:
        Mask targets, see ``temporal_mask``.
    n_seeds:
        Independent mask draws per (target, rho).
    seed:
        Root of the mask seeds; every model sees the same masked clips.

    Returns
    -------
    table: pd.DataFrame
        ``CORRUPTION_COLUMNS``, one row per (model, target, rho, mask seed).
    """
    if len(dataset) == 0:
        raise ValueError("corruption_study needs a non-empty dataset")
    jobs = [
        (target, ratio, draw)
        for target in targets
        for ratio in ratios
        for draw in range(n_seeds)
    ]

    def work(job) -> list:
        target, ratio, draw = job
        masked = masked_dataset(
            dataset, ratio, target, derive_seed(seed, MASK_TARGETS.index(target), draw)
        )
        return [
            {
                "model": model_id,
                "target": target,
                "rho": ratio,
                "mask_seed": draw,
                "accuracy": float((predict(model, masked) == dataset.y).mean()),
            }
            for model_id, model in grid.items()
        ]

    rows = [row for chunk in parallel_map(work, jobs) for row in chunk]
    logging.info(f"Corruption study: {len(jobs)} masked test sets, {len(grid)} models.")
    return pd.DataFrame(rows, columns=CORRUPTION_COLUMNS)


def corruption_summary(table: pd.DataFrame) -> pd.DataFrame:
    """Mean accuracy and its standard error per (target, rho)."""
    grouped = table.groupby(["target", "rho"], sort=False)["accuracy"]
    summary = pd.DataFrame({"accuracy": grouped.mean(), "sem": grouped.sem(ddof=1)})
    return summary.reset_index()


def sync_gap(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    ratio: float,
    n_seeds: int = 5,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Per-clip accuracy loss of synchronous over asynchronous masking.

    Returns
    -------
    table: pd.DataFrame
        Columns model, clip, gap; ``gap`` is the mean (over mask draws) of
        correct-under-async minus correct-under-sync.
    """
    rows = []
    for model_id, model in grid.items():
        correct = {
            "both_sync": np.zeros(len(dataset)),
            "both_async": np.zeros(len(dataset)),
        }
        for target in correct:
            for draw in range(n_seeds):
                draw_seed = derive_seed(seed, MASK_TARGETS.index(target), draw)
                masked = masked_dataset(dataset, ratio, target, draw_seed)
                correct[target] += predict(model, masked) == dataset.y
        gap = (correct["both_async"] - correct["both_sync"]) / n_seeds
        rows.extend({"model": model_id, "clip": i, "gap": g} for i, g in enumerate(gap))
    return pd.DataFrame(rows, columns=["model", "clip", "gap"])


def masked_copy_study(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    cfg: AttackConfig,
    ratios: Sequence[float] = (0.0, 0.1, 0.2, 0.3),
    targets: Sequence[str] = MASK_TARGETS,
    partners: Sequence[AVSample] = (),
    surrogate_ids: Optional[Sequence[str]] = None,
) -> pd.DataFrame:
    """
    Transferability of attacks averaged over temporally masked copies.

    Each (target, rho) attacks with ``cfg`` whose masked copies use that
    target and ratio (rho = 0 is the unmasked baseline).

    Returns
    -------
    table: pd.DataFrame
        Columns target, rho, method, whitebox_asr, asr (black-box).
    """
    rows = []
    for target in targets:
        for ratio in ratios:
            masked_cfg = replace(cfg, mask_ratio=ratio, mask_target=target)
            table = transfer_matrix(
                grid, dataset, [masked_cfg], partners, surrogate_ids
            )
            summary = summarize_transfer(table).iloc[0]
            rows.append(
                {
                    "target": target,
                    "rho": ratio,
                    "method": cfg.method,
                    "whitebox_asr": summary["whitebox_asr"],
                    "asr": summary["blackbox_asr"],
                }
            )
            logging.info(
                f"Masked copies {target} rho={ratio}: black-box ASR {summary['blackbox_asr']:.3f}"
            )
    return pd.DataFrame(
        rows, columns=["target", "rho", "method", "whitebox_asr", "asr"]
    )

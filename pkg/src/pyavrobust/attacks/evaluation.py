from __future__ import annotations

import logging
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from pyavrobust.attacks.config import AttackConfig, AttackResult
from pyavrobust.attacks.pgd import run_attack
from pyavrobust.avmodels.network import AVModel, forward, predict
from pyavrobust.parallel import derive_seed, parallel_map
from pyavrobust.synthav.sample import AVDataset, AVSample
from pyavrobust.tensorcore import primitives as P

TRANSFER_COLUMNS = [
    "method",
    "surrogate",
    "victim",
    "epsilon_v",
    "epsilon_a",
    "K",
    "lambda1",
    "lambda2",
    "asr",
    "mean_cosine",
    "seed",
]


def craft_adversarial(
    surrogates: Sequence[AVModel],
    dataset: AVDataset,
    cfg: AttackConfig,
    partners: Sequence[AVSample] = (),
) -> List[AttackResult]:
    """Attack every clip of ``dataset``; clip ``i`` uses seed ``derive_seed(cfg.seed, i)``."""

    def work(index: int) -> AttackResult:
        return run_attack(
            surrogates,
            dataset[index],
            replace(cfg, seed=derive_seed(cfg.seed, index)),
            partners,
        )

    return parallel_map(work, range(len(dataset)))


def adversarial_dataset(
    dataset: AVDataset, results: Sequence[AttackResult]
) -> AVDataset:
    return AVDataset(
        x_v=np.stack([r.adv_v for r in results]),
        x_a=np.stack([r.adv_a for r in results]),
        y=dataset.y,
    )


def victim_view(
    victim: AVModel, dataset: AVDataset, batch_size: int = 64
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Top-1 predictions and pooled audio/visual cosine of ``victim`` on a split.

    Returns
    -------
    predictions: np.ndarray
        (N,) labels.
    cosine: np.ndarray
        (N,) cosine similarity of the pooled modality features.
    """
    predictions, cosines = [], []
    for start in range(0, len(dataset), batch_size):
        window = slice(start, start + batch_size)
        trace = forward(victim, dataset.x_v[window], dataset.x_a[window])
        predictions.append(trace.logits.values.argmax(axis=1))
        cosines.append(P.cosine_similarity(trace.pooled_a, trace.pooled_v).values)
    if not predictions:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(predictions), np.concatenate(cosines)


def _score_victim(
    victim: AVModel, clean: AVDataset, adversarial: AVDataset
) -> Tuple[float, float, int]:
    """ASR and mean cosine over the clips the victim classifies correctly."""
    eligible = predict(victim, clean) == clean.y
    predictions, cosines = victim_view(victim, adversarial)
    if not eligible.any():
        logging.warning(
            f"No test clip is classified correctly by {victim.model_id}; ASR is undefined."
        )
        return float("nan"), float("nan"), 0
    fooled = predictions[eligible] != clean.y[eligible]
    return float(fooled.mean()), float(cosines[eligible].mean()), int(eligible.sum())


def _row(
    cfg: AttackConfig, surrogate: str, victim: str, asr: float, cosine: float
) -> dict:
    return {
        "method": cfg.method,
        "surrogate": surrogate,
        "victim": victim,
        "epsilon_v": cfg.budget.eps_v,
        "epsilon_a": cfg.budget.eps_a,
        "K": cfg.budget.steps,
        "lambda1": cfg.lambda1,
        "lambda2": cfg.lambda2,
        "asr": asr,
        "mean_cosine": cosine,
        "seed": cfg.seed,
    }


def transfer_matrix(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    configs: Sequence[AttackConfig],
    partners: Sequence[AVSample] = (),
    surrogate_ids: Optional[Sequence[str]] = None,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Attack with every surrogate and score the result on every victim.

    Parameters
    ----------
    grid:
        Trained models keyed by id.
    dataset:
        Test split. Each victim is scored on the clips it classifies
        correctly before the attack.
    configs:
        One attack configuration per method.
    partners:
        Mixup partner pool.
    surrogate_ids:
        Restrict the surrogates (all grid models by default).
    progress:
        Progress bar over (method, surrogate) pairs.

    Returns
    -------
    table: pd.DataFrame
        Long format with ``TRANSFER_COLUMNS``; rows with surrogate == victim
        hold the white-box ASR.
    """
    if len(dataset) == 0:
        raise ValueError("transfer_matrix needs a non-empty dataset")
    surrogate_ids = list(grid) if surrogate_ids is None else list(surrogate_ids)
    rows = []
    jobs = [(cfg, s) for cfg in configs for s in surrogate_ids]
    for cfg, surrogate in tqdm(jobs, desc="transfer matrix", disable=not progress):
        results = craft_adversarial([grid[surrogate]], dataset, cfg, partners)
        adversarial = adversarial_dataset(dataset, results)
        for victim_id, victim in grid.items():
            asr, cosine, _ = _score_victim(victim, dataset, adversarial)
            rows.append(_row(cfg, surrogate, victim_id, asr, cosine))
        logging.info(f"{cfg.method} from {surrogate}: {len(results)} clips attacked.")
    return pd.DataFrame(rows, columns=TRANSFER_COLUMNS)


def asr_matrix(table: pd.DataFrame, method: str) -> pd.DataFrame:
    """Surrogate x victim ASR grid of one method."""
    subset = table[table["method"] == method]
    return subset.pivot(index="surrogate", columns="victim", values="asr")


def summarize_transfer(table: pd.DataFrame) -> pd.DataFrame:
    """Per method: mean white-box ASR, mean black-box ASR and mean black-box cosine."""
    whitebox = table[table["surrogate"] == table["victim"]]
    blackbox = table[table["surrogate"] != table["victim"]]
    summary = pd.DataFrame(
        {
            "whitebox_asr": whitebox.groupby("method", sort=False)["asr"].mean(),
            "blackbox_asr": blackbox.groupby("method", sort=False)["asr"].mean(),
            "mean_cosine": blackbox.groupby("method", sort=False)["mean_cosine"].mean(),
        }
    )
    return summary.reset_index().rename(columns={"index": "method"})


def ensemble_attack(
    grid: Dict[str, AVModel],
    victim_id: str,
    dataset: AVDataset,
    cfg: AttackConfig,
    partners: Sequence[AVSample] = (),
) -> pd.DataFrame:
    """
    Attack the victim with all remaining grid models as one ensemble.

    Returns
    -------
    row: pd.DataFrame
        One row with ``TRANSFER_COLUMNS``; ``surrogate`` joins the ensemble
        ids with "+".

    Raises
    -------
    KeyError:
        ``victim_id`` is not in the grid.
    """
    if victim_id not in grid:
        raise KeyError(f"Unknown victim {victim_id!r}. Choose from {sorted(grid)}")
    surrogate_ids = [m for m in grid if m != victim_id]
    if not surrogate_ids:
        raise ValueError(
            "ensemble_attack needs at least one surrogate besides the victim"
        )
    results = craft_adversarial(
        [grid[m] for m in surrogate_ids], dataset, cfg, partners
    )
    asr, cosine, _ = _score_victim(
        grid[victim_id], dataset, adversarial_dataset(dataset, results)
    )
    logging.info(
        f"{cfg.method} ensemble of {len(surrogate_ids)} against {victim_id}: ASR {asr:.3f}"
    )
    return pd.DataFrame(
        [_row(cfg, "+".join(surrogate_ids), victim_id, asr, cosine)],
        columns=TRANSFER_COLUMNS,
    )


def ensemble_table(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    configs: Sequence[AttackConfig],
    partners: Sequence[AVSample] = (),
    progress: bool = False,
) -> pd.DataFrame:
    """``ensemble_attack`` for every (method, victim) pair."""
    jobs = [(cfg, victim_id) for cfg in configs for victim_id in grid]
    frames = [
        ensemble_attack(grid, victim_id, dataset, cfg, partners)
        for cfg, victim_id in tqdm(jobs, desc="ensemble attacks", disable=not progress)
    ]
    return pd.concat(frames, ignore_index=True)


def clean_cosine(grid: Dict[str, AVModel], dataset: AVDataset) -> float:
    """Mean pooled audio/visual cosine of clean clips over all grid models."""
    return float(
        np.mean([victim_view(model, dataset)[1].mean() for model in grid.values()])
    )


def cosine_vs_asr(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    configs: Sequence[AttackConfig],
    partners: Sequence[AVSample] = (),
    transfer: Optional[pd.DataFrame] = None,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Mean adversarial cross-modal cosine against mean black-box ASR, per method.

    Parameters
    ----------
    configs:
        At least two methods.
    transfer:
        Reuse an existing ``transfer_matrix`` table instead of attacking.

    Returns
    -------
    table: pd.DataFrame
        Columns method, mean_cosine, blackbox_asr; one row per method.
    """
    if len({cfg.method for cfg in configs}) < 2:
        raise ValueError("cosine_vs_asr needs at least two methods")
    if transfer is None:
        transfer = transfer_matrix(grid, dataset, configs, partners, progress=progress)
    methods = [cfg.method for cfg in configs]
    summary = summarize_transfer(transfer[transfer["method"].isin(methods)])
    return summary[["method", "mean_cosine", "blackbox_asr"]].reset_index(drop=True)


def rank_correlation(table: pd.DataFrame) -> float:
    """Spearman correlation between -mean_cosine and black-box ASR."""
    if len(table) < 2:
        raise ValueError("rank_correlation needs at least two methods")
    rho, _ = stats.spearmanr(-table["mean_cosine"], table["blackbox_asr"])
    return float(rho)


def iteration_ablation(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    cfg: AttackConfig,
    steps: Sequence[int] = (1, 2, 5, 10, 20),
    methods: Sequence[str] = ("IFGSM", "TMA"),
    partners: Sequence[AVSample] = (),
    surrogate_ids: Optional[Sequence[str]] = None,
    progress: bool = False,
) -> pd.DataFrame:
    """
    White-box and black-box ASR as a function of K at a fixed step size.

    Returns
    -------
    table: pd.DataFrame
        Columns method, K, whitebox_asr, blackbox_asr.
    """
    rows = []
    for method in methods:
        if method == "FGSM":
            logging.warning(
                "FGSM is single-step; it is left out of the iteration ablation."
            )
            continue
        for n_steps in steps:
            budget = replace(cfg.budget, steps=n_steps)
            step_cfg = replace(cfg.with_method(method), budget=budget)
            table = transfer_matrix(
                grid, dataset, [step_cfg], partners, surrogate_ids, progress
            )
            summary = summarize_transfer(table).iloc[0]
            rows.append(
                {
                    "method": method,
                    "K": n_steps,
                    "whitebox_asr": summary["whitebox_asr"],
                    "blackbox_asr": summary["blackbox_asr"],
                }
            )
            logging.info(
                f"{method} K={n_steps}: white-box {summary['whitebox_asr']:.3f}, "
                f"black-box {summary['blackbox_asr']:.3f}"
            )
    return pd.DataFrame(rows, columns=["method", "K", "whitebox_asr", "blackbox_asr"])

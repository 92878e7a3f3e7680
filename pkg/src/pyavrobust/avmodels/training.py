from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from pyavrobust.avmodels.network import AVModel, accuracy, forward
from pyavrobust.exceptions import DivergenceError
from pyavrobust.parallel import parallel_map
from pyavrobust.synthav.sample import AVDataset
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import backward


@dataclass(frozen=True)
class TrainConfig:
    """
    Minibatch SGD settings.

    Attributes
    -----------
    epochs: int = 20
    lr: float = 0.05
    batch: int = 32
    momentum: float = 0.9
        Heavy-ball coefficient; 0 gives plain SGD.
    seed: int = 0
        Seed of the shuffle order.
    """

    epochs: int = 20
    lr: float = 0.05
    batch: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    """SGD with heavy-ball momentum over a model's parameter dict (updated in place)."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(values) for name, values in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        for name, values in self.params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            velocity = self.momentum * self.velocity[name] + grad
            self.velocity[name] = velocity
            values -= self.lr * velocity


def minibatches(n: int, batch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of shuffled index batches; the last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start : start + batch]


def sgd_step(
    model: AVModel,
    optimizer: SGD,
    x_v: np.ndarray,
    x_a: np.ndarray,
    y: np.ndarray,
    step: int,
) -> float:
    """
    One cross-entropy update on a batch, dropout off.

    Raises
    -------
    DivergenceError:
        The loss is not finite; carries ``step``.
    """
    trace = forward(model, x_v, x_a, track_params=True)
    loss = P.softmax_cross_entropy(trace.logits, y)
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(step, value)
    backward(loss)
    optimizer.step(
        {
            name: node.grad
            for name, node in trace.params.items()
            if node.grad is not None
        }
    )
    return value


def train_clean(
    model: AVModel,
    dataset: AVDataset,
    cfg: TrainConfig | None = None,
    eval_set: AVDataset | None = None,
    progress: bool = False,
) -> Tuple[AVModel, pd.DataFrame]:
    """
    Train a copy of ``model`` with minibatch SGD.

    Parameters
    ----------
    model:
        Starting point; left untouched.
    dataset:
        Training split, non-empty.
    cfg:
        Optimizer settings, defaults to ``TrainConfig()``.
    eval_set:
        Split whose accuracy is logged after every epoch (e.g. the test split).
    progress:
        Show a progress bar over epochs.

    Returns
    -------
    trained: AVModel
    history: pd.DataFrame
        Columns epoch, loss, train_acc, eval_acc.

    Raises
    -------
    ValueError:
        Empty dataset.
    DivergenceError:
        Non-finite loss; the error carries the global step index.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("train_clean needs a non-empty dataset")
    trained = model.copy()
    optimizer = SGD(trained.params, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)

    rows: List[dict] = []
    step = 0
    for epoch in tqdm(range(cfg.epochs), desc=trained.model_id, disable=not progress):
        losses = []
        for index in minibatches(len(dataset), cfg.batch, rng):
            batch = dataset.subset(index)
            losses.append(
                sgd_step(trained, optimizer, batch.x_v, batch.x_a, batch.y, step)
            )
            step += 1
        row = {
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)),
            "train_acc": accuracy(trained, dataset),
            "eval_acc": accuracy(trained, eval_set) if eval_set is not None else np.nan,
        }
        rows.append(row)
        logging.info(
            f"{trained.model_id} epoch {row['epoch']}: loss {row['loss']:.4f}, "
            f"train acc {row['train_acc']:.3f}, eval acc {row['eval_acc']:.3f}"
        )
    history = pd.DataFrame(rows, columns=["epoch", "loss", "train_acc", "eval_acc"])
    return trained, history


def train_grid(
    grid: Dict[str, AVModel],
    dataset: AVDataset,
    cfg: TrainConfig | None = None,
    eval_set: AVDataset | None = None,
) -> Tuple[Dict[str, AVModel], pd.DataFrame]:
    """
    Train every grid model independently (in parallel when threads allow).

    Returns
    -------
    trained: Dict[str, AVModel]
    history: pd.DataFrame
        Per-model histories stacked, with a leading ``model`` column.
    """
    ids = list(grid)

    def work(model_id: str) -> Tuple[AVModel, pd.DataFrame]:
        model, history = train_clean(grid[model_id], dataset, cfg, eval_set)
        logging.info(f"Trained {model_id} for {len(history)} epochs.")
        return model, history

    results = parallel_map(work, ids)
    trained = {model_id: model for model_id, (model, _) in zip(ids, results)}
    history = pd.concat(
        [h.assign(model=model_id) for model_id, (_, h) in zip(ids, results)],
        ignore_index=True,
    )
    history = history[["model"] + [c for c in history.columns if c != "model"]]
    return trained, history


def final_accuracy(models: Dict[str, AVModel], dataset: AVDataset) -> pd.DataFrame:
    """Accuracy table (model, accuracy) of trained models on one split."""
    return pd.DataFrame(
        [
            {"model": model_id, "accuracy": accuracy(m, dataset)}
            for model_id, m in models.items()
        ]
    )

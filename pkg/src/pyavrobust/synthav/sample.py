from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Sequence

import numpy as np

from pyavrobust.container import Container
from pyavrobust.exceptions import ShapeError


@dataclass(frozen=True)
class AVSample:
    """
    One audio-visual clip.

    Attributes
    -----------
    x_v: np.ndarray
        Video frames (T, C, H, W), values in [0, 1].
    x_a: np.ndarray
        Audio spectrogram frames (T, F_bins), values in [0, 1].
    y: int
        Class label.
    """

    x_v: np.ndarray
    x_a: np.ndarray
    y: int

    def __post_init__(self) -> None:
        if self.x_v.ndim != 4 or self.x_a.ndim != 2:
            raise ShapeError(
                f"AVSample: expected x_v (T, C, H, W) and x_a (T, F), got "
                f"{self.x_v.shape} and {self.x_a.shape}"
            )
        if self.x_v.shape[0] != self.x_a.shape[0]:
            raise ShapeError(
                f"AVSample: {self.x_v.shape[0]} video frames vs "
                f"{self.x_a.shape[0]} audio frames"
            )

    @property
    def n_frames(self) -> int:
        return int(self.x_v.shape[0])

    def replace(
        self, x_v: np.ndarray | None = None, x_a: np.ndarray | None = None
    ) -> "AVSample":
        """Copy with one or both modalities swapped out; the label is kept."""
        return AVSample(
            x_v=self.x_v if x_v is None else x_v,
            x_a=self.x_a if x_a is None else x_a,
            y=self.y,
        )


@dataclass(frozen=True)
class AVDataset:
    """
    Stacked samples of one split.

    Attributes
    -----------
    x_v: np.ndarray
        (N, T, C, H, W)
    x_a: np.ndarray
        (N, T, F_bins)
    y: np.ndarray
        (N,) integer labels
    """

    x_v: np.ndarray
    x_a: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def __getitem__(self, index: int) -> AVSample:
        return AVSample(self.x_v[index], self.x_a[index], int(self.y[index]))

    def __iter__(self) -> Iterator[AVSample]:
        for index in range(len(self)):
            yield self[index]

    def subset(self, indices: Sequence[int] | np.ndarray) -> "AVDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return AVDataset(self.x_v[indices], self.x_a[indices], self.y[indices])

    def head(self, n: int | None) -> "AVDataset":
        """First ``n`` samples (all when ``n`` is None or larger than the split)."""
        if n is None or n >= len(self):
            return self
        return self.subset(np.arange(n))

    @classmethod
    def from_samples(cls, samples: Sequence[AVSample]) -> "AVDataset":
        if not samples:
            raise ValueError("Cannot build a dataset from zero samples.")
        return cls(
            x_v=np.stack([s.x_v for s in samples]),
            x_a=np.stack([s.x_a for s in samples]),
            y=np.array([s.y for s in samples], dtype=np.int64),
        )

    def to_container(self, meta: Dict[str, Any]) -> Container:
        return Container(
            kind="dataset",
            meta=meta,
            arrays={
                "x_v": self.x_v,
                "x_a": self.x_a,
                "y": self.y.astype(np.float64),
            },
        )

    @classmethod
    def from_container(cls, container: Container) -> "AVDataset":
        return cls(
            x_v=container.arrays["x_v"],
            x_a=container.arrays["x_a"],
            y=np.rint(container.arrays["y"]).astype(np.int64),
        )


@dataclass(frozen=True)
class DatasetSplits:
    train: AVDataset
    val: AVDataset
    test: AVDataset

    def save(self, directory: str | Path, meta: Dict[str, Any]) -> Dict[str, Path]:
        """Write one container per split (``train.avd``, ``val.avd``, ``test.avd``)."""
        directory = Path(directory)
        return {
            name: getattr(self, name)
            .to_container({**meta, "split": name})
            .save(directory / f"{name}.avd")
            for name in ("train", "val", "test")
        }

    @classmethod
    def load(cls, directory: str | Path) -> "DatasetSplits":
        directory = Path(directory)
        return cls(
            **{
                name: AVDataset.from_container(
                    Container.load(directory / f"{name}.avd", kind="dataset")
                )
                for name in ("train", "val", "test")
            }
        )

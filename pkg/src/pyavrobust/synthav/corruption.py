from __future__ import annotations

from typing import Literal, Tuple

import numpy as np

from pyavrobust.synthav.sample import AVSample

MaskTarget = Literal["A_only", "V_only", "both_sync", "both_async"]
MASK_TARGETS: Tuple[str, ...] = ("A_only", "V_only", "both_sync", "both_async")


def masked_frame_count(ratio: float, n_frames: int) -> int:
    """``floor(ratio * T)``, guarded against round-off such as 0.3 * 10."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    return int(np.floor(ratio * n_frames + 1e-9))


def draw_mask_indices(
    n_frames: int, ratio: float, target: MaskTarget, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw the frame indices to zero in each modality.

    Returns
    -------
    visual, audio: np.ndarray
        Sorted index arrays; empty for an untouched modality. ``both_sync``
        returns the same set twice, ``both_async`` two independent sets.
    """
    if target not in MASK_TARGETS:
        raise ValueError(f"Unknown mask target {target!r}. Choose from {MASK_TARGETS}")
    count = masked_frame_count(ratio, n_frames)
    empty = np.array([], dtype=np.int64)

    def draw() -> np.ndarray:
        return np.sort(rng.choice(n_frames, size=count, replace=False))

    if target == "V_only":
        return draw(), empty
    if target == "A_only":
        return empty, draw()
    if target == "both_sync":
        shared = draw()
        return shared, shared.copy()
    return draw(), draw()


def temporal_mask(
    sample: AVSample, ratio: float, target: MaskTarget, seed: int
) -> AVSample:
    """
    Zero ``floor(ratio * T)`` frames of the targeted modalities.

    Parameters
    ----------
    sample:
        Clip to corrupt.
    ratio:
        rho in [0, 1).
    target:
        "A_only", "V_only", "both_sync" (one index set for both) or
        "both_async" (independent index sets).
    seed:
        Seed of the index draw.

    Returns
    -------
    masked: AVSample
    """
    visual, audio = draw_mask_indices(
        sample.n_frames, ratio, target, np.random.default_rng(seed)
    )
    x_v = sample.x_v.copy()
    x_a = sample.x_a.copy()
    x_v[visual] = 0.0
    x_a[audio] = 0.0
    return sample.replace(x_v=x_v, x_a=x_a)

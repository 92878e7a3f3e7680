"""
Segment-universal perturbations.

The timeline is cut into contiguous segments and a few frames are sampled
from each. One single-frame perturbation per segment is optimized on the
sampled frames only and then copied to every frame of its segment, so the
crafting cost scales with the number of sampled frames.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pyavrobust.attacks.config import AttackConfig
from pyavrobust.attacks.losses import check_surrogates, objective_at
from pyavrobust.attacks.pgd import Deltas, project, projected_ascent
from pyavrobust.avmodels.network import AVModel
from pyavrobust.synthav.sample import AVSample
from pyavrobust.synthav.transforms import FrameOp, TransformPlan
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import TensorNode, backward


@dataclass
class PassCounter:
    """
    Model-input frames pushed through forward and backward passes while crafting.

    Totals are exact under concurrent ``record`` calls.
    """

    forward_frames: int = 0
    backward_frames: int = 0
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def record(self, forward: int = 0, backward: int = 0) -> None:
        if forward < 0 or backward < 0:
            raise ValueError("pass counts only grow")
        with self._lock:
            self.forward_frames += forward
            self.backward_frames += backward

    def reset(self) -> None:
        with self._lock:
            self.forward_frames = 0
            self.backward_frames = 0


@dataclass(frozen=True)
class Segment:
    """Frames ``start:stop`` and the sampled (absolute, sorted) frame indices."""

    start: int
    stop: int
    sampled: np.ndarray

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class UniversalPerturbation:
    """One single-frame perturbation pair per segment: (S, C, H, W) and (S, F)."""

    delta_v: np.ndarray
    delta_a: np.ndarray
    segments: Tuple[Segment, ...]


def segment_and_sample(
    sample: AVSample | int, n_segments: int, ratio: float, seed: int
) -> List[Segment]:
    """
    Split the timeline into near-equal contiguous segments and sample frames.

    Parameters
    ----------
    sample:
        Clip, or its frame count T.
    n_segments:
        S, 1 <= S <= T.
    ratio:
        alpha in (0, 1]; ``ceil(alpha * len)`` frames are drawn per segment,
        uniformly without replacement.
    seed:
        Seed of the draw.

    Returns
    -------
    segments: list of Segment

    Raises
    -------
    ValueError:
        S outside [1, T] or alpha outside (0, 1].
    """
    n_frames = sample if isinstance(sample, int) else sample.n_frames
    if not 1 <= n_segments <= n_frames:
        raise ValueError(f"n_segments must lie in [1, {n_frames}], got {n_segments}")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    segments = []
    for frames in np.array_split(np.arange(n_frames), n_segments):
        count = math.ceil(ratio * len(frames) - 1e-9)
        sampled = np.sort(rng.choice(frames, size=count, replace=False))
        segments.append(Segment(int(frames[0]), int(frames[-1]) + 1, sampled))
    return segments


def _expansion(segments: Sequence[Segment]) -> Tuple[np.ndarray, np.ndarray]:
    """Crafting-clip frame indices and the one-hot (T', S) map to their segments."""
    clip = np.concatenate([segment.sampled for segment in segments])
    owner = np.concatenate(
        [np.full(len(segment.sampled), s) for s, segment in enumerate(segments)]
    )
    expand = np.zeros((len(clip), len(segments)))
    expand[np.arange(len(clip)), owner] = 1.0
    return clip, expand


def _broadcast(delta: TensorNode, expand: np.ndarray) -> TensorNode:
    """(S, ...) per-segment node to (T', ...) per-frame node."""
    frame_shape = delta.shape[1:]
    flat = P.reshape(delta, (delta.shape[0], -1))
    frames = P.linear(TensorNode.constant(expand), flat)
    return P.reshape(frames, (expand.shape[0],) + frame_shape)


def _boxed(clean: np.ndarray, perturbation: TensorNode) -> TensorNode:
    # clip to [0, 1] in value; the gradient passes straight through
    raw = P.add(TensorNode.constant(clean), perturbation)
    correction = np.clip(raw.values, 0.0, 1.0) - raw.values
    return P.add(raw, TensorNode.constant(correction))


def craft_universal(
    models: AVModel | Sequence[AVModel],
    sample: AVSample,
    segments: Sequence[Segment],
    cfg: AttackConfig,
    seed: int,
    rho_x: float = 0.0,
    rho_f: float = 0.0,
    n_steps: Optional[int] = None,
    counter: Optional[PassCounter] = None,
) -> UniversalPerturbation:
    """
    Optimize one perturbation pair per segment on the sampled frames.

    The sampled frames of all segments, in temporal order, form the crafting
    clip; each carries its segment's shared perturbation. The objective is the
    attack objective of ``cfg`` on that clip (the temporal term is dropped for
    a single-frame clip).

    Parameters
    ----------
    models:
        Model(s) being trained; read only.
    sample:
        Clean clip.
    segments:
        Output of ``segment_and_sample``.
    cfg:
        Inner attack: budget, step sizes, momentum and loss weights.
    seed:
        Seed of the frame mask and the dropout masks.
    rho_x:
        Fraction of crafting-clip frames masked (zeroed in both modalities);
        at least one frame is always kept.
    rho_f:
        Fusion-layer dropout ratio in every crafting forward pass.
    n_steps:
        Ascent iterations; defaults to ``cfg.budget.steps``.
    counter:
        Receives T' frames per model per forward and per backward pass.

    Returns
    -------
    perturbation: UniversalPerturbation

    Raises
    -------
    ValueError:
        A segment without sampled frames, no segments, or a model the
        objective of ``cfg`` is undefined on (see ``check_surrogates``).
    """
    models = [models] if isinstance(models, AVModel) else list(models)
    check_surrogates(models, cfg)
    if not segments:
        raise ValueError("craft_universal needs at least one segment")
    if any(len(segment.sampled) == 0 for segment in segments):
        raise ValueError("every segment needs at least one sampled frame")
    clip, expand = _expansion(segments)
    clip_v, clip_a = sample.x_v[clip], sample.x_a[clip]
    n_clip = len(clip)

    rng = np.random.default_rng(seed)
    keep = (rng.random(n_clip) >= rho_x).astype(np.float64)
    if not keep.any():
        keep[rng.integers(n_clip)] = 1.0
    op = FrameOp(frame_gain=keep)
    plan = TransformPlan("mask", "both_sync", op, op)
    if n_clip < 2:
        cfg = replace(cfg, lambda1=0.0)

    eps_v, eps_a = cfg.budget.epsilons
    shapes = ((len(segments),) + clip_v.shape[1:], (len(segments),) + clip_a.shape[1:])

    def gradient(deltas: Deltas, k: int) -> Tuple[float, Deltas]:
        delta_v = TensorNode.variable(deltas[0])
        delta_a = TensorNode.variable(deltas[1])
        x_v = _boxed(clip_v, _broadcast(delta_v, expand))
        x_a = _boxed(clip_a, _broadcast(delta_a, expand))
        objective = objective_at(
            models, x_v, x_a, sample.y, cfg, [plan], dropout=rho_f or None, rng=rng
        )
        backward(objective)
        if counter is not None:
            counter.record(forward=n_clip * len(models), backward=n_clip * len(models))
        return objective.item(), [
            delta_v.grad if delta_v.grad is not None else np.zeros(shapes[0]),
            delta_a.grad if delta_a.grad is not None else np.zeros(shapes[1]),
        ]

    outcome = projected_ascent(
        gradient,
        shapes=shapes,
        epsilons=(eps_v, eps_a),
        step_sizes=cfg.step_sizes,
        n_steps=cfg.budget.steps if n_steps is None else n_steps,
        momentum=cfg.budget.momentum if cfg.uses_momentum else None,
        nesterov=cfg.method == "NIFGSM",
    )
    delta_v, delta_a = outcome.deltas
    return UniversalPerturbation(delta_v, delta_a, tuple(segments))


def propagate(
    perturbation: UniversalPerturbation, n_frames: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Copy every segment's perturbation to all frames of the segment.

    Returns
    -------
    delta_v, delta_a: np.ndarray
        (T, C, H, W) and (T, F).

    Raises
    -------
    ValueError:
        Segments that do not tile [0, T) or a count mismatch with the
        perturbation.
    """
    segments = perturbation.segments
    counts = {perturbation.delta_v.shape[0], perturbation.delta_a.shape[0]}
    if counts != {len(segments)}:
        raise ValueError(
            f"{len(segments)} segments for {perturbation.delta_v.shape[0]} perturbations"
        )
    bounds = [(s.start, s.stop) for s in segments]
    if bounds[0][0] != 0 or bounds[-1][1] != n_frames or any(
        prev[1] != nxt[0] for prev, nxt in zip(bounds, bounds[1:])
    ):
        raise ValueError(f"segments {bounds} do not tile [0, {n_frames})")
    lengths = [s.length for s in segments]
    delta_v = np.repeat(perturbation.delta_v, lengths, axis=0)
    delta_a = np.repeat(perturbation.delta_a, lengths, axis=0)
    return delta_v, delta_a


def perturb(sample: AVSample, perturbation: UniversalPerturbation) -> AVSample:
    """Adversarial clip: propagated perturbation added and clipped to [0, 1]."""
    delta_v, delta_a = propagate(perturbation, sample.n_frames)
    return sample.replace(
        x_v=np.clip(sample.x_v + delta_v, 0.0, 1.0),
        x_a=np.clip(sample.x_a + delta_a, 0.0, 1.0),
    )


def within_budget(delta: np.ndarray, eps: float) -> bool:
    return bool(np.array_equal(project(delta, eps), delta))

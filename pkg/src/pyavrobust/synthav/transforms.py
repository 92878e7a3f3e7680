from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from pyavrobust.synthav.corruption import masked_frame_count
from pyavrobust.synthav.sample import AVSample
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import TensorNode

TransformKind = Literal["scale", "mask", "blur", "mixup"]
TransformMode = Literal["audio", "visual", "both_sync", "both_async"]
TRANSFORM_KINDS: Tuple[str, ...] = ("scale", "mask", "blur", "mixup")
TRANSFORM_MODES: Tuple[str, ...] = ("audio", "visual", "both_sync", "both_async")


@dataclass(frozen=True)
class FrameOp:
    """
    Affine map along the frame axis: ``y = mix @ (frame_gain * x) + offset``.

    Every transform kind is a special case, so the same op applies to plain
    arrays and to graph nodes, and its parameters stay constant per copy.
    """

    frame_gain: Optional[np.ndarray] = None
    mix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None

    def _gain(self, ndim: int) -> np.ndarray:
        assert self.frame_gain is not None
        return self.frame_gain.reshape((-1,) + (1,) * (ndim - 1))

    def apply_array(self, x: np.ndarray) -> np.ndarray:
        out = x
        if self.frame_gain is not None:
            out = out * self._gain(x.ndim)
        if self.mix is not None:
            out = np.tensordot(self.mix, out, axes=1)
        if self.offset is not None:
            out = out + self.offset
        return out

    def apply_node(self, x: TensorNode) -> TensorNode:
        out = x
        if self.frame_gain is not None:
            out = P.mul(out, TensorNode.constant(self._gain(len(x.shape))))
        if self.mix is not None:
            out = P.frame_mix(out, self.mix, axis=0)
        if self.offset is not None:
            out = P.add(out, TensorNode.constant(self.offset))
        return out


@dataclass(frozen=True)
class TransformPlan:
    """A drawn transform: one ``FrameOp`` per modality (None = untouched)."""

    kind: str
    mode: str
    visual: Optional[FrameOp] = None
    audio: Optional[FrameOp] = None

    @property
    def is_identity(self) -> bool:
        return self.visual is None and self.audio is None

    def apply(self, sample: AVSample) -> AVSample:
        x_v = sample.x_v if self.visual is None else self.visual.apply_array(sample.x_v)
        x_a = sample.x_a if self.audio is None else self.audio.apply_array(sample.x_a)
        return sample.replace(x_v=x_v, x_a=x_a)

    def apply_nodes(
        self, x_v: TensorNode, x_a: TensorNode
    ) -> Tuple[TensorNode, TensorNode]:
        return (
            x_v if self.visual is None else self.visual.apply_node(x_v),
            x_a if self.audio is None else self.audio.apply_node(x_a),
        )


IDENTITY_PLAN = TransformPlan(kind="identity", mode="both_sync")


@dataclass(frozen=True)
class TransformPolicy:
    """
    Distribution the diversified copies are drawn from.

    Attributes
    -----------
    kinds: tuple of str
        Subset of ("scale", "mask", "blur", "mixup"). Mixup is only drawn
        when a partner pool is supplied.
    modes: tuple of str
        Subset of ("audio", "visual", "both_sync", "both_async").
    scale_range: (float, float)
        Uniform range of the scale factor, within (0, 1].
    mask_ratio_range: (float, float)
        Uniform range of the mask ratio, within [0, 1).
    blur_kernels: tuple of kernels
        Odd-length, non-negative kernels summing to at most 1.
    mixup_range: (float, float)
        Uniform range of the mixup weight w of the original sample.
    """

    kinds: Tuple[str, ...] = TRANSFORM_KINDS
    modes: Tuple[str, ...] = TRANSFORM_MODES
    scale_range: Tuple[float, float] = (0.7, 1.0)
    mask_ratio_range: Tuple[float, float] = (0.125, 0.25)
    blur_kernels: Tuple[Tuple[float, ...], ...] = ((0.25, 0.5, 0.25),)
    mixup_range: Tuple[float, float] = (0.7, 0.95)

    def __post_init__(self) -> None:
        unknown = set(self.kinds) - set(TRANSFORM_KINDS)
        if unknown:
            raise ValueError(f"Unknown transform kinds {sorted(unknown)}")
        unknown = set(self.modes) - set(TRANSFORM_MODES)
        if unknown:
            raise ValueError(f"Unknown transform modes {sorted(unknown)}")
        if self.kinds and not self.modes:
            raise ValueError("A transform policy with kinds needs at least one mode")
        low, high = self.scale_range
        if not 0.0 < low <= high <= 1.0:
            raise ValueError(f"scale_range must lie in (0, 1], got {self.scale_range}")
        low, high = self.mask_ratio_range
        if not 0.0 <= low <= high < 1.0:
            raise ValueError(
                f"mask_ratio_range must lie in [0, 1), got {self.mask_ratio_range}"
            )
        low, high = self.mixup_range
        if not 0.0 <= low <= high <= 1.0:
            raise ValueError(f"mixup_range must lie in [0, 1], got {self.mixup_range}")
        for kernel in self.blur_kernels:
            _check_kernel(kernel)


def _check_kernel(kernel: Sequence[float]) -> np.ndarray:
    weights = np.asarray(kernel, dtype=np.float64)
    if weights.ndim != 1 or weights.size % 2 == 0:
        raise ValueError(f"blur kernel must have odd length, got {list(kernel)}")
    if (weights < 0).any() or weights.sum() > 1.0 + 1e-9:
        raise ValueError(
            f"blur kernel must be non-negative and sum to at most 1, got {list(kernel)}"
        )
    return weights


def _blur_matrix(n_frames: int, kernel: Sequence[float]) -> np.ndarray:
    # column t is the response to an impulse at frame t; edges replicate
    return ndimage.convolve1d(
        np.eye(n_frames), _check_kernel(kernel), axis=0, mode="nearest"
    )


def _frame_template(
    kind: str, params: Mapping[str, Any], n_frames: int, rng: np.random.Generator
) -> FrameOp:
    """Modality-independent part of a transform (gain and mix)."""
    if kind == "scale":
        factor = float(params["factor"])
        if not 0.0 < factor <= 1.0:
            raise ValueError(f"scale factor must lie in (0, 1], got {factor}")
        return FrameOp(frame_gain=np.full(n_frames, factor))
    if kind == "mask":
        count = masked_frame_count(float(params["ratio"]), n_frames)
        gain = np.ones(n_frames)
        gain[rng.choice(n_frames, size=count, replace=False)] = 0.0
        return FrameOp(frame_gain=gain)
    if kind == "blur":
        return FrameOp(mix=_blur_matrix(n_frames, params["kernel"]))
    if kind == "mixup":
        weight = float(params["weight"])
        if not 0.0 <= weight <= 1.0:
            raise ValueError(f"mixup weight must lie in [0, 1], got {weight}")
        return FrameOp(frame_gain=np.full(n_frames, weight))
    raise ValueError(f"Unknown transform kind {kind!r}. Choose from {TRANSFORM_KINDS}")


def _bind(
    template: FrameOp,
    kind: str,
    params: Mapping[str, Any],
    partner_x: Optional[np.ndarray],
) -> FrameOp:
    if kind != "mixup":
        return template
    assert partner_x is not None
    return FrameOp(
        frame_gain=template.frame_gain,
        offset=(1.0 - float(params["weight"])) * partner_x,
    )


def make_plan(
    kind: str,
    params: Mapping[str, Any],
    mode: str,
    n_frames: int,
    rng: np.random.Generator,
    partner: AVSample | None = None,
    audio_params: Mapping[str, Any] | None = None,
) -> TransformPlan:
    """
    Build a transform plan.

    ``both_sync`` shares one draw (e.g. one mask index set) between the
    modalities; ``both_async`` draws the audio op independently, with
    ``audio_params`` when given.

    Raises
    -------
    ValueError:
        Unknown kind/mode, invalid parameters, or mixup without a partner.
    """
    if mode not in TRANSFORM_MODES:
        raise ValueError(
            f"Unknown transform mode {mode!r}. Choose from {TRANSFORM_MODES}"
        )
    if kind == "mixup" and partner is None:
        raise ValueError("mixup needs a partner sample")
    partner_v = None if partner is None else partner.x_v
    partner_a = None if partner is None else partner.x_a

    visual = audio = None
    if mode in ("visual", "both_sync", "both_async"):
        template = _frame_template(kind, params, n_frames, rng)
        visual = _bind(template, kind, params, partner_v)
        if mode == "both_sync":
            audio = _bind(template, kind, params, partner_a)
    if mode in ("audio", "both_async"):
        a_params = params if audio_params is None else audio_params
        template = _frame_template(kind, a_params, n_frames, rng)
        audio = _bind(template, kind, a_params, partner_a)
    return TransformPlan(kind=kind, mode=mode, visual=visual, audio=audio)


def transform(
    sample: AVSample,
    kind: TransformKind,
    params: Dict[str, Any],
    mode: TransformMode,
    seed: int,
    partner: AVSample | None = None,
) -> AVSample:
    """
    Apply one transformation to a clip.

    Parameters
    ----------
    sample:
        Clip to transform; its label is never altered.
    kind:
        "scale" (``params["factor"]`` in (0, 1]), "mask" (``params["ratio"]``
        in [0, 1)), "blur" (``params["kernel"]``, odd length) or "mixup"
        (``params["weight"]`` in [0, 1], requires ``partner``).
    mode:
        "audio", "visual", "both_sync" or "both_async".
    seed:
        Seed of any random draw (mask indices).
    partner:
        Mixup partner clip.

    Returns
    -------
    transformed: AVSample
    """
    plan = make_plan(
        kind, params, mode, sample.n_frames, np.random.default_rng(seed), partner
    )
    return plan.apply(sample)


def _draw_params(
    kind: str, policy: TransformPolicy, rng: np.random.Generator
) -> Dict[str, Any]:
    if kind == "scale":
        return {"factor": float(rng.uniform(*policy.scale_range))}
    if kind == "mask":
        return {"ratio": float(rng.uniform(*policy.mask_ratio_range))}
    if kind == "blur":
        kernels = policy.blur_kernels
        return {"kernel": kernels[int(rng.integers(len(kernels)))]}
    return {"weight": float(rng.uniform(*policy.mixup_range))}


def draw_plans(
    n_frames: int,
    n_copies: int,
    policy: TransformPolicy,
    rng: np.random.Generator,
    partners: Sequence[AVSample] = (),
) -> List[TransformPlan]:
    """
    Draw ``n_copies`` plans; plan 0 is always the identity.

    Raises
    -------
    ValueError:
        ``n_copies < 1``, or more than one copy with no usable kind.
    """
    if n_copies < 1:
        raise ValueError(f"n_copies must be >= 1, got {n_copies}")
    kinds = [k for k in policy.kinds if k != "mixup" or partners]
    if n_copies > 1 and not kinds:
        raise ValueError("Transform policy has no usable kinds for diversified copies")
    if "mixup" in policy.kinds and not partners and n_copies > 1:
        logging.warning("No partner pool supplied; mixup is left out of the policy.")

    plans = [IDENTITY_PLAN]
    for _ in range(n_copies - 1):
        kind = kinds[int(rng.integers(len(kinds)))]
        mode = policy.modes[int(rng.integers(len(policy.modes)))]
        partner = None
        if kind == "mixup":
            partner = partners[int(rng.integers(len(partners)))]
        params = _draw_params(kind, policy, rng)
        audio_params = _draw_params(kind, policy, rng) if mode == "both_async" else None
        plans.append(
            make_plan(kind, params, mode, n_frames, rng, partner, audio_params)
        )
    return plans


def diversify(
    sample: AVSample,
    n_copies: int,
    policy: TransformPolicy,
    seed: int,
    partners: Sequence[AVSample] = (),
) -> List[AVSample]:
    """
    Transformed copies of a clip; copy 0 is the untransformed sample.

    Parameters
    ----------
    sample:
        Clip to diversify.
    n_copies:
        N >= 1.
    policy:
        Distribution of kinds, modes and parameters.
    seed:
        Seed of every draw.
    partners:
        Mixup partner pool.

    Returns
    -------
    copies: list of AVSample
    """
    plans = draw_plans(
        sample.n_frames, n_copies, policy, np.random.default_rng(seed), partners
    )
    return [plan.apply(sample) for plan in plans]

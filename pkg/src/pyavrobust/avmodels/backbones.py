"""
Per-frame convolutional feature extractors.

A backbone maps a stack of frames (N, C, H, W) to feature vectors (N, d).
Video frames use 3x3 kernels with 2x2 pooling; audio frames are treated as
(1, 1, F) images with 1x3 kernels and 1x2 pooling, so every backbone kind
works for either modality.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import TensorNode

CONV_CHANNELS = 8

# conv layers per backbone kind; "res" is the residual block conv
_LAYERS = {
    "toyA": ("conv1",),
    "toyV": ("conv1", "conv2"),
    "toyR": ("conv1", "conv2", "res"),
}


@dataclass(frozen=True)
class FrameGeometry:
    """Input frame shape and the kernel/pool sizes that go with it."""

    channels: int
    height: int
    width: int
    kernel: Tuple[int, int]
    padding: Tuple[int, int]
    pool: Tuple[int, int]

    @classmethod
    def visual(cls, channels: int, height: int, width: int) -> "FrameGeometry":
        return cls(channels, height, width, (3, 3), (1, 1), (2, 2))

    @classmethod
    def audio(cls, n_bins: int) -> "FrameGeometry":
        return cls(1, 1, n_bins, (1, 3), (0, 1), (1, 2))

    @property
    def pooled_size(self) -> int:
        pooled = (self.height // self.pool[0]) * (self.width // self.pool[1])
        return CONV_CHANNELS * pooled


def _uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int
) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_backbone(
    kind: str,
    geometry: FrameGeometry,
    out_dim: int,
    prefix: str,
    rng: np.random.Generator,
) -> Dict[str, np.ndarray]:
    """
    Draw backbone parameters, uniform in +-1/sqrt(fan_in).

    Returns
    -------
    params: Dict[str, np.ndarray]
        Keys ``f"{prefix}.{layer}.weight"`` / ``.bias``, in a fixed order.
    """
    params: Dict[str, np.ndarray] = {}
    kh, kw = geometry.kernel
    in_channels = geometry.channels
    for layer in _LAYERS[kind]:
        fan_in = in_channels * kh * kw
        params[f"{prefix}.{layer}.weight"] = _uniform(
            rng, (CONV_CHANNELS, in_channels, kh, kw), fan_in
        )
        params[f"{prefix}.{layer}.bias"] = _uniform(rng, (CONV_CHANNELS,), fan_in)
        in_channels = CONV_CHANNELS
    fan_in = geometry.pooled_size
    params[f"{prefix}.fc.weight"] = _uniform(rng, (fan_in, out_dim), fan_in)
    params[f"{prefix}.fc.bias"] = _uniform(rng, (out_dim,), fan_in)
    return params


def apply_backbone(
    kind: str,
    geometry: FrameGeometry,
    params: Dict[str, TensorNode],
    prefix: str,
    frames: TensorNode,
) -> TensorNode:
    """Features (N, d) of the frames (N, C, H, W)."""

    def conv(layer: str, x: TensorNode) -> TensorNode:
        return P.conv2d(
            x,
            params[f"{prefix}.{layer}.weight"],
            params[f"{prefix}.{layer}.bias"],
            padding=geometry.padding,
        )

    layers: List[str] = list(_LAYERS[kind])
    hidden = P.relu(conv(layers[0], frames))
    if "conv2" in layers:
        hidden = P.relu(conv("conv2", hidden))
    if "res" in layers:
        hidden = P.relu(P.add(hidden, conv("res", hidden)))
    pooled = P.maxpool(hidden, geometry.pool)
    flat = P.reshape(pooled, (pooled.shape[0], -1))
    return P.linear(flat, params[f"{prefix}.fc.weight"], params[f"{prefix}.fc.bias"])

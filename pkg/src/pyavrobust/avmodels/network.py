from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from pyavrobust.avmodels.backbones import FrameGeometry, apply_backbone, init_backbone
from pyavrobust.avmodels.spec import ModelSpec, grid_specs
from pyavrobust.exceptions import ShapeError
from pyavrobust.parallel import derive_seed
from pyavrobust.synthav.sample import AVDataset
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import TensorNode, as_node


@dataclass
class AVModel:
    """
    Audio-visual classifier ``f_u(f_v(x_v), f_a(x_a))``.

    Attributes
    -----------
    spec: ModelSpec
    seed: int
        Initialization seed; ``build_model(spec, seed)`` reproduces the
        untrained parameters bit for bit.
    params: Dict[str, np.ndarray]
        Named parameters, prefixed "visual.", "audio." or "fusion.".
    """

    spec: ModelSpec
    seed: int
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def model_id(self) -> str:
        return self.spec.model_id

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        """Parameters of one sub-network: "visual", "audio" or "fusion"."""
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    @property
    def theta_v(self) -> Dict[str, np.ndarray]:
        return self.group("visual")

    @property
    def theta_a(self) -> Dict[str, np.ndarray]:
        return self.group("audio")

    @property
    def theta_u(self) -> Dict[str, np.ndarray]:
        return self.group("fusion")

    def copy(self) -> "AVModel":
        params = {k: v.copy() for k, v in self.params.items()}
        return AVModel(self.spec, self.seed, params)

    @property
    def visual_geometry(self) -> FrameGeometry:
        spec = self.spec
        return FrameGeometry.visual(spec.channels, spec.height, spec.width)

    @property
    def audio_geometry(self) -> FrameGeometry:
        return FrameGeometry.audio(self.spec.n_bins)


@dataclass(frozen=True)
class ForwardTrace:
    """
    Intermediate values of one forward pass, as graph nodes.

    Shapes carry a leading batch axis B only when the input was batched.

    Attributes
    -----------
    visual_frames: TensorNode
        Per-frame visual features (B, T, d).
    audio_frames: TensorNode
        Per-frame audio features (B, T, d_a).
    pooled_v, pooled_a: TensorNode
        Temporal means (B, d) and (B, d_a).
    fused: TensorNode
        Fusion-layer vector after dropout (B, d_fused).
    logits: TensorNode
        (B, n_classes).
    params: Dict[str, TensorNode]
        Parameter leaves; variables when ``track_params`` was set.
    """

    visual_frames: TensorNode
    audio_frames: TensorNode
    pooled_v: TensorNode
    pooled_a: TensorNode
    fused: TensorNode
    logits: TensorNode
    params: Dict[str, TensorNode] = field(default_factory=dict)


def build_model(spec: ModelSpec, seed: int) -> AVModel:
    """
    Initialize a model, uniform in +-1/sqrt(fan_in) from ``seed``.

    Parameters
    ----------
    spec:
        Architecture; invalid specs (e.g. sum fusion with unequal feature dims)
        are rejected when the ModelSpec is constructed.
    seed:
        Initialization seed.

    Returns
    -------
    model: AVModel
    """
    rng = np.random.default_rng(seed)
    model = AVModel(spec=spec, seed=seed)
    params = init_backbone(
        spec.visual_backbone, model.visual_geometry, spec.feature_dim, "visual", rng
    )
    params.update(
        init_backbone(
            spec.audio_backbone, model.audio_geometry, spec.audio_dim, "audio", rng
        )
    )
    bound = 1.0 / np.sqrt(spec.fused_dim)
    params["fusion.classifier.weight"] = rng.uniform(
        -bound, bound, size=(spec.fused_dim, spec.n_classes)
    )
    params["fusion.classifier.bias"] = rng.uniform(
        -bound, bound, size=(spec.n_classes,)
    )
    model.params.update(params)
    return model


def _check_inputs(spec: ModelSpec, x_v: TensorNode, x_a: TensorNode) -> bool:
    """Validate shapes; returns True for batched input."""
    batched = len(x_v.shape) == 5
    if len(x_v.shape) not in (4, 5) or len(x_a.shape) != len(x_v.shape) - 2:
        raise ShapeError(
            f"forward: expected x_v (T, C, H, W) and x_a (T, F) with an optional "
            f"batch axis, got {x_v.shape} and {x_a.shape}"
        )
    frame_v = x_v.shape[-3:]
    expected_v = (spec.channels, spec.height, spec.width)
    if frame_v != expected_v or x_a.shape[-1] != spec.n_bins:
        raise ShapeError(
            f"forward: frames {frame_v} / {x_a.shape[-1]} bins do not match model "
            f"{spec.model_id} geometry {expected_v} / "
            f"{spec.n_bins} bins"
        )
    if x_v.shape[: len(x_v.shape) - 3] != x_a.shape[:-1]:
        raise ShapeError(
            f"forward: video leading axes {x_v.shape[:-3]} do not match audio "
            f"{x_a.shape[:-1]} (frame count mismatch between modalities)"
        )
    return batched


def fuse(spec: ModelSpec, pooled_v: TensorNode, pooled_a: TensorNode) -> TensorNode:
    """Fusion-layer vector of the pooled features, before dropout."""
    if spec.fusion == "sum":
        return P.add(pooled_v, pooled_a)
    return P.concat([pooled_v, pooled_a], axis=-1)


def forward(
    model: AVModel,
    x_v: np.ndarray | TensorNode,
    x_a: np.ndarray | TensorNode,
    dropout: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    track_params: bool = False,
) -> ForwardTrace:
    """
    Run the classifier and expose per-frame features.

    Parameters
    ----------
    model:
        Classifier to run.
    x_v, x_a:
        Video (T, C, H, W) and audio (T, F) frames, optionally with a leading
        batch axis, as arrays or graph nodes (nodes keep the graph for input
        gradients).
    dropout:
        rho_f in [0, 1). When positive, a Bernoulli mask drops that fraction of
        fusion-layer units with inverted 1 / (1 - rho_f) scaling. None or 0
        gives deterministic inference.
    rng:
        Source of the dropout mask; required when ``dropout > 0``.
    track_params:
        Make the parameters graph variables so ``backward`` yields their
        gradients.

    Returns
    -------
    trace: ForwardTrace

    Raises
    -------
    ShapeError:
        Malformed inputs or a frame count mismatch between modalities.
    ValueError:
        Dropout outside [0, 1) or without an rng.
    """
    spec = model.spec
    node_v, node_a = as_node(x_v), as_node(x_a)
    batched = _check_inputs(spec, node_v, node_a)
    if dropout is not None and not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
    if dropout and rng is None:
        raise ValueError("dropout > 0 needs an rng for the mask")

    make = TensorNode.variable if track_params else TensorNode.constant
    params = {name: make(values) for name, values in model.params.items()}

    if not batched:
        node_v = P.reshape(node_v, (1,) + node_v.shape)
        node_a = P.reshape(node_a, (1,) + node_a.shape)
    n_batch, n_frames = node_v.shape[:2]

    video = P.reshape(node_v, (n_batch * n_frames,) + node_v.shape[2:])
    audio = P.reshape(node_a, (n_batch * n_frames, 1, 1, spec.n_bins))
    if spec.input_scale != 1.0:
        video = P.mul(video, as_node(spec.input_scale))
        audio = P.mul(audio, as_node(spec.input_scale))
    visual_frames = P.reshape(
        apply_backbone(
            spec.visual_backbone, model.visual_geometry, params, "visual", video
        ),
        (n_batch, n_frames, spec.feature_dim),
    )
    audio_frames = P.reshape(
        apply_backbone(
            spec.audio_backbone, model.audio_geometry, params, "audio", audio
        ),
        (n_batch, n_frames, spec.audio_dim),
    )
    pooled_v = P.mean(visual_frames, axis=1)
    pooled_a = P.mean(audio_frames, axis=1)
    fused = fuse(spec, pooled_v, pooled_a)
    if dropout:
        assert rng is not None
        keep = rng.random(fused.shape) >= dropout
        fused = P.dropout_mask_apply(fused, keep, 1.0 / (1.0 - dropout))
    logits = P.linear(
        fused, params["fusion.classifier.weight"], params["fusion.classifier.bias"]
    )

    nodes = [visual_frames, audio_frames, pooled_v, pooled_a, fused, logits]
    if not batched:
        nodes = [P.reshape(node, node.shape[1:]) for node in nodes]
    return ForwardTrace(*nodes, params=params)


def predict_logits(
    model: AVModel, dataset: AVDataset, batch_size: int = 64
) -> np.ndarray:
    """Logits (N, n_classes) of a whole split, batch by batch."""
    chunks = []
    for start in range(0, len(dataset), batch_size):
        window = slice(start, start + batch_size)
        trace = forward(model, dataset.x_v[window], dataset.x_a[window])
        chunks.append(trace.logits.values)
    if not chunks:
        return np.zeros((0, model.spec.n_classes))
    return np.concatenate(chunks)


def predict(model: AVModel, dataset: AVDataset, batch_size: int = 64) -> np.ndarray:
    return predict_logits(model, dataset, batch_size).argmax(axis=1)


def accuracy(model: AVModel, dataset: AVDataset) -> float:
    """Top-1 accuracy; NaN on an empty split."""
    if len(dataset) == 0:
        logging.warning(f"accuracy of {model.model_id} requested on an empty split.")
        return float("nan")
    return float((predict(model, dataset) == dataset.y).mean())


def model_grid(seed: int, **geometry: Any) -> Dict[str, AVModel]:
    """
    The eight grid models keyed by id (VsA, VsR, VcA, VcR, RsA, RsR, RcA, RcR).

    Model ``i`` of the grid is initialized from ``derive_seed(seed, i)``.
    """
    return {
        spec.model_id: build_model(spec, derive_seed(seed, index))
        for index, spec in enumerate(grid_specs(**geometry))
    }

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from pyavrobust.attacks.config import AttackConfig
from pyavrobust.avmodels.network import AVModel, ForwardTrace, forward
from pyavrobust.parallel import derive_seed
from pyavrobust.synthav.sample import AVSample
from pyavrobust.synthav.transforms import (
    IDENTITY_PLAN,
    TransformPlan,
    draw_plans,
    make_plan,
)
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import TensorNode, as_node

_MASK_MODES = {
    "A_only": "audio",
    "V_only": "visual",
    "both_sync": "both_sync",
    "both_async": "both_async",
}


def _temporal_variance(frames: TensorNode) -> TensorNode:
    frame_means = P.mean(frames, axis=-1)
    return P.mean(P.var_along_axis(frame_means, axis=-1))


def tia_loss(trace: ForwardTrace) -> TensorNode:
    """
    Temporal variance of the per-frame feature means, summed over modalities.

    ``Var_t[mean_d f_a(t)] + Var_t[mean_d f_v(t)]`` with population variance;
    batched traces are averaged over the batch.

    Raises
    -------
    ValueError:
        Fewer than two frames.
    """
    n_frames = trace.visual_frames.shape[-2]
    if n_frames < 2:
        raise ValueError(f"tia_loss needs at least 2 frames, got {n_frames}")
    return P.add(
        _temporal_variance(trace.audio_frames), _temporal_variance(trace.visual_frames)
    )


def mma_loss(trace: ForwardTrace) -> TensorNode:
    """
    Cosine similarity of the pooled audio and visual features (batch mean).

    Only defined when both modalities have the same feature size, which sum
    fusion guarantees and concat fusion does not; see ``check_surrogates``.
    """
    if trace.pooled_a.shape != trace.pooled_v.shape:
        raise ValueError(
            f"mma_loss needs equal modality feature dims, got {trace.pooled_a.shape} "
            f"and {trace.pooled_v.shape}"
        )
    return P.mean(P.cosine_similarity(trace.pooled_a, trace.pooled_v, axis=-1))


def check_surrogates(models: Sequence[AVModel], cfg: AttackConfig) -> None:
    """
    Reject surrogates the objective of ``cfg`` cannot be computed on.

    Raises
    -------
    ValueError:
        No surrogate, or a method with the cross-modal cosine term against a
        model whose audio and visual feature sizes differ.
    """
    if not models:
        raise ValueError("an attack needs at least one surrogate model")
    if cfg.effective_lambda2 <= 0:
        return
    for model in models:
        spec = model.spec
        if spec.audio_dim != spec.feature_dim:
            raise ValueError(
                f"{cfg.method} aligns pooled audio and visual features, but "
                f"{spec.model_id} has feature dims {spec.feature_dim} (visual) and "
                f"{spec.audio_dim} (audio); use lambda2=0 or equal dims"
            )


def classification_loss(trace: ForwardTrace, label: int) -> TensorNode:
    """Cross-entropy of every row of the logits against one label."""
    rows = int(np.prod(trace.logits.shape[:-1], dtype=np.int64))
    return P.softmax_cross_entropy(trace.logits, np.full(rows, label))


def trace_objective(trace: ForwardTrace, label: int, cfg: AttackConfig) -> TensorNode:
    """``L_cls - lambda1 * L_R - lambda2 * L_M`` on one forward trace."""
    objective = classification_loss(trace, label)
    if cfg.effective_lambda1 > 0:
        penalty = P.mul(tia_loss(trace), as_node(cfg.effective_lambda1))
        objective = P.sub(objective, penalty)
    if cfg.effective_lambda2 > 0:
        penalty = P.mul(mma_loss(trace), as_node(cfg.effective_lambda2))
        objective = P.sub(objective, penalty)
    return objective


def copy_plans(
    cfg: AttackConfig,
    n_frames: int,
    iteration: int,
    partners: Sequence[AVSample] = (),
) -> List[TransformPlan]:
    """
    Copies averaged at one iteration; plan 0 is the identity.

    Masked copies (``mask_ratio > 0``) take precedence over diversified
    copies. The draws are seeded by (cfg.seed, iteration).
    """
    count = cfg.copy_count
    if count == 1:
        return [IDENTITY_PLAN]
    rng = np.random.default_rng(derive_seed(cfg.seed, iteration))
    if cfg.mask_ratio > 0:
        mode = _MASK_MODES[cfg.mask_target]
        params = {"ratio": cfg.mask_ratio}
        return [IDENTITY_PLAN] + [
            make_plan("mask", params, mode, n_frames, rng) for _ in range(count - 1)
        ]
    return draw_plans(n_frames, count, cfg.transforms, rng, partners)


def _stack_copies(
    plans: Sequence[TransformPlan], x_v: TensorNode, x_a: TensorNode
) -> Tuple[TensorNode, TensorNode]:
    videos, audios = [], []
    for plan in plans:
        video, audio = plan.apply_nodes(x_v, x_a)
        videos.append(P.reshape(video, (1,) + video.shape))
        audios.append(P.reshape(audio, (1,) + audio.shape))
    if len(plans) == 1:
        return videos[0], audios[0]
    return P.concat(videos, axis=0), P.concat(audios, axis=0)


def attack_objective(
    models: Sequence[AVModel],
    sample: AVSample,
    delta_v: np.ndarray | TensorNode,
    delta_a: np.ndarray | TensorNode,
    cfg: AttackConfig,
    plans: Optional[Sequence[TransformPlan]] = None,
    dropout: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> TensorNode:
    """
    Mean over copies and surrogate models of ``L_cls - lambda1 L_R - lambda2 L_M``.

    Parameters
    ----------
    models:
        Surrogate models, at least one.
    sample:
        Clean clip and its label.
    delta_v, delta_a:
        Perturbations, same shapes as the clip's modalities; pass variable
        nodes to differentiate with respect to them.
    cfg:
        Attack configuration; the lambda terms only count for the methods
        that use them.
    plans:
        Copies to average; defaults to ``copy_plans(cfg, T, 0)``.
    dropout, rng:
        Fusion-layer dropout applied in every forward pass.

    Returns
    -------
    objective: TensorNode
        Scalar.
    """
    check_surrogates(models, cfg)
    if plans is None:
        plans = copy_plans(cfg, sample.n_frames, 0)
    x_v = P.add(TensorNode.constant(sample.x_v), as_node(delta_v))
    x_a = P.add(TensorNode.constant(sample.x_a), as_node(delta_a))
    return objective_at(models, x_v, x_a, sample.y, cfg, plans, dropout, rng)


def objective_at(
    models: Sequence[AVModel],
    x_v: TensorNode,
    x_a: TensorNode,
    label: int,
    cfg: AttackConfig,
    plans: Sequence[TransformPlan],
    dropout: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> TensorNode:
    """``attack_objective`` on already perturbed inputs."""
    video, audio = _stack_copies(plans, x_v, x_a)
    total: Optional[TensorNode] = None
    for model in models:
        trace = forward(model, video, audio, dropout=dropout, rng=rng)
        term = trace_objective(trace, label, cfg)
        total = term if total is None else P.add(total, term)
    assert total is not None
    return P.mul(total, as_node(1.0 / len(models)))

"""
Sign-gradient ascent inside an L-infinity ball.

``projected_ascent`` is the method-agnostic loop: FGSM is one step of size
epsilon, I-FGSM adds iterations, MI-FGSM accumulates L1-normalized gradients
with decay mu, and NI-FGSM takes the gradient at the look-ahead point
``delta + alpha * mu * m``. ``run_attack`` wires it to the audio-visual
objective.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from pyavrobust.attacks.config import AttackConfig, AttackResult
from pyavrobust.attacks.losses import (
    check_surrogates,
    copy_plans,
    objective_at,
    trace_objective,
)
from pyavrobust.avmodels.network import AVModel, forward
from pyavrobust.exceptions import NonFiniteGradientError
from pyavrobust.synthav.sample import AVSample
from pyavrobust.tensorcore import primitives as P
from pyavrobust.tensorcore.graph import TensorNode, backward

Deltas = List[np.ndarray]
GradientFn = Callable[[Deltas, int], Tuple[float, Deltas]]
ScoreFn = Callable[[Deltas], Tuple[bool, float]]
FeasibleFn = Callable[[Deltas], Deltas]


def project(delta: np.ndarray, eps: float, p: str = "inf") -> np.ndarray:
    """
    Closest point of the L-infinity ball of radius ``eps`` (coordinate clamp).

    Raises
    -------
    ValueError:
        ``eps < 0`` or a norm other than "inf".
    """
    if p != "inf":
        raise ValueError(f"Only the 'inf' norm is implemented, got p={p!r}")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return np.clip(delta, -eps, eps)


def box_feasible(clean: np.ndarray, delta: np.ndarray, eps: float) -> np.ndarray:
    """Project ``delta`` so that ``clean + delta`` stays in [0, 1] and ``|delta| <= eps``."""
    return np.clip(np.clip(clean + project(delta, eps), 0.0, 1.0) - clean, -eps, eps)


@dataclass(frozen=True)
class AscentResult:
    deltas: Deltas
    objective_trace: np.ndarray
    success: bool
    best_iteration: int


def projected_ascent(
    gradient: GradientFn,
    shapes: Sequence[Tuple[int, ...]],
    epsilons: Sequence[float],
    step_sizes: Sequence[float],
    n_steps: int,
    momentum: Optional[float] = None,
    nesterov: bool = False,
    feasible: Optional[FeasibleFn] = None,
    score: Optional[ScoreFn] = None,
) -> AscentResult:
    """
    Maximize an objective over perturbations in per-input L-infinity balls.

    Parameters
    ----------
    gradient:
        ``gradient(deltas, k)`` returns the objective value and its gradient
        with respect to each delta at iteration ``k`` (1-based).
    shapes:
        Shape of each perturbation; all start at zero.
    epsilons, step_sizes:
        Radius and step size per perturbation.
    n_steps:
        K >= 1.
    momentum:
        mu; None disables the accumulated gradient. Each input keeps its own
        accumulator ``m = mu * m + g / ||g||_1``.
    nesterov:
        Evaluate the gradient at ``delta + alpha * mu * m``.
    feasible:
        Maps a step to the feasible set; defaults to ``project``.
    score:
        ``score(deltas)`` -> (success, value) of an iterate. The reported
        iterate maximizes (success, value); without a score the last iterate
        is reported.

    Raises
    -------
    NonFiniteGradientError:
        A gradient entry is NaN or infinite.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if feasible is None:

        def feasible(deltas: Deltas) -> Deltas:
            return [project(d, e) for d, e in zip(deltas, epsilons)]

    deltas: Deltas = [np.zeros(shape) for shape in shapes]
    accum: Deltas = [np.zeros(shape) for shape in shapes]
    mu = 0.0 if momentum is None else momentum

    best: Optional[Tuple[bool, float]] = None
    best_deltas, best_iteration = deltas, 0
    trace = np.zeros(n_steps)
    for k in range(1, n_steps + 1):
        point = deltas
        if nesterov:
            point = feasible(
                [d + a * mu * m for d, a, m in zip(deltas, step_sizes, accum)]
            )
        value, grads = gradient(point, k)
        if not all(np.isfinite(g).all() for g in grads):
            raise NonFiniteGradientError(k)

        directions = grads
        if momentum is not None:
            accum = [
                mu * m + g / max(float(np.abs(g).sum()), np.finfo(float).tiny)
                for m, g in zip(accum, grads)
            ]
            directions = accum
        deltas = feasible(
            [d + a * np.sign(g) for d, a, g in zip(deltas, step_sizes, directions)]
        )

        if score is None:
            trace[k - 1] = value
            best_deltas, best_iteration = deltas, k
            continue
        key = score(deltas)
        trace[k - 1] = key[1]
        if best is None or key > best:
            best, best_deltas, best_iteration = key, deltas, k
    success = bool(best[0]) if best is not None else False
    return AscentResult(best_deltas, trace, success, best_iteration)


def _top1(model: AVModel, x_v: np.ndarray, x_a: np.ndarray) -> int:
    return int(np.argmax(forward(model, x_v, x_a).logits.values))


def run_attack(
    models: Sequence[AVModel],
    sample: AVSample,
    cfg: AttackConfig,
    partners: Sequence[AVSample] = (),
    victims: Optional[Sequence[AVModel]] = None,
) -> AttackResult:
    """
    Craft an adversarial clip against one or more surrogate models.

    Parameters
    ----------
    models:
        Surrogates; the objective and the white-box success use their mean.
    sample:
        Clean clip.
    cfg:
        Method, budget and loss weights; deterministic per ``cfg.seed``.
    partners:
        Mixup partner pool for diversified copies.
    victims:
        Models whose top-1 prediction on the result is recorded in
        ``AttackResult.transfer``.

    Returns
    -------
    result: AttackResult

    Raises
    -------
    NonFiniteGradientError:
        Carries the iteration index.
    ValueError:
        No surrogate, or surrogates the objective of ``cfg`` is undefined on.
    """
    check_surrogates(models, cfg)
    eps_v, eps_a = cfg.budget.epsilons

    def feasible(deltas: Deltas) -> Deltas:
        return [
            box_feasible(sample.x_v, deltas[0], eps_v),
            box_feasible(sample.x_a, deltas[1], eps_a),
        ]

    def gradient(deltas: Deltas, k: int) -> Tuple[float, Deltas]:
        delta_v = TensorNode.variable(deltas[0])
        delta_a = TensorNode.variable(deltas[1])
        x_v = P.add(TensorNode.constant(sample.x_v), delta_v)
        x_a = P.add(TensorNode.constant(sample.x_a), delta_a)
        plans = copy_plans(cfg, sample.n_frames, k, partners)
        objective = objective_at(models, x_v, x_a, sample.y, cfg, plans)
        backward(objective)
        return objective.item(), [
            delta_v.grad if delta_v.grad is not None else np.zeros_like(deltas[0]),
            delta_a.grad if delta_a.grad is not None else np.zeros_like(deltas[1]),
        ]

    def score(deltas: Deltas) -> Tuple[bool, float]:
        x_v, x_a = sample.x_v + deltas[0], sample.x_a + deltas[1]
        logits, values = [], []
        for model in models:
            trace = forward(model, x_v, x_a)
            logits.append(trace.logits.values)
            values.append(trace_objective(trace, sample.y, cfg).item())
        success = int(np.argmax(np.mean(logits, axis=0))) != sample.y
        return success, float(np.mean(values))

    momentum = cfg.budget.momentum if cfg.uses_momentum else None
    outcome = projected_ascent(
        gradient,
        shapes=(sample.x_v.shape, sample.x_a.shape),
        epsilons=cfg.budget.epsilons,
        step_sizes=cfg.step_sizes,
        n_steps=cfg.budget.steps,
        momentum=momentum,
        nesterov=cfg.method == "NIFGSM",
        feasible=feasible,
        score=score,
    )
    delta_v, delta_a = outcome.deltas
    result = AttackResult(
        delta_v=delta_v,
        delta_a=delta_a,
        adv_v=np.clip(sample.x_v + delta_v, 0.0, 1.0),
        adv_a=np.clip(sample.x_a + delta_a, 0.0, 1.0),
        objective_trace=outcome.objective_trace,
        success=outcome.success,
        best_iteration=outcome.best_iteration,
    )
    if victims:
        result = result.with_transfer(
            {
                victim.model_id: _top1(victim, result.adv_v, result.adv_a) != sample.y
                for victim in victims
            }
        )
    return result


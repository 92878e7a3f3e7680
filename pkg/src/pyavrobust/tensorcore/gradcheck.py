from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from pyavrobust.tensorcore.graph import TensorNode, backward

GraphBuilder = Callable[..., TensorNode]


@dataclass(frozen=True)
class GradientCheckReport:
    """
    Outcome of a central finite-difference comparison.

    Attributes
    -----------
    max_rel_err: float
        Largest ``|analytic - numeric| / max(|analytic|, |numeric|)`` over all
        coordinates of all inputs; coordinates that agree within ``atol`` count
        as zero error.
    passed: bool
        True iff every value was finite and ``max_rel_err <= tol``.
    n_non_finite: int
        Number of non-finite function evaluations encountered.
    analytic: list of np.ndarray
    numeric: list of np.ndarray
    """

    max_rel_err: float
    passed: bool
    n_non_finite: int
    analytic: List[np.ndarray]
    numeric: List[np.ndarray]


def _evaluate(f: GraphBuilder, points: Sequence[np.ndarray]) -> float:
    return f(*[TensorNode.constant(p) for p in points]).item()


def finite_difference_check(
    f: GraphBuilder,
    point: np.ndarray | Sequence[np.ndarray],
    h: float = 1e-4,
    tol: float = 1e-4,
    atol: float = 1e-7,
) -> GradientCheckReport:
    """
    Compare ``backward`` against central differences, coordinate by coordinate.

    Parameters
    ----------
    f:
        Graph builder taking one ``TensorNode`` per input and returning a
        scalar node.
    point:
        A single array or a sequence of arrays, one per input of ``f``.
    h:
        Finite-difference step.
    tol:
        Relative error tolerance.
    atol:
        Absolute differences up to ``atol`` are treated as agreement, so
        gradients that vanish analytically do not fail on round-off.

    Returns
    -------
    report: GradientCheckReport

    Raises
    -------
    ValueError:
        ``h`` is not positive.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    points = [np.array(point, dtype=np.float64)] if isinstance(point, np.ndarray) else [
        np.array(p, dtype=np.float64) for p in point
    ]

    variables = [TensorNode.variable(p) for p in points]
    root = f(*variables)
    grads = backward(root)
    analytic = [
        np.array(grads.get(var, np.zeros_like(var.values))) for var in variables
    ]

    n_non_finite = 0 if np.isfinite(root.item()) else 1
    numeric: List[np.ndarray] = []
    for index, base in enumerate(points):
        estimate = np.zeros_like(base)
        for coord in np.ndindex(base.shape):
            shifted = [p.copy() for p in points]
            shifted[index][coord] = base[coord] + h
            upper = _evaluate(f, shifted)
            shifted[index][coord] = base[coord] - h
            lower = _evaluate(f, shifted)
            if not (np.isfinite(upper) and np.isfinite(lower)):
                n_non_finite += 1
            estimate[coord] = (upper - lower) / (2.0 * h)
        numeric.append(estimate)

    max_rel_err = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        diff = np.abs(a - n)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), np.finfo(float).tiny)
        err = np.where(diff <= atol, 0.0, diff / scale)
        max_rel_err = max(max_rel_err, float(np.max(np.nan_to_num(err, nan=np.inf))))

    if n_non_finite:
        logging.warning(
            f"Finite-difference check saw {n_non_finite} non-finite evaluations."
        )
    passed = n_non_finite == 0 and max_rel_err <= tol
    return GradientCheckReport(
        max_rel_err=max_rel_err,
        passed=passed,
        n_non_finite=n_non_finite,
        analytic=analytic,
        numeric=numeric,
    )

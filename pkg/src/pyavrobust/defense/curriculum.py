from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Tuple

SchedulerKind = Literal["none", "constant", "cyclic", "linear", "cosine"]
SCHEDULERS: Tuple[str, ...] = ("none", "constant", "cyclic", "linear", "cosine")
TARGETS: Tuple[str, ...] = ("both", "data", "model")


def lerp(lo: float, hi: float, t: float) -> float:
    """``lo`` at t = 0 and ``hi`` at t = 1, both exactly."""
    return lo * (1.0 - t) + hi * t


@dataclass(frozen=True)
class SchedulerConfig:
    """
    Randomized adversarial curriculum.

    Attributes
    -----------
    kind: str = "cyclic"
        "none" (no masking or dropout, full attack steps), "constant",
        "cyclic" (triangular wave lo -> hi -> lo over each period), "linear"
        (lo -> hi over the run) or "cosine" (half-cosine lo -> hi over the run).
    lo, hi: float = 0.05, 0.20
        Range of the ratio, ``0 < lo <= hi < 1``.
    value: float = 0.20
        The ratio of the "constant" scheduler.
    period: int = 10
        Steps per cycle, >= 2.
    k_lo, k_hi: int = 2, 5
        Range of the attack step count, interpolated on the same phase.
    target: str = "both"
        "both" keeps rho_f = rho_x, "data" drives rho_x only and "model"
        drives rho_f only.
    """

    kind: str = "cyclic"
    lo: float = 0.05
    hi: float = 0.20
    value: float = 0.20
    period: int = 10
    k_lo: int = 2
    k_hi: int = 5
    target: str = "both"

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULERS:
            raise ValueError(
                f"Unknown scheduler {self.kind!r}. Choose from {SCHEDULERS}"
            )
        if self.target not in TARGETS:
            raise ValueError(
                f"Unknown curriculum target {self.target!r}. Choose from {TARGETS}"
            )
        if not 0.0 < self.lo <= self.hi < 1.0:
            raise ValueError(f"need 0 < lo <= hi < 1, got lo={self.lo}, hi={self.hi}")
        if not 0.0 <= self.value < 1.0:
            raise ValueError(f"value must lie in [0, 1), got {self.value}")
        if self.period < 2:
            raise ValueError(f"period must be >= 2, got {self.period}")
        if not 1 <= self.k_lo <= self.k_hi:
            raise ValueError(
                f"need 1 <= k_lo <= k_hi, got k_lo={self.k_lo}, k_hi={self.k_hi}"
            )


@dataclass(frozen=True)
class CurriculumState:
    """
    Position in the curriculum and the values that hold there.

    Attributes
    -----------
    step: int
        Global step counter, from 0.
    total_steps: int
        Length of the run (t_max = total_steps - 1).
    rho_x, rho_f: float
        Data-level frame masking ratio and fusion-layer dropout ratio.
    n_attack_steps: int
        Ascent iterations of the inner attack.
    """

    step: int = 0
    total_steps: int = 1
    rho_x: float = 0.0
    rho_f: float = 0.0
    n_attack_steps: int = 1

    def advance(self) -> "CurriculumState":
        return replace(self, step=self.step + 1)


def phase(step: int, total_steps: int, cfg: SchedulerConfig) -> float:
    """Position in [0, 1] between ``lo`` (0) and ``hi`` (1)."""
    if cfg.kind in ("none", "constant"):
        return 1.0
    if cfg.kind == "cyclic":
        t = (step % cfg.period) / (cfg.period / 2.0)
        return 1.0 - abs(t - 1.0)
    t_max = max(total_steps - 1, 1)
    t = min(max(step, 0), t_max) / t_max
    if cfg.kind == "linear":
        return t
    return (1.0 - math.cos(math.pi * t)) / 2.0


def schedule(state: CurriculumState, cfg: SchedulerConfig) -> CurriculumState:
    """
    Values of the curriculum at ``state.step``.

    Returns
    -------
    state: CurriculumState
        ``state`` with rho_x, rho_f and n_attack_steps filled in.
    """
    t = phase(state.step, state.total_steps, cfg)
    if cfg.kind == "none":
        ratio = 0.0
    elif cfg.kind == "constant":
        ratio = cfg.value
    else:
        ratio = lerp(cfg.lo, cfg.hi, t)
    rho_x = ratio if cfg.target in ("both", "data") else 0.0
    rho_f = ratio if cfg.target in ("both", "model") else 0.0
    n_steps = max(1, int(math.floor(lerp(cfg.k_lo, cfg.k_hi, t) + 0.5)))
    return replace(state, rho_x=rho_x, rho_f=rho_f, n_attack_steps=n_steps)

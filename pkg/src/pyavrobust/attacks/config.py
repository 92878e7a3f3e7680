from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np

from pyavrobust.synthav.corruption import MASK_TARGETS
from pyavrobust.synthav.transforms import TransformPolicy

Method = Literal["FGSM", "IFGSM", "MIFGSM", "NIFGSM", "TIA", "MMA", "TMA"]
METHODS: Tuple[str, ...] = ("FGSM", "IFGSM", "MIFGSM", "NIFGSM", "TIA", "MMA", "TMA")
MOMENTUM_METHODS = frozenset({"MIFGSM", "NIFGSM", "TIA", "MMA", "TMA"})
DIVERSE_METHODS = frozenset({"TIA", "TMA"})
TEMPORAL_METHODS = frozenset({"TIA", "TMA"})
ALIGNMENT_METHODS = frozenset({"MMA", "TMA"})

DEFAULT_EPSILON = 8.0 / 255.0


@dataclass(frozen=True)
class Budget:
    """
    L-infinity perturbation budget and step schedule.

    Attributes
    -----------
    p: str = "inf"
        Norm order; only "inf" is implemented.
    eps_v, eps_a: float = 8/255
        Per-modality radii.
    alpha_v, alpha_a: float, optional
        Step sizes; default to a quarter of the matching radius.
    steps: int = 10
        K, the number of ascent iterations.
    momentum: float = 1.0
        mu, the decay of the accumulated gradient.
    """

    p: str = "inf"
    eps_v: float = DEFAULT_EPSILON
    eps_a: float = DEFAULT_EPSILON
    alpha_v: Optional[float] = None
    alpha_a: Optional[float] = None
    steps: int = 10
    momentum: float = 1.0

    def __post_init__(self) -> None:
        if self.p != "inf":
            raise ValueError(f"Only the 'inf' norm is implemented, got p={self.p!r}")
        if self.eps_v < 0 or self.eps_a < 0:
            raise ValueError(f"eps must be >= 0, got {(self.eps_v, self.eps_a)}")
        for name in ("alpha_v", "alpha_a"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.momentum < 0:
            raise ValueError(f"momentum must be >= 0, got {self.momentum}")

    @property
    def epsilons(self) -> Tuple[float, float]:
        return self.eps_v, self.eps_a

    @property
    def step_sizes(self) -> Tuple[float, float]:
        return (
            self.eps_v / 4.0 if self.alpha_v is None else self.alpha_v,
            self.eps_a / 4.0 if self.alpha_a is None else self.alpha_a,
        )

    def with_epsilon(self, eps: float) -> "Budget":
        """Same schedule at radius ``eps`` for both modalities (step sizes rescale)."""
        return replace(self, eps_v=eps, eps_a=eps, alpha_v=None, alpha_a=None)


@dataclass(frozen=True)
class AttackConfig:
    """
    One attack: method, budget and loss weighting.

    Attributes
    -----------
    method: str = "TMA"
        One of FGSM, IFGSM, MIFGSM, NIFGSM, TIA, MMA, TMA.
    budget: Budget
    lambda1: float = 1.0
        Weight of the temporal-variance term; used by TIA and TMA only.
    lambda2: float = 1.0
        Weight of the cross-modal cosine term; used by MMA and TMA only.
    n_copies: int = 4
        Copies averaged per gradient: diversified copies for TIA/TMA, masked
        copies for any method when ``mask_ratio > 0``. Copy 0 is the
        untransformed input.
    transforms: TransformPolicy
        Distribution of the diversified copies.
    mask_ratio: float = 0.0
        rho of the masked copies; 0 disables them.
    mask_target: str = "both_sync"
        Modalities the masked copies touch: A_only, V_only, both_sync or
        both_async.
    surrogates: tuple of str
        Surrogate model ids; more than one gives an ensemble attack.
    seed: int = 0
    """

    method: str = "TMA"
    budget: Budget = field(default_factory=Budget)
    lambda1: float = 1.0
    lambda2: float = 1.0
    n_copies: int = 4
    transforms: TransformPolicy = field(default_factory=TransformPolicy)
    mask_ratio: float = 0.0
    mask_target: str = "both_sync"
    surrogates: Tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(
                f"Unknown attack method {self.method!r}. Choose from {METHODS}"
            )
        if self.method == "FGSM" and self.budget.steps != 1:
            raise ValueError(
                f"FGSM is a single-step attack, got budget.steps={self.budget.steps}"
            )
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(
                f"lambdas must be >= 0, got {(self.lambda1, self.lambda2)}"
            )
        if self.n_copies < 1:
            raise ValueError(f"n_copies must be >= 1, got {self.n_copies}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if self.mask_target not in MASK_TARGETS:
            raise ValueError(
                f"Unknown mask_target {self.mask_target!r}. Choose from {MASK_TARGETS}"
            )

    @classmethod
    def for_method(cls, method: str, **kwargs: Any) -> "AttackConfig":
        """Config for ``method``; FGSM gets a single step of size epsilon."""
        budget: Budget = kwargs.pop("budget", Budget())
        if method == "FGSM":
            budget = replace(budget, steps=1, alpha_v=None, alpha_a=None)
        return cls(method=method, budget=budget, **kwargs)

    def with_method(self, method: str) -> "AttackConfig":
        fields = {
            k: getattr(self, k) for k in self.__dataclass_fields__ if k != "method"
        }
        return AttackConfig.for_method(method, **fields)

    @property
    def effective_lambda1(self) -> float:
        return self.lambda1 if self.method in TEMPORAL_METHODS else 0.0

    @property
    def effective_lambda2(self) -> float:
        return self.lambda2 if self.method in ALIGNMENT_METHODS else 0.0

    @property
    def step_sizes(self) -> Tuple[float, float]:
        if self.method == "FGSM":
            return self.budget.epsilons
        return self.budget.step_sizes

    @property
    def uses_momentum(self) -> bool:
        return self.method in MOMENTUM_METHODS

    @property
    def copy_count(self) -> int:
        if self.mask_ratio > 0 or self.method in DIVERSE_METHODS:
            return self.n_copies
        return 1


@dataclass(frozen=True)
class AttackResult:
    """
    Outcome of one attack on one clip.

    Attributes
    -----------
    delta_v, delta_a: np.ndarray
        Best perturbation found; within the budget exactly.
    adv_v, adv_a: np.ndarray
        Perturbed inputs, clipped to [0, 1].
    objective_trace: np.ndarray
        Untransformed-copy objective of iterates 1..K.
    success: bool
        White-box success (top-1 differs from the label) of the best iterate.
    best_iteration: int
        1-based index of the reported iterate.
    transfer: Dict[str, bool]
        Per-victim success, filled by ``with_transfer``.
    """

    delta_v: np.ndarray
    delta_a: np.ndarray
    adv_v: np.ndarray
    adv_a: np.ndarray
    objective_trace: np.ndarray
    success: bool
    best_iteration: int
    transfer: Dict[str, bool] = field(default_factory=dict)

    def with_transfer(self, outcomes: Dict[str, bool]) -> "AttackResult":
        return replace(self, transfer={**self.transfer, **outcomes})

    @property
    def linf(self) -> Tuple[float, float]:
        return float(np.max(np.abs(self.delta_v))), float(np.max(np.abs(self.delta_a)))

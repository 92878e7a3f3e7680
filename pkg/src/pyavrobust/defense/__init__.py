from pyavrobust.defense.ablations import (
    pass_comparison,
    sampling_ablation,
    scheduler_ablation,
)
from pyavrobust.defense.curriculum import (
    SCHEDULERS,
    CurriculumState,
    SchedulerConfig,
    schedule,
)
from pyavrobust.defense.training import (
    LOG_COLUMNS,
    DefenseConfig,
    DefenseResult,
    adversarial_train,
    evaluate_defense,
    robust_accuracy,
)
from pyavrobust.defense.universal import (
    PassCounter,
    Segment,
    UniversalPerturbation,
    craft_universal,
    perturb,
    propagate,
    segment_and_sample,
)

__all__ = [
    "LOG_COLUMNS",
    "SCHEDULERS",
    "CurriculumState",
    "DefenseConfig",
    "DefenseResult",
    "PassCounter",
    "SchedulerConfig",
    "Segment",
    "UniversalPerturbation",
    "adversarial_train",
    "craft_universal",
    "evaluate_defense",
    "pass_comparison",
    "perturb",
    "propagate",
    "robust_accuracy",
    "sampling_ablation",
    "schedule",
    "scheduler_ablation",
    "segment_and_sample",
]

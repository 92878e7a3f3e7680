from pyavrobust.attacks.config import METHODS, AttackConfig, AttackResult, Budget
from pyavrobust.attacks.evaluation import (
    TRANSFER_COLUMNS,
    asr_matrix,
    cosine_vs_asr,
    ensemble_attack,
    ensemble_table,
    iteration_ablation,
    rank_correlation,
    summarize_transfer,
    transfer_matrix,
)
from pyavrobust.attacks.losses import attack_objective, copy_plans, mma_loss, tia_loss
from pyavrobust.attacks.pgd import box_feasible, project, projected_ascent, run_attack

__all__ = [
    "METHODS",
    "TRANSFER_COLUMNS",
    "AttackConfig",
    "AttackResult",
    "Budget",
    "asr_matrix",
    "attack_objective",
    "box_feasible",
    "copy_plans",
    "cosine_vs_asr",
    "ensemble_attack",
    "ensemble_table",
    "iteration_ablation",
    "mma_loss",
    "project",
    "projected_ascent",
    "rank_correlation",
    "run_attack",
    "summarize_transfer",
    "tia_loss",
    "transfer_matrix",
]

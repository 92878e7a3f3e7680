from pyavrobust.synthav.corruption import MASK_TARGETS, draw_mask_indices, temporal_mask
from pyavrobust.synthav.generator import (
    GenConfig,
    frame_energy_correlation,
    generate_dataset,
)
from pyavrobust.synthav.sample import AVDataset, AVSample, DatasetSplits
from pyavrobust.synthav.transforms import (
    IDENTITY_PLAN,
    TransformPlan,
    TransformPolicy,
    diversify,
    draw_plans,
    transform,
)

__all__ = [
    "AVDataset",
    "AVSample",
    "DatasetSplits",
    "GenConfig",
    "IDENTITY_PLAN",
    "MASK_TARGETS",
    "TransformPlan",
    "TransformPolicy",
    "diversify",
    "draw_mask_indices",
    "draw_plans",
    "frame_energy_correlation",
    "generate_dataset",
    "temporal_mask",
    "transform",
]

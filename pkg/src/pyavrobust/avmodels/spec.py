from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import product
from typing import Any, Dict, List, Literal, Optional

Backbone = Literal["toyA", "toyV", "toyR"]
Fusion = Literal["sum", "concat"]

BACKBONES = ("toyA", "toyV", "toyR")
FUSIONS = ("sum", "concat")
GRID_VISUAL = ("toyV", "toyR")
GRID_AUDIO = ("toyA", "toyR")

_BACKBONE_INITIALS = {"toyA": "A", "toyV": "V", "toyR": "R"}
_FUSION_INITIALS = {"sum": "s", "concat": "c"}


@dataclass(frozen=True)
class ModelSpec:
    """
    Architecture of one audio-visual classifier.

    Attributes
    -----------
    visual_backbone: str = "toyV"
        One of "toyA" (1 conv), "toyV" (2 convs) or "toyR" (2 convs plus a
        residual block).
    audio_backbone: str = "toyA"
    fusion: str = "sum"
        "sum" adds the pooled modality vectors, "concat" stacks them.
    n_classes: int = 6
    feature_dim: int = 32
        d, the visual feature size.
    audio_feature_dim: int, optional
        Audio feature size; defaults to ``feature_dim``. Must equal it for
        sum fusion.
    channels, height, width: int
        Video frame geometry.
    n_bins: int
        Spectrogram bins per audio frame.
    input_scale: float = 8.0
        Both modalities are multiplied by it before the backbones, which puts
        the default generator contrast at order-one activations.
    """

    visual_backbone: str = "toyV"
    audio_backbone: str = "toyA"
    fusion: str = "sum"
    n_classes: int = 6
    feature_dim: int = 32
    audio_feature_dim: Optional[int] = None
    channels: int = 1
    height: int = 16
    width: int = 16
    n_bins: int = 16
    input_scale: float = 8.0

    def __post_init__(self) -> None:
        for name in ("visual_backbone", "audio_backbone"):
            if getattr(self, name) not in BACKBONES:
                raise ValueError(
                    f"Unknown {name} {getattr(self, name)!r}. Choose from {BACKBONES}"
                )
        if self.fusion not in FUSIONS:
            raise ValueError(f"Unknown fusion {self.fusion!r}. Choose from {FUSIONS}")
        for name in ("n_classes", "feature_dim", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.input_scale <= 0:
            raise ValueError(f"input_scale must be > 0, got {self.input_scale}")
        if self.audio_dim < 1:
            raise ValueError(f"audio_feature_dim must be >= 1, got {self.audio_dim}")
        if self.height % 2 or self.width % 2 or self.n_bins % 2:
            raise ValueError(
                "height, width and n_bins must be even for the 2x pooling layer, "
                f"got {(self.height, self.width, self.n_bins)}"
            )
        if self.fusion == "sum" and self.audio_dim != self.feature_dim:
            raise ValueError(
                f"sum fusion needs equal feature dims, got visual {self.feature_dim} "
                f"and audio {self.audio_dim}"
            )

    @property
    def audio_dim(self) -> int:
        if self.audio_feature_dim is None:
            return self.feature_dim
        return self.audio_feature_dim

    @property
    def fused_dim(self) -> int:
        if self.fusion == "sum":
            return self.feature_dim
        return self.feature_dim + self.audio_dim

    @property
    def model_id(self) -> str:
        """Visual, fusion and audio initials, e.g. "RsA"."""
        return (
            _BACKBONE_INITIALS[self.visual_backbone]
            + _FUSION_INITIALS[self.fusion]
            + _BACKBONE_INITIALS[self.audio_backbone]
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(**data)


def grid_specs(**geometry: Any) -> List[ModelSpec]:
    """
    The 2 x 2 x 2 grid: visual in (toyV, toyR), fusion in (sum, concat),
    audio in (toyA, toyR). ``geometry`` is forwarded to every spec.
    """
    return [
        ModelSpec(
            visual_backbone=visual, audio_backbone=audio, fusion=fusion, **geometry
        )
        for visual, fusion, audio in product(GRID_VISUAL, FUSIONS, GRID_AUDIO)
    ]

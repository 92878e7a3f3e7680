"""
Experiment configuration: one frozen dataclass per TOML table.

``from_dict`` is strict (unknown keys and invalid values raise ``ConfigError``
naming the dotted key) and ``to_dict`` / ``from_dict`` round-trip losslessly.
"""
from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Type, TypeVar

import tomli_w

from pyavrobust.attacks.config import METHODS, AttackConfig
from pyavrobust.avmodels.training import TrainConfig
from pyavrobust.defense.ablations import SAMPLING_RATIOS, SCHEDULER_KINDS
from pyavrobust.defense.training import DefenseConfig
from pyavrobust.exceptions import ConfigError, MissingArtifactError
from pyavrobust.synthav.corruption import MASK_TARGETS
from pyavrobust.synthav.generator import GenConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FORMAT_VERSION = 1

C = TypeVar("C")


@dataclass(frozen=True)
class ModelConfig:
    """
    Grid settings not implied by the data.

    Attributes
    -----------
    feature_dim: int = 32
        d, the pooled feature size of every backbone.
    input_scale: float = 8.0
        Input multiplier of every grid model.
    """

    feature_dim: int = 32
    input_scale: float = 8.0

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.input_scale <= 0:
            raise ValueError(f"input_scale must be > 0, got {self.input_scale}")


@dataclass(frozen=True)
class StudyConfig:
    """
    Sweeps of the study and ablation commands.

    Attributes
    -----------
    methods: tuple of str
        Methods of ``transfer-matrix`` and ``ensemble-attack``.
    cosine_methods: tuple of str
        Methods of ``cosine-study`` (at least two).
    mask_ratios: tuple of float
        rho values of ``corruption-study``.
    mask_targets: tuple of str
        Targets of ``corruption-study`` and ``masked-copy-study``.
    mask_seeds: int = 5
        Mask draws averaged per (model, target, rho).
    copy_mask_ratios: tuple of float
        rho values of the masked copies in ``masked-copy-study``.
    iteration_steps, iteration_methods:
        Sweep of ``ablate-iterations``.
    sampling_ratios: tuple of float
        alpha values of ``ablate-sampling``.
    schedulers: tuple of str
        Kinds of ``ablate-scheduler``.
    defense_model: str = "VsA"
        Grid architecture trained by ``defend`` and the ablations.
    defense_methods: tuple of str
        White-box attacks of ``eval-defense``.
    test_samples: int, optional
        Attack only the first clips of the test split; all when unset.
    n_partners: int = 8
        Training clips used as the mixup partner pool.
    """

    methods: Tuple[str, ...] = METHODS
    cosine_methods: Tuple[str, ...] = ("FGSM", "IFGSM", "MIFGSM", "TMA")
    mask_ratios: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    mask_targets: Tuple[str, ...] = MASK_TARGETS
    mask_seeds: int = 5
    copy_mask_ratios: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    iteration_steps: Tuple[int, ...] = (1, 2, 5, 10, 20)
    iteration_methods: Tuple[str, ...] = ("IFGSM", "TMA")
    sampling_ratios: Tuple[float, ...] = SAMPLING_RATIOS
    schedulers: Tuple[str, ...] = SCHEDULER_KINDS
    defense_model: str = "VsA"
    defense_methods: Tuple[str, ...] = ("IFGSM", "TMA")
    test_samples: Optional[int] = None
    n_partners: int = 8

    def __post_init__(self) -> None:
        method_fields = (
            "methods",
            "cosine_methods",
            "iteration_methods",
            "defense_methods",
        )
        for name in method_fields:
            unknown = set(getattr(self, name)) - set(METHODS)
            if unknown:
                raise ValueError(f"{name}: unknown methods {sorted(unknown)}")
        if len(set(self.cosine_methods)) < 2:
            raise ValueError("cosine_methods needs at least two methods")
        unknown = set(self.mask_targets) - set(MASK_TARGETS)
        if unknown:
            raise ValueError(f"mask_targets: unknown targets {sorted(unknown)}")
        if any(not 0.0 <= r < 1.0 for r in self.mask_ratios + self.copy_mask_ratios):
            raise ValueError("mask ratios must lie in [0, 1)")
        if any(not 0.0 < a <= 1.0 for a in self.sampling_ratios):
            raise ValueError("sampling_ratios must lie in (0, 1]")
        if any(k < 1 for k in self.iteration_steps):
            raise ValueError("iteration_steps must be >= 1")
        if self.mask_seeds < 1:
            raise ValueError(f"mask_seeds must be >= 1, got {self.mask_seeds}")
        if self.test_samples is not None and self.test_samples < 1:
            raise ValueError(f"test_samples must be >= 1, got {self.test_samples}")
        if self.n_partners < 0:
            raise ValueError(f"n_partners must be >= 0, got {self.n_partners}")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one harness run reads.

    Attributes
    -----------
    format_version: int
        Must equal ``FORMAT_VERSION``.
    seed: int = 0
        Seed of the model grid initialization; ``with_seed`` also rewrites the
        seed of every block.
    out: str = "results"
        Output root; command ``c`` writes ``<out>/<c>/``.
    generator, model, training, attack, defense, studies:
        Parameter blocks, one TOML table each.
    """

    format_version: int = FORMAT_VERSION
    seed: int = 0
    out: str = "results"
    generator: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    studies: StudyConfig = field(default_factory=StudyConfig)

    def __post_init__(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise ValueError(
                f"unsupported format_version {self.format_version}, expected {FORMAT_VERSION}"
            )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with ``seed`` in every block that has one."""
        defense = replace(
            self.defense,
            attack=replace(self.defense.attack, seed=seed),
            training=replace(self.defense.training, seed=seed),
        )
        return replace(
            self,
            seed=seed,
            generator=replace(self.generator, seed=seed),
            training=replace(self.training, seed=seed),
            attack=replace(self.attack, seed=seed),
            defense=defense,
        )

    @property
    def geometry(self) -> Dict[str, Any]:
        """``ModelSpec`` geometry of the grid, taken from the generator."""
        return {
            "n_classes": self.generator.n_classes,
            "feature_dim": self.model.feature_dim,
            "channels": self.generator.channels,
            "height": self.generator.height,
            "width": self.generator.width,
            "n_bins": self.generator.n_bins,
            "input_scale": self.model.input_scale,
        }


def _plain(value: Any) -> Any:
    """Dataclass tree to TOML-ready builtins; None entries are dropped."""
    if is_dataclass(value):
        return {
            f.name: _plain(getattr(value, f.name))
            for f in fields(value)
            if getattr(value, f.name) is not None
        }
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def _frozen(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_frozen(v) for v in value)
    return value


def _build(cls: Type[C], data: Mapping[str, Any], prefix: str) -> C:
    if not isinstance(data, Mapping):
        raise ConfigError(
            prefix or "<root>", f"expected a table, got {type(data).__name__}"
        )
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError(dotted, "unknown key")
        default = getattr(defaults, key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, dotted)
        else:
            kwargs[key] = _frozen(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as error:
        raise ConfigError(prefix or "<root>", str(error)) from error


def to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return _plain(cfg)


def from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    """
    Strict inverse of ``to_dict``; missing keys take their defaults.

    Raises
    -------
    ConfigError:
        Unknown key, wrong type or invalid value; ``field`` holds the dotted
        key (or the table) at fault.
    """
    return _build(ExperimentConfig, data, "")


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical TOML dump."""
    return hashlib.sha256(dumps_config(cfg).encode("utf-8")).hexdigest()


def read_toml(path: str | Path) -> Dict[str, Any]:
    """
    Raw tables of a TOML file.

    Raises
    -------
    MissingArtifactError:
        ``path`` does not exist.
    ConfigError:
        The file is not valid TOML.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(str(path))
    try:
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as error:
        raise ConfigError(str(path), f"invalid TOML: {error}") from error


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a TOML config file, see ``read_toml`` and ``from_dict``."""
    return from_dict(read_toml(path))


def dump_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_config(cfg), encoding="utf-8")
    return path


def parse_override(raw: str) -> Tuple[str, Any]:
    """
    ``"attack.budget.steps=5"`` -> ``("attack.budget.steps", 5)``.

    The value is read as a TOML value; bare words fall back to strings.
    """
    if "=" not in raw:
        raise ConfigError(raw, "override must look like key=value")
    key, text = (part.strip() for part in raw.split("=", 1))
    if not key:
        raise ConfigError(raw, "override without a key")
    try:
        value = tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        value = text
    return key, value


def apply_overrides(
    data: Dict[str, Any], overrides: Sequence[Tuple[str, Any]]
) -> Dict[str, Any]:
    """Set dotted keys in a nested config dict (a copy); tables are created on demand."""
    merged = _copy_tables(data)
    for key, value in overrides:
        node = merged
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(key, f"{part!r} is not a table")
            node = child
        node[parts[-1]] = value
    return merged


def _copy_tables(data: Mapping[str, Any]) -> Dict[str, Any]:
    return {
        k: _copy_tables(v) if isinstance(v, Mapping) else v for k, v in data.items()
    }

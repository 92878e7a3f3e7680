from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from pyavrobust.avmodels.network import AVModel, build_model
from pyavrobust.avmodels.spec import ModelSpec
from pyavrobust.container import Container
from pyavrobust.exceptions import ContainerFormatError, MissingArtifactError


def save_checkpoint(model: AVModel, path: str | Path) -> Path:
    """
    Write ``model`` as a "checkpoint" container.

    The header meta holds ``spec`` and ``seed``; every parameter is one named
    float32 array. Parameters are rounded to float32 on disk.
    """
    container = Container(
        kind="checkpoint",
        meta={
            "model_id": model.model_id,
            "seed": int(model.seed),
            "spec": model.spec.to_dict(),
        },
        arrays=dict(model.params),
    )
    return container.save(path)


def load_checkpoint(path: str | Path) -> AVModel:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises
    -------
    MissingArtifactError:
        No file at ``path``.
    ContainerFormatError:
        Not a checkpoint, or parameters missing for the stored spec.
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    container = Container.load(path, kind="checkpoint")
    try:
        spec = ModelSpec.from_dict(container.meta["spec"])
        seed = int(container.meta["seed"])
    except (KeyError, TypeError, ValueError) as error:
        raise ContainerFormatError(
            f"{path}: invalid checkpoint header ({error})"
        ) from error

    reference = build_model(spec, seed)
    missing = set(reference.params) - set(container.arrays)
    if missing:
        raise ContainerFormatError(f"{path}: missing parameters {sorted(missing)}")
    params: Dict[str, np.ndarray] = {}
    for name, values in reference.params.items():
        stored = container.arrays[name]
        if stored.shape != values.shape:
            raise ContainerFormatError(
                f"{path}: parameter {name} has shape {stored.shape}, expected {values.shape}"
            )
        params[name] = stored
    return AVModel(spec=spec, seed=seed, params=params)


def save_grid(models: Dict[str, AVModel], directory: str | Path) -> Dict[str, Path]:
    """One ``<model_id>.ckpt`` per model."""
    directory = Path(directory)
    return {
        model_id: save_checkpoint(model, directory / f"{model_id}.ckpt")
        for model_id, model in models.items()
    }


def load_grid(
    directory: str | Path, ids: Optional[List[str]] = None
) -> Dict[str, AVModel]:
    """
    Load checkpoints from ``directory``; all ``*.ckpt`` files when ``ids`` is None.

    Raises
    -------
    MissingArtifactError:
        The directory, or one of the requested checkpoints, does not exist.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingArtifactError(str(directory))
    if ids is None:
        ids = sorted(p.stem for p in directory.glob("*.ckpt"))
        if not ids:
            raise MissingArtifactError(str(directory / "*.ckpt"))
    return {
        model_id: load_checkpoint(directory / f"{model_id}.ckpt") for model_id in ids
    }

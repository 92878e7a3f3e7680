from __future__ import annotations

import json
import logging
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterable, Iterator

import pandas as pd

from pyavrobust._version import __version__
from pyavrobust.exceptions import MissingArtifactError, OutputExistsError
from pyavrobust.harness.config import FORMAT_VERSION, ExperimentConfig, config_hash

MANIFEST = "manifest.json"


def prepare_output(out: str | Path, command: str, overwrite: bool = False) -> Path:
    """
    Create ``<out>/<command>/``.

    Raises
    -------
    OutputExistsError:
        The directory holds files and ``overwrite`` is False.
    """
    directory = Path(out) / command
    if directory.is_dir() and any(directory.iterdir()):
        if not overwrite:
            raise OutputExistsError(str(directory))
        shutil.rmtree(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


@contextmanager
def output_directory(
    out: str | Path, command: str, overwrite: bool = False
) -> Iterator[Path]:
    """
    ``prepare_output`` for the duration of a command.

    The directory is removed again when the body raises, so a failed command
    leaves neither partial results nor an empty directory behind.
    """
    directory = prepare_output(out, command, overwrite)
    try:
        yield directory
    except BaseException:
        logging.warning(f"{command} failed; removing {directory}")
        shutil.rmtree(directory, ignore_errors=True)
        raise


def require(path: str | Path) -> Path:
    """``path`` if it exists, else ``MissingArtifactError`` naming it."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    return path


def write_csv(table: pd.DataFrame, path: Path) -> Path:
    table.to_csv(path, index=False)
    return path


def write_manifest(
    directory: Path, command: str, cfg: ExperimentConfig, files: Iterable[Path]
) -> Path:
    """
    ``manifest.json`` listing the command outputs.

    The content depends on the config and the file names only, so identical
    runs write identical manifests.
    """
    manifest: Dict[str, object] = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "files": sorted(str(Path(f).relative_to(directory)) for f in files),
    }
    path = directory / MANIFEST
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def read_manifest(directory: str | Path) -> Dict[str, object]:
    path = require(Path(directory) / MANIFEST)
    return json.loads(path.read_text(encoding="utf-8"))

"""
Versioned binary container shared by model checkpoints and dataset splits.

Byte layout (all integers little-endian)::

    offset  size  content
    0       4     magic b"AVRB"
    4       4     uint32 format_version
    8       4     uint32 header length n
    12      n     UTF-8 JSON header, keys sorted, no whitespace:
                  {"arrays": [{"name": str, "shape": [int, ...]}, ...],
                   "format_version": int, "kind": str, "meta": {...}}
    12+n    ...   the arrays, in header order, each as a flat C-ordered
                  run of 32-bit little-endian IEEE-754 floats

Any language that can parse JSON and read float32 can load the file.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

from pyavrobust.exceptions import ContainerFormatError

MAGIC = b"AVRB"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_FLOAT = np.dtype("<f4")


@dataclass(frozen=True)
class Container:
    """
    In-memory image of a container file.

    Attributes
    -----------
    kind: str
        Payload kind, e.g. "checkpoint" or "dataset".
    meta: dict
        JSON-serializable header metadata (spec, seed, config echo, ...).
    arrays: Dict[str, np.ndarray]
        Named arrays. Stored as float32; loaded back as float64.
    """

    kind: str
    meta: Dict[str, Any]
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        header = {
            "arrays": [
                {"name": name, "shape": [int(n) for n in np.shape(values)]}
                for name, values in self.arrays.items()
            ],
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "meta": self.meta,
        }
        encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
            "utf-8"
        )
        body = b"".join(
            np.ascontiguousarray(values, dtype=_FLOAT).tobytes()
            for values in self.arrays.values()
        )
        return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(encoded)) + encoded + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Container":
        if len(blob) < _PREFIX.size:
            raise ContainerFormatError("file is shorter than the container prefix")
        magic, version, length = _PREFIX.unpack_from(blob, 0)
        if magic != MAGIC:
            raise ContainerFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise ContainerFormatError(
                f"unsupported format_version {version}, expected {FORMAT_VERSION}"
            )
        start = _PREFIX.size
        header = json.loads(blob[start : start + length].decode("utf-8"))

        offset = start + length
        arrays: Dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            stop = offset + count * _FLOAT.itemsize
            if stop > len(blob):
                raise ContainerFormatError(f"array {entry['name']} is truncated")
            arrays[entry["name"]] = (
                np.frombuffer(blob[offset:stop], dtype=_FLOAT)
                .astype(np.float64)
                .reshape(shape)
            )
            offset = stop
        if offset != len(blob):
            raise ContainerFormatError(f"{len(blob) - offset} trailing bytes")
        return cls(kind=header["kind"], meta=header["meta"], arrays=arrays)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path, kind: str | None = None) -> "Container":
        container = cls.from_bytes(Path(path).read_bytes())
        if kind is not None and container.kind != kind:
            raise ContainerFormatError(
                f"{path} holds a {container.kind!r} container, expected {kind!r}"
            )
        return container

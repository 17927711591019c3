"""Versioned binary checkpoint files.

Layout::

    b"MBLC" | u16 version | u32 header length | UTF-8 JSON header | tensors

All integers are little-endian.  The header records the checkpoint kind, the
architecture, the name and shape of every tensor in payload order, the
normalisation statistics and free-form metadata.  Each tensor follows as
little-endian float32 in row-major order.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from ..errors import FormatError

MAGIC = b"MBLC"
VERSION = 1
KINDS = ("policy", "value", "dynamics", "single_joint")

_PREFIX = struct.Struct("<4sHI")


@dataclass(eq=False)
class Checkpoint:
    kind: str
    spec: dict[str, Any]
    params: dict[str, np.ndarray]
    norm_stats: dict[str, list[float]] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"checkpoint kind must be one of {KINDS}, got {self.kind!r}")
        self.params = {k: np.ascontiguousarray(v, dtype="<f4") for k, v in self.params.items()}
        self.norm_stats = {k: [float(x) for x in v] for k, v in self.norm_stats.items()}
        for key, values in self.norm_stats.items():
            if key.endswith("std") and any(not (x > 0 and math.isfinite(x)) for x in values):
                raise ValueError(f"normalisation statistic {key} must be strictly positive")

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.kind, self.spec, self.norm_stats, self.meta) != (other.kind, other.spec, other.norm_stats, other.meta):
            return False
        if list(self.params) != list(other.params):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.params.values(), other.params.values())
        )

    def header(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "spec": self.spec,
            "tensors": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
            "norm_stats": self.norm_stats,
            "meta": self.meta,
        }

    def to_bytes(self) -> bytes:
        header = json.dumps(self.header(), sort_keys=True, indent=1).encode("utf-8")
        parts = [_PREFIX.pack(MAGIC, VERSION, len(header)), header]
        parts.extend(v.tobytes() for v in self.params.values())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        header, offset = read_header(blob, MAGIC, VERSION)
        params = {}
        try:
            entries = [(t["name"], tuple(int(s) for s in t["shape"])) for t in header["tensors"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed tensor table: {exc}", _PREFIX.size) from None
        for name, shape in entries:
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if offset + nbytes > len(blob):
                raise FormatError(f"truncated tensor {name!r}: need {nbytes} bytes, {len(blob) - offset} left", offset)
            params[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
            offset += nbytes
        if offset != len(blob):
            raise FormatError(f"{len(blob) - offset} unexpected trailing bytes", offset)
        try:
            return cls(header["kind"], header["spec"], params, header.get("norm_stats", {}), header.get("meta", {}))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"invalid checkpoint header: {exc}", _PREFIX.size) from None


def read_header(blob: bytes, magic: bytes, version: int) -> tuple[dict, int]:
    """Validate the fixed prefix of an ``magic``-tagged file and decode its JSON header.

    Returns the header and the byte offset of the payload.
    """
    if len(blob) < _PREFIX.size:
        raise FormatError(f"file too short for the {_PREFIX.size}-byte prefix", len(blob))
    got_magic, got_version, hlen = _PREFIX.unpack_from(blob, 0)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}", 0)
    if got_version != version:
        raise FormatError(f"unsupported format version {got_version}, expected {version}", 4)
    start = _PREFIX.size
    if start + hlen > len(blob):
        raise FormatError(f"truncated header: declared {hlen} bytes, {len(blob) - start} present", start)
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", start) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", start)
    return header, start + hlen


def write_prefixed(path: Union[str, os.PathLike], magic: bytes, version: int, header: dict, payload: bytes) -> None:
    h = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    Path(path).write_bytes(_PREFIX.pack(magic, version, len(h)) + h + payload)


def save(path: Union[str, os.PathLike], ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load(path: Union[str, os.PathLike]) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())

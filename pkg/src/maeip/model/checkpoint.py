"""Named-tensor checkpoint archive with a JSON config sidecar.

Layout (little-endian)::

    b"CSFK1"  uint32 entry_count
    per entry: uint32 name_len, name (UTF-8), uint8 dtype_code, uint8 rank,
               uint32 extent * rank, raw values
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..autograd import Tensor
from ..errors import CheckpointError, ConfigError
from .config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"CSFK1"
OPTIM_PREFIX = "optim."

DTYPE_CODES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
}
_CODE_FOR_KIND = {"float32": 0, "float64": 1, "int64": 2}


@dataclass
class Checkpoint:
    """Contents of one archive, split into model parameters and optimizer entries."""

    params: dict[str, np.ndarray]
    optim: dict[str, np.ndarray] = field(default_factory=dict)
    config: ModelConfig | None = None
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class LoadReport:
    """Which parameters came from a checkpoint and which kept their fresh values."""

    loaded: list[str]
    fresh: list[str]
    unused: list[str]


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _as_array(value: Tensor | np.ndarray | int | float) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if arr.dtype.name not in _CODE_FOR_KIND:
        if np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.int64)
        else:
            raise CheckpointError(f"cannot store dtype {arr.dtype}")
    return arr


def write_archive(path: str | Path, entries: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write named arrays in the CSFK1 layout."""
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for name, value in entries.items():
        arr = _as_array(value)
        raw_name = name.encode("utf-8")
        code = _CODE_FOR_KIND[arr.dtype.name]
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_archive(path: str | Path) -> dict[str, np.ndarray]:
    """Read every entry of a CSFK1 archive.

    Raises:
        CheckpointError: On a wrong magic, unknown dtype, truncation or trailing bytes
    """
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if buf[:4] == MAGIC[:4] and buf[4:5] != MAGIC[4:5]:
        raise CheckpointError(f"{path}: unsupported checkpoint version {buf[4:5]!r}")
    if buf[:5] != MAGIC:
        raise CheckpointError(f"{path}: not a CSFK1 checkpoint")

    offset = 5

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {offset}")
        out = buf[offset : offset + n]
        offset += n
        return out

    (count,) = struct.unpack("<I", take(4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: entry name is not UTF-8") from exc
        code, rank = struct.unpack("<BB", take(2))
        if code not in DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = DTYPE_CODES[code]
        count_values = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(count_values * dtype.itemsize), dtype=dtype).reshape(shape)
        if name in entries:
            raise CheckpointError(f"{path}: duplicate entry {name!r}")
        entries[name] = data.astype(dtype.newbyteorder("="))
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")
    return entries


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, Tensor | np.ndarray],
    config: ModelConfig | None = None,
    optim: Mapping[str, np.ndarray] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> Path:
    """Write parameters (plus optional optimizer entries) and the JSON sidecar.

    Optimizer entries are stored under the ``optim.`` prefix.
    """
    entries: dict[str, Tensor | np.ndarray] = dict(params)
    for name, value in (optim or {}).items():
        entries[OPTIM_PREFIX + name] = value
    write_archive(path, entries)
    sidecar = {"format": MAGIC.decode(), "model": config.to_dict() if config else None, "meta": dict(meta or {})}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2))
    logger.info("saved %d tensors to %s", len(entries), path)
    return Path(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read an archive and, when present, its sidecar."""
    entries = read_archive(path)
    params = {k: v for k, v in entries.items() if not k.startswith(OPTIM_PREFIX)}
    optim = {k[len(OPTIM_PREFIX) :]: v for k, v in entries.items() if k.startswith(OPTIM_PREFIX)}
    config, meta = None, {}
    side = sidecar_path(path)
    if side.exists():
        try:
            data = json.loads(side.read_text())
            if data.get("model") is not None:
                config = ModelConfig.from_dict(data["model"])
            meta = data.get("meta") or {}
        except (json.JSONDecodeError, ConfigError, AttributeError) as exc:
            raise CheckpointError(f"{side}: malformed sidecar: {exc}") from exc
    return Checkpoint(params, optim, config, meta)


def load_into(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray], strict: bool = False) -> LoadReport:
    """Copy matching entries into ``params`` in place.

    Names missing from ``arrays`` keep their current values and are reported
    as fresh. Shape mismatches always raise.

    Raises:
        CheckpointError: On a shape mismatch, or on any fresh name when ``strict``
    """
    loaded, fresh = [], []
    for name, tensor in params.items():
        if name not in arrays:
            fresh.append(name)
            continue
        value = arrays[name]
        if value.shape != tensor.shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {tensor.shape}")
        tensor.data = value.astype(tensor.dtype, copy=True)
        tensor.grad = None
        loaded.append(name)
    unused = sorted(set(arrays) - set(params))
    if strict and fresh:
        raise CheckpointError(f"checkpoint lacks {len(fresh)} parameters, first {fresh[0]!r}")
    logger.info("loaded %d parameters, %d left at initialisation", len(loaded), len(fresh))
    return LoadReport(loaded, fresh, unused)

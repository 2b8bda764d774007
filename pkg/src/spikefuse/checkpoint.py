"""Single-file checkpoints.

Layout: 8-byte magic, little-endian uint32 version, uint64 header length,
UTF-8 JSON header, raw array payload. The header lists each array's name,
dtype, shape and byte offset plus a CRC32 of the payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SPKFUSE\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_state: dict[str, np.ndarray]
    config: dict
    epoch: int = 0
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    entries, chunks, offset = [], [], 0
    for group, arrays in (("model", ckpt.model_state), ("optim", ckpt.optimizer_state)):
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            raw = arr.tobytes()
            entries.append({"group": group, "name": name, "dtype": arr.dtype.str,
                            "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps({
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "arrays": entries,
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }).encode()
    Path(path).write_bytes(_PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload)


def load_checkpoint(path: str | Path, expected_config: dict | None = None) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CorruptCheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len])
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    payload = blob[start + header_len:]
    if len(payload) != header["payload_bytes"] or zlib.crc32(payload) != header["crc32"]:
        raise CorruptCheckpointError(f"{path}: payload truncated or damaged")
    if expected_config is not None and header["config"] != expected_config:
        raise ConfigMismatchError(f"{path}: stored config differs from the requested one")
    groups: dict[str, dict[str, np.ndarray]] = {"model": {}, "optim": {}}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        groups[e["group"]][e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return Checkpoint(groups["model"], header["config"], header["epoch"], groups["optim"])

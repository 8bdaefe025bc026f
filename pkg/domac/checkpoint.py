"""Versioned binary checkpoints.

Layout, all integers little-endian:

    b"DOMACCK1"                 8-byte magic / format tag
    uint32  header_length
    header                      UTF-8 JSON, sorted keys, compact separators
    array data                  raw '<f8' values, in header["arrays"] order
    uint32  crc32               zlib.crc32 over every preceding byte

The header holds everything except the arrays: format version, variant,
config snapshot, counters, RNG states, optimizer scalars, environment
snapshots and the array index (name, shape, offset into the data section).
"""
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from domac.errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError

MAGIC = b"DOMACCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    variant: str
    config: dict
    counters: Dict[str, int]
    rng_states: dict
    optimizers: dict
    env_snapshots: List[dict] = field(default_factory=list)
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _header(checkpoint: Checkpoint):
    index, offset = [], 0
    for name in sorted(checkpoint.arrays):
        arr = checkpoint.arrays[name]
        nbytes = int(np.asarray(arr).size) * 8
        index.append({"name": name, "shape": [int(s) for s in np.shape(arr)], "offset": offset})
        offset += nbytes
    return {
        "version": checkpoint.version,
        "variant": checkpoint.variant,
        "config": checkpoint.config,
        "counters": checkpoint.counters,
        "rng_states": checkpoint.rng_states,
        "optimizers": checkpoint.optimizers,
        "env_snapshots": checkpoint.env_snapshots,
        "extra": checkpoint.extra,
        "arrays": index,
    }


def encode(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(_header(checkpoint), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(header)), header]
    for name in sorted(checkpoint.arrays):
        parts.append(np.ascontiguousarray(checkpoint.arrays[name], dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointCorruptError("checkpoint is truncated", details={"bytes": len(blob)})
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError("not a DOMACCK1 checkpoint", details={"magic": blob[:len(MAGIC)].hex()})
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointCorruptError("checksum mismatch", details={"bytes": len(blob)})
    (header_len,) = struct.unpack("<I", body[8:12])
    start = 12 + header_len
    if start > len(body):
        raise CheckpointCorruptError("header runs past the end of the file")
    try:
        header = json.loads(body[12:start].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointCorruptError(f"unreadable header: {e}")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {header.get('version')} is not supported",
                                     details={"expected": FORMAT_VERSION})

    data = body[start:]
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        lo, hi = entry["offset"], entry["offset"] + 8 * count
        if hi > len(data):
            raise CheckpointCorruptError(f"array {entry['name']} runs past the end of the file")
        arrays[entry["name"]] = np.frombuffer(data[lo:hi], dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return Checkpoint(
        variant=header["variant"],
        config=header["config"],
        counters=header["counters"],
        rng_states=header["rng_states"],
        optimizers=header["optimizers"],
        env_snapshots=header["env_snapshots"],
        arrays=arrays,
        extra=header["extra"],
        version=header["version"],
    )


def save_checkpoint(path, checkpoint: Checkpoint):
    """Write atomically: a partial file never replaces a good one."""
    directory = os.path.dirname(os.fspath(path))
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as handle:
        handle.write(encode(checkpoint))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint at {path}")
    with open(path, "rb") as handle:
        return decode(handle.read())


def latest_checkpoint(directory):
    """Newest ``ckpt-<update_step>.bin`` in ``directory``, or None."""
    if not os.path.isdir(directory):
        return None
    found = []
    for name in os.listdir(directory):
        if name.startswith("ckpt-") and name.endswith(".bin"):
            try:
                found.append((int(name[5:-4]), name))
            except ValueError:
                continue
    if not found:
        return None
    return os.path.join(directory, max(found)[1])


def checkpoint_name(update_step: int) -> str:
    return f"ckpt-{update_step:08d}.bin"

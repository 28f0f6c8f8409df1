"""Binary checkpoint format: JSON header + raw little-endian tensor payloads.

Layout: 8-byte little-endian header length, the UTF-8 JSON header, then the
concatenated tensor bytes.  The header records name/shape/dtype/byte-offset
per tensor, a config echo, a payload checksum, and the format version, so a
load either round-trips byte-exactly or fails loudly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save(path, arrays: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> None:
    entries = []
    offset = 0
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype), "offset": offset}
        )
        payloads.append(blob)
        offset += len(blob)
    payload = b"".join(payloads)
    header = {
        "format_version": FORMAT_VERSION,
        "tensors": entries,
        "config": config,
        "config_hash": config_hash(config),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)


def load(path, expected_config: dict | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (arrays, header).  Verifies checksum and, when given, config hash."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"checkpoint truncated: {path}")
    (hlen,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8 : 8 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header in {path}: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('format_version')} in {path}"
        )
    payload = raw[8 + hlen :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"checkpoint payload corrupted: {path}")
    if expected_config is not None:
        want = config_hash(expected_config)
        if want != header["config_hash"]:
            raise CheckpointError(
                f"checkpoint config mismatch: expected {want}, found {header['config_hash']}"
            )
    arrays = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]

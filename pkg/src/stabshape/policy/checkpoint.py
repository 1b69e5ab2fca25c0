"""Self-describing checkpoint container for named float64 arrays.

Layout: 8-byte magic, little-endian uint64 header length, a canonical JSON
header (names, shapes, offsets, config hash, sha256 of the payload), then
the raw little-endian float64 payload. Encoding is canonical, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import IntegrityError

MAGIC = b"STBCKPT1"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def encode(arrays: dict, config_digest: str = "") -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8", order="C")
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "arrays": entries,
        "config_hash": config_digest,
        "format": 1,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + payload


def decode(blob: bytes) -> tuple[dict, str]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise IntegrityError("not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    if 16 + n > len(blob):
        raise IntegrityError("truncated checkpoint header")
    try:
        header = json.loads(blob[16 : 16 + n])
    except ValueError as e:
        raise IntegrityError(f"corrupt checkpoint header: {e}") from None
    payload = blob[16 + n :]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise IntegrityError("checkpoint payload checksum mismatch")
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(tuple(e["shape"])).astype(float)
    return arrays, header.get("config_hash", "")


def save(path, arrays: dict, config_digest: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(arrays, config_digest))
    os.replace(tmp, path)


def load(path) -> tuple[dict, str]:
    return decode(Path(path).read_bytes())

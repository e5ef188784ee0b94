"""Flat binary checkpoint format.

Layout: the magic ``ICAN01``, then for each parameter in name order:
u32 name length, UTF-8 name, u32 rank, u32 dims, f64 values (all
little-endian). Model metadata (config, vocabulary) goes to a JSON sidecar
``<path>.json`` so the binary stays a plain parameter dump.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ICAN01"


class CheckpointError(ValueError):
    pass


def encode(params):
    parts = [MAGIC]
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob):
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)
    out = {}

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint at byte {pos} (need {n} more)")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    return out


def save(path, params, meta=None):
    path = Path(path)
    path.write_bytes(encode(params))
    if meta is not None:
        Path(f"{path}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load(path):
    return decode(Path(path).read_bytes())


def load_meta(path):
    side = Path(f"{path}.json")
    return json.loads(side.read_text()) if side.exists() else None

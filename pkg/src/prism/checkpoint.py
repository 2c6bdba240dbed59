"""Binary checkpoint format for parameter bundles.

Layout: magic "PRCK", format version u32, then per-parameter records of
(name length u32, name bytes, rank u32, dims u32 x rank, values f32).
All integers and floats little-endian. Round-trips are bit-exact.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"PRCK"
VERSION = 1


def save_params(path, params):
    """`params` is a name -> Tensor (or ndarray) map."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name in sorted(params):
            data = getattr(params[name], "data", params[name])
            arr = np.ascontiguousarray(data, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_params(path):
    """Returns a name -> float32 ndarray map."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = {}
    offset = 8
    try:
        while offset < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            out[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint {path}: {exc}") from exc
    return out


def restore_module(module, loaded):
    params = module.parameters()
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter mismatch (missing: {sorted(missing)}, unexpected: {sorted(extra)})"
        )
    for name, p in params.items():
        if p.data.shape != loaded[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {p.data.shape} vs {loaded[name].shape}"
            )
        p.data = loaded[name].astype(p.data.dtype)

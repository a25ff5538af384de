"""Parameter containers and the checkpoint file format.

A parameter store is a plain ``dict`` of name -> float64 ndarray. Checkpoints
use a small deterministic binary layout (no timestamps, sorted names) so that
identical parameters always produce identical bytes::

    b"HECTAPRM" | u32 version | u64 header length | JSON header | raw arrays

The JSON header carries each array's dtype/shape/offset plus free-form
metadata.
"""
import json
import struct

import numpy as np

MAGIC = b"HECTAPRM"
FORMAT_VERSION = 1


def copy_params(params):
    return {k: np.array(v, copy=True) for k, v in params.items()}


def params_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def check_finite(params):
    bad = [k for k, v in params.items() if not np.all(np.isfinite(v))]
    if bad:
        raise FloatingPointError(f"non-finite values in parameters: {', '.join(bad)}")


def dumps_params(params, meta=None):
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        raw = arr.astype("<f8").tobytes()
        entries[name] = {"dtype": "<f8", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True,
                        separators=(",", ":")).encode()
    return b"".join([MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header] + blobs)


def loads_params(data):
    if data[:8] != MAGIC:
        raise ValueError("not a parameter checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen])
    base = 20 + hlen
    params = {}
    for name, e in header["arrays"].items():
        start = base + e["offset"]
        arr = np.frombuffer(data[start:start + e["nbytes"]], dtype=e["dtype"])
        params[name] = arr.astype(np.float64).reshape(e["shape"])
    return params, header["meta"]


def save_params(path, params, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps_params(params, meta))


def load_params(path):
    with open(path, "rb") as fh:
        return loads_params(fh.read())

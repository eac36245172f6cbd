"""Versioned particle-system snapshots.

Layout: the 8-byte magic ``MGPDTSM1``, a newline, then UTF-8 JSON. Arrays are
stored as base64 of their little-endian float64 bytes so a round trip is
bit-exact.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from ..errors import DataError
from .smc import ParticleSystem

MAGIC = b"MGPDTSM1"


def encode_array(a) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"shape": list(a.shape), "f8": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["f8"]), dtype="<f8").reshape(d["shape"]).copy()


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__array__": encode_array(obj)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float):
        return {"__float__": obj.hex()}
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return decode_array(obj["__array__"])
        if "__float__" in obj:
            return float.fromhex(obj["__float__"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def save(path, ps: ParticleSystem, extra: dict | None = None) -> None:
    """Write ``ps`` and a JSON-able ``extra`` dict atomically."""
    body = {
        "version": 1,
        "Z": ps.Z,
        "logw": ps.logw,
        "master_seed": int(ps.master_seed),
        "t_current": int(ps.t_current),
        "log_evidence": float(ps.log_evidence),
        "log_increments": [float(x) for x in ps.log_increments],
        "phi_history": [[float(p) for p in ph] for ph in ps.phi_history],
        "counters": dict(ps.counters),
        "extra": extra or {},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(_encode(body), sort_keys=True).encode("utf-8"))
    os.replace(tmp, path)


def load(path):
    """Return ``(ParticleSystem, extra)``."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 1)
        if head[: len(MAGIC)] != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic header)")
        body = _decode(json.loads(fh.read().decode("utf-8")))
    if body.get("version") != 1:
        raise DataError(f"unsupported checkpoint version {body.get('version')!r}")
    ps = ParticleSystem(body["Z"], body["logw"], body["master_seed"], body["t_current"], body["log_evidence"],
                        list(body["log_increments"]), [list(p) for p in body["phi_history"]], dict(body["counters"]))
    return ps, body["extra"]

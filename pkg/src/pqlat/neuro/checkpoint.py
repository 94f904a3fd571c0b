"""JSON checkpoints: layer specification plus named float64 arrays.

Arrays are stored as base64 of little-endian IEEE-754 float64 bytes
(``"encoding": "float64-le-base64"``), so a save/load round trip is exact.
"""
from __future__ import annotations

import base64
import json

import numpy as np

FORMAT = "pqlat-checkpoint/1"
ENCODING = "float64-le-base64"


def encode_array(a) -> dict:
    arr = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def checkpoint_dict(module, spec: dict, extra: dict = None) -> dict:
    return {
        "format": FORMAT,
        "encoding": ENCODING,
        "spec": spec,
        "extra": {k: (encode_array(v) if isinstance(v, np.ndarray) else v) for k, v in (extra or {}).items()},
        "parameters": [dict(name=n, **encode_array(p.data)) for n, p in module.named_parameters()],
    }


def save_checkpoint(module, spec: dict, path, extra: dict = None) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(module, spec, extra), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(spec, parameters, extra)``; arrays in ``extra`` are decoded."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT or doc.get("encoding") != ENCODING:
        raise ValueError(f"{path}: not a {FORMAT} document")
    params = {p["name"]: decode_array(p) for p in doc["parameters"]}
    extra = {k: (decode_array(v) if isinstance(v, dict) and "data" in v else v)
             for k, v in doc.get("extra", {}).items()}
    return doc["spec"], params, extra


def load_into(module, params: dict) -> None:
    for name, p in module.named_parameters():
        if name not in params:
            raise KeyError(f"checkpoint lacks parameter {name!r}")
        if params[name].shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name!r}: {params[name].shape} vs {p.data.shape}")
        p.data = params[name].copy()

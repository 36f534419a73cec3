"""JSON encoding shared by the CLI and the benchmark outputs.

Matrices are written as ``{"rows": r, "cols": c, "data": [...]}`` in
row-major order; vectors as plain lists.  Floats keep Python's shortest
round-trip representation, so decoding reproduces every value exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .core import BoundParams, LqrInstance, Trajectory, make_instance


def _float(x: float):
    x = float(x)
    if math.isfinite(x):
        return x
    # JSON has no inf/nan literals
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def matrix_to_json(m) -> dict:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [_float(v) for v in m.ravel()]}


def matrix_from_json(obj) -> np.ndarray:
    if isinstance(obj, dict):
        data = np.array([float(v) for v in obj["data"]], dtype=float)
        return data.reshape(int(obj["rows"]), int(obj["cols"]))
    return np.atleast_2d(np.asarray(obj, dtype=float))


def to_jsonable(obj):
    """Recursively convert arrays, dataclasses and numpy scalars."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)) and not isinstance(obj, np.bool_):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(obj)
    if isinstance(obj, np.ndarray):
        if obj.dtype == bool:
            return [bool(v) for v in obj.ravel()]
        if obj.ndim == 1:
            return [_float(v) for v in obj]
        if obj.ndim == 2:
            return matrix_to_json(obj)
        return [to_jsonable(v) for v in obj]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    raise TypeError(f"cannot encode {type(obj).__name__}")


def instance_to_json(inst: LqrInstance) -> dict:
    out = {name: matrix_to_json(getattr(inst, name)) for name in ("a_star", "b_star", "q", "r", "w")}
    out["bounds"] = inst.bounds.to_dict() if inst.bounds is not None else None
    return out


def instance_from_json(obj: dict) -> LqrInstance:
    bounds = BoundParams(**obj["bounds"]) if obj.get("bounds") else None
    mats = {name: matrix_from_json(obj[name]) for name in ("a_star", "b_star", "q", "r", "w")}
    return make_instance(mats["a_star"], mats["b_star"], mats["q"], mats["r"], mats["w"], bounds=bounds)


def trajectory_to_json(traj: Trajectory) -> dict:
    return {
        "states": matrix_to_json(traj.states),
        "actions": matrix_to_json(traj.actions),
        "noises": matrix_to_json(traj.noises),
        "costs": [_float(c) for c in traj.costs],
    }


def trajectory_from_json(obj: dict) -> Trajectory:
    return Trajectory(
        matrix_from_json(obj["states"]),
        matrix_from_json(obj["actions"]),
        matrix_from_json(obj["noises"]),
        np.array([float(c) for c in obj["costs"]]),
    )


def dumps(obj) -> str:
    """Deterministic JSON text ending in a newline."""
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj, path) -> None:
    path = Path(path)
    try:
        path.write_text(dumps(obj))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


__all__ = [
    "matrix_to_json",
    "matrix_from_json",
    "to_jsonable",
    "instance_to_json",
    "instance_from_json",
    "trajectory_to_json",
    "trajectory_from_json",
    "dumps",
    "write_json",
]

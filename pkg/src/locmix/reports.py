"""Check records and deterministic JSON output."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np


@dataclass
class Check:
    check: str
    instance: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"check": self.check, "instance": self.instance, "lhs": self.lhs, "rhs": self.rhs,
             "tolerance": self.tolerance, "pass": bool(self.passed)}
        if self.detail:
            d["detail"] = self.detail
        return jsonable(d)


def leq(check: str, instance: str, lhs: float, rhs: float, tol: float = 0.0, **detail) -> Check:
    return Check(check, instance, float(lhs), float(rhs), tol, bool(lhs <= rhs + tol), detail)


def geq(check: str, instance: str, lhs: float, rhs: float, tol: float = 0.0, **detail) -> Check:
    return Check(check, instance, float(lhs), float(rhs), tol, bool(lhs >= rhs - tol), detail)


def close(check: str, instance: str, lhs: float, rhs: float, tol: float, **detail) -> Check:
    return Check(check, instance, float(lhs), float(rhs), tol, bool(abs(lhs - rhs) <= tol), detail)


def all_passed(checks: Iterable[Check]) -> bool:
    return all(c.passed for c in checks)


def first_failure(checks: Iterable[Check]) -> Check | None:
    return next((c for c in checks if not c.passed), None)


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(jsonable(config), sort_keys=True).encode()).hexdigest()[:16]

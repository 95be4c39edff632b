"""Ising and hardcore model builders plus model-specific exact checks."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import measures as M
from .errors import (
    DegreeTooSmall,
    DimensionTooLarge,
    InputError,
    InvalidPinning,
    NotFerromagnetic,
    PreconditionViolated,
)
from .reports import Check, close, geq, leq

SYM_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple

    def __post_init__(self):
        if self.n < 1:
            raise InputError("a graph needs at least one vertex")
        seen = set()
        norm = []
        for e in self.edges:
            i, j = (int(e[0]), int(e[1]))
            if i == j:
                raise InputError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InputError(f"edge {(i, j)} out of range for n={self.n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InputError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    @property
    def neighbors(self) -> list:
        nb = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return [sorted(x) for x in nb]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def cycle(cls, n: int) -> "Graph":
        return cls(n, tuple((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def star(cls, leaves: int) -> "Graph":
        """Center 0 joined to vertices 1..leaves."""
        return cls(leaves + 1, tuple((0, k) for k in range(1, leaves + 1)))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, tuple(itertools.combinations(range(n), 2)))

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, p: float) -> "Graph":
        return cls(n, tuple(e for e in itertools.combinations(range(n), 2) if rng.random() < p))

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True, eq=False)
class IsingSpec:
    """Ising model data.

    ``convention="ising"`` gives density exp(<x,Jx> + <x,v>);
    ``convention="mulambda"`` gives exp(-lam <x,Jx> + <v,x>).
    """

    J: np.ndarray
    v: np.ndarray = None
    convention: str = "ising"
    lam: float = 1.0

    def __post_init__(self):
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        n = J.shape[0]
        if J.shape != (n, n):
            raise InputError("J must be square")
        if not np.isfinite(J).all():
            raise InputError("J must be finite")
        if np.max(np.abs(J - J.T), initial=0.0) > SYM_TOL:
            raise InputError("J must be symmetric")
        if n > M.N_MAX:
            raise DimensionTooLarge(f"n={n} exceeds {M.N_MAX}")
        v = np.zeros(n) if self.v is None else np.asarray(self.v, dtype=float).reshape(-1)
        if v.shape != (n,) or not np.isfinite(v).all():
            raise InputError("field must be a finite vector of length n")
        if self.convention not in ("ising", "mulambda"):
            raise InputError(f"unknown convention {self.convention!r}")
        object.__setattr__(self, "J", (J + J.T) / 2)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.J.shape[0]

    @property
    def effective_J(self) -> np.ndarray:
        return self.J if self.convention == "ising" else -self.lam * self.J


@dataclass(frozen=True)
class HardcoreSpec:
    graph: Graph
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise InputError("fugacity must be finite and positive")
        if self.graph.n > M.N_MAX:
            raise DimensionTooLarge(f"n={self.graph.n} exceeds {M.N_MAX}")


def ising_logweights(J: np.ndarray, v: np.ndarray) -> np.ndarray:
    x = M.cube(J.shape[0])
    return np.einsum("ki,ij,kj->k", x, J, x) + x @ v


def build_ising(spec: IsingSpec) -> M.SpinMeasure:
    logw = ising_logweights(spec.effective_J, spec.v)
    return M.SpinMeasure(spec.n, np.zeros(spec.n, dtype=np.int8), M._normalize_log(logw))


def ising(J, v=None) -> M.SpinMeasure:
    return build_ising(IsingSpec(np.asarray(J, dtype=float), v))


def graph_coupling_matrix(G: Graph) -> np.ndarray:
    """J_G = (adjacency + degree diagonal) / 2.

    Note <x, J_G x> counts every monochromatic edge twice, so the graphical
    model with inverse temperature beta is the Ising model with J = beta J_G / 2.
    """
    return 0.5 * (G.adjacency + np.diag(G.degrees.astype(float)))


def monochromatic_edges(G: Graph) -> np.ndarray:
    x = M.cube(G.n)
    out = np.zeros(x.shape[0])
    for i, j in G.edges:
        out += x[:, i] == x[:, j]
    return out


def build_graph_ising(G: Graph, beta: float, v: Sequence[float] | None = None) -> M.SpinMeasure:
    """Measure proportional to exp(<x, v> + beta * #monochromatic edges)."""
    if G.n > M.N_MAX:
        raise DimensionTooLarge(f"n={G.n} exceeds {M.N_MAX}")
    v = np.zeros(G.n) if v is None else np.asarray(v, dtype=float)
    logw = M.cube(G.n) @ v + beta * monochromatic_edges(G)
    return M.SpinMeasure(G.n, np.zeros(G.n, dtype=np.int8), M._normalize_log(logw))


def uniqueness_margin(G_or_delta, beta: float) -> float | None:
    """Largest delta in (0, 1) with exp|beta| < (D - delta) / (D - 2 + delta).

    Solving at equality gives delta = (D - e^|beta| (D - 2)) / (1 + e^|beta|).
    At beta = 0 this is exactly 1; the open interval is respected by
    reporting 1 - machine epsilon.  Returns None when no positive delta works.
    """
    D = G_or_delta.max_degree if isinstance(G_or_delta, Graph) else int(G_or_delta)
    if D < 3:
        raise DegreeTooSmall(f"uniqueness margin needs max degree >= 3, got {D}")
    e = math.exp(abs(beta))
    delta = (D - e * (D - 2)) / (1 + e)
    if delta <= 0:
        return None
    return min(delta, 1.0 - np.finfo(float).eps)


def critical_fugacity(D: int) -> float:
    if D < 3:
        raise DegreeTooSmall(f"critical fugacity needs degree >= 3, got {D}")
    return (D - 1) ** (D - 1) / (D - 2) ** D


def independent_mask(G: Graph) -> np.ndarray:
    """Boolean mask over the full cube: +1 coordinates form an independent set."""
    x = M.cube(G.n) > 0
    ok = np.ones(x.shape[0], dtype=bool)
    for i, j in G.edges:
        ok &= ~(x[:, i] & x[:, j])
    return ok


def build_hardcore(spec: HardcoreSpec) -> M.SpinMeasure:
    """Weights lam^{#occupied} on independent sets (+1 = occupied)."""
    G = spec.graph
    occ = (M.cube(G.n) > 0).sum(axis=1)
    with np.errstate(divide="ignore"):
        logw = np.where(independent_mask(G), occ * math.log(spec.lam), -np.inf)
    return M.materialize(M._normalize_log(logw))


def hardcore(G: Graph, lam: float) -> M.SpinMeasure:
    return build_hardcore(HardcoreSpec(G, lam))


def independent_sets(G: Graph) -> set:
    """All independent sets, by direct subset enumeration."""
    nb = [set(x) for x in G.neighbors]
    out = set()
    for r in range(G.n + 1):
        for S in itertools.combinations(range(G.n), r):
            s = set(S)
            if all(not (nb[i] & s) for i in S):
                out.add(frozenset(S))
    return out


def occupied_sets(nu: M.SpinMeasure) -> set:
    pts = M.cube(nu.n)[nu.support]
    return {frozenset(np.flatnonzero(p > 0).tolist()) for p in pts}


def hardcore_marginal_bounds_check(spec: HardcoreSpec, u: Sequence[int], vertex: int,
                                   delta: float | None = None, tol: float = 1e-12) -> list[Check]:
    """Marginal bounds for an occupied vertex under a pinning avoiding its neighbors.

    The e^{-3e^2} lower bound is also checked when ``delta`` is given (or
    computed from lam <= (1 - delta) lam_D with D >= 3).
    """
    G = spec.graph
    u = np.asarray(u, dtype=np.int8)
    nbrs = G.neighbors[vertex]
    if any(u[w] != 0 for w in nbrs):
        raise InvalidPinning(f"pinning fixes a neighbor of vertex {vertex}")
    if u[vertex] != 0:
        raise InvalidPinning(f"pinning fixes the tested vertex {vertex}")
    nu = M.pin(build_hardcore(spec), u)
    p = (1 + M.moments(nu).b[vertex]) / 2
    lam = spec.lam
    upper = lam / (1 + lam)
    lower = upper * (1 + lam) ** (-len(nbrs))
    inst = f"hardcore(n={G.n},lam={lam:g},v={vertex},u={u.tolist()})"
    out = [geq("marginal_lower", inst, p, lower, tol), leq("marginal_upper", inst, p, upper, tol)]
    if delta is None and G.max_degree >= 3:
        d = 1 - lam / critical_fugacity(G.max_degree)
        delta = d if d > 0 else None
    if delta is not None:
        out.append(geq("marginal_lower_unique", inst, p, upper * math.exp(-3 * math.e ** 2), tol,
                       delta=delta))
    return out


def ising_cov_bound_check(J: np.ndarray, fields: Iterable[Sequence[float]], tol: float = 1e-9,
                          require_pd: bool = True) -> list[Check]:
    """Covariance bound ||Cov(nu_{J,v})|| <= 1 / (1 - 2 ||J||) on each field."""
    J = np.asarray(J, dtype=float)
    ev = np.linalg.eigvalsh(J)
    norm = float(np.max(np.abs(ev)))
    if norm >= 0.5:
        raise PreconditionViolated(f"||J||_OP = {norm:.6g} must be < 1/2")
    if require_pd and ev[0] <= 0:
        raise PreconditionViolated("J must be positive definite")
    bound = 1.0 / (1.0 - 2.0 * norm)
    out = []
    for k, v in enumerate(fields):
        cov = M.moments(ising(J, v)).cov
        out.append(leq("ising_cov_bound", f"J_norm={norm:.4g},field#{k}",
                       float(np.linalg.eigvalsh(cov)[-1]), bound, tol))
    return out


def gks_monotonicity_check(J: np.ndarray, fields: Iterable[Sequence[float]],
                           tol: float = 1e-12) -> list[Check]:
    """Entrywise Cov(nu_{J,v})_ij <= Cov(nu_{J,0})_ij off the diagonal."""
    J = np.asarray(J, dtype=float)
    off = J - np.diag(np.diag(J))
    if (off < -SYM_TOL).any():
        raise NotFerromagnetic("all off-diagonal couplings must be nonnegative")
    n = J.shape[0]
    c0 = M.moments(ising(J, np.zeros(n))).cov
    iu = np.triu_indices(n, 1)
    out = []
    for k, v in enumerate(fields):
        c = M.moments(ising(J, v)).cov
        gap = c[iu] - c0[iu]
        w = int(np.argmax(gap)) if gap.size else 0
        lhs = float(c[iu][w]) if gap.size else 0.0
        rhs = float(c0[iu][w]) if gap.size else 0.0
        out.append(leq("gks_monotone", f"n={n},field#{k}", lhs, rhs, tol,
                       pair=[int(iu[0][w]), int(iu[1][w])] if gap.size else []))
    return out


def graph_ising_coupling(G: Graph, beta: float) -> np.ndarray:
    """J with build_ising(J) equal to the graphical model at inverse temperature beta."""
    return 0.5 * beta * graph_coupling_matrix(G)


# ---------------------------------------------------------------- model specs

@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n: int
    J: np.ndarray | None = None
    graph: Graph | None = None
    beta: float = 0.0
    lam: float = 1.0
    field: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {"type": self.kind, "n": self.n}
        if self.J is not None:
            d["J"] = np.asarray(self.J).tolist()
        if self.graph is not None:
            d["edges"] = [list(e) for e in self.graph.edges]
        if self.kind == "graph_ising":
            d["beta"] = self.beta
        if self.kind == "hardcore":
            d["lambda"] = self.lam
        if self.field is not None:
            d["field"] = np.asarray(self.field).tolist()
        return d

    def coupling(self) -> np.ndarray | None:
        if self.kind == "ising":
            return np.asarray(self.J, dtype=float)
        if self.kind == "graph_ising":
            return graph_ising_coupling(self.graph, self.beta)
        return None

    def build(self) -> M.SpinMeasure:
        if self.kind == "ising":
            return build_ising(IsingSpec(self.J, self.field))
        if self.kind == "graph_ising":
            return build_graph_ising(self.graph, self.beta, self.field)
        nu = build_hardcore(HardcoreSpec(self.graph, self.lam))
        if self.field is not None and np.any(self.field):
            nu = M.tilt(nu, self.field)
        return nu


def _num(d: Mapping, key: str, default=None):
    if key not in d:
        if default is None:
            raise InputError(f"model spec is missing {key!r}")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise InputError(f"model spec field {key!r} must be a number, got {val!r}")
    if not math.isfinite(val):
        raise InputError(f"model spec field {key!r} must be finite")
    return float(val)


def parse_model(d: Mapping | str) -> ModelSpec:
    """Validate a model-spec mapping (or JSON text) and return a ModelSpec."""
    if isinstance(d, str):
        try:
            d = json.loads(d)
        except json.JSONDecodeError as exc:
            raise InputError(f"model spec: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(d, Mapping):
        raise InputError("model spec must be a JSON object")
    kind = d.get("type")
    if kind not in ("ising", "graph_ising", "hardcore"):
        raise InputError(f"model spec 'type' must be ising, graph_ising or hardcore, got {kind!r}")
    field_ = None
    if "field" in d:
        try:
            field_ = np.asarray(d["field"], dtype=float).reshape(-1)
        except (TypeError, ValueError):
            raise InputError("model spec 'field' must be a list of numbers")
    if kind == "ising":
        if "J" not in d:
            raise InputError("ising model spec is missing 'J'")
        try:
            J = np.asarray(d["J"], dtype=float)
        except (TypeError, ValueError):
            raise InputError("model spec 'J' must be a numeric matrix")
        if J.ndim != 2:
            raise InputError("model spec 'J' must be a matrix")
        n = int(d.get("n", J.shape[0]))
        if J.shape != (n, n):
            raise InputError(f"model spec 'J' has shape {J.shape}, expected {(n, n)}")
        IsingSpec(J, field_)  # validation
        return ModelSpec("ising", n, J=J, field=field_)
    if "n" not in d:
        raise InputError("model spec is missing 'n'")
    n = d["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise InputError("model spec 'n' must be a positive integer")
    if n > M.N_MAX:
        raise DimensionTooLarge(f"n={n} exceeds {M.N_MAX}")
    edges = d.get("edges", [])
    try:
        G = Graph(n, tuple((int(a), int(b)) for a, b in edges))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError("model spec 'edges' must be a list of [i, j] pairs")
    if field_ is not None and field_.shape != (n,):
        raise InputError(f"model spec 'field' must have length {n}")
    if kind == "graph_ising":
        return ModelSpec("graph_ising", n, graph=G, beta=_num(d, "beta"), field=field_)
    lam = _num(d, "lambda")
    HardcoreSpec(G, lam)
    return ModelSpec("hardcore", n, graph=G, lam=lam, field=field_)

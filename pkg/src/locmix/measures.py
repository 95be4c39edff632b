"""Dense probability measures on the discrete cube {-1, 1}^n.

A :class:`SpinMeasure` stores a pinning vector ``pin`` in {-1, 0, 1}^n and a
weight table over the ``2**f`` configurations of the ``f`` free (unpinned)
coordinates.  Configurations are indexed lexicographically with -1 before +1:
bit ``k`` of a free index is the value of the ``k``-th free coordinate
(0 -> -1, 1 -> +1).  The same convention with all ``n`` coordinates gives the
"full" index used by :meth:`SpinMeasure.full`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AllZeroMass,
    DegenerateCoordinate,
    DimensionTooLarge,
    IncompatiblePin,
    InputError,
    MaxIterations,
    NegativeInput,
    NonFinite,
    NotAbsolutelyContinuous,
    OutsideHull,
    ZeroMassSubcube,
)

N_MAX = 20
NORM_TOL = 1e-12
VAR_TOL = 1e-14
TILT_BOX = 40.0


@lru_cache(maxsize=None)
def cube(n: int) -> np.ndarray:
    """All points of {-1,1}^n as a (2**n, n) float array in index order."""
    idx = np.arange(1 << n)
    bits = (idx[:, None] >> np.arange(n)[None, :]) & 1
    pts = (2.0 * bits - 1.0)
    pts.setflags(write=False)
    return pts


def config_index(x: Sequence[int]) -> int:
    return int(sum(1 << i for i, xi in enumerate(x) if xi > 0))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpinMeasure:
    n: int
    pin: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n <= N_MAX:
            raise DimensionTooLarge(f"n={self.n} outside [1, {N_MAX}]")
        pin = np.asarray(self.pin, dtype=np.int8).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pin.shape != (self.n,) or not np.isin(pin, (-1, 0, 1)).all():
            raise InputError("pin must be a vector in {-1,0,1}^n")
        f = int(np.count_nonzero(pin == 0))
        if w.shape != (1 << f,):
            raise InputError(f"expected {1 << f} weights for {f} free coordinates, got {w.size}")
        if not np.isfinite(w).all():
            raise NonFinite("weights must be finite")
        if (w < 0).any():
            raise NegativeInput("weights must be nonnegative")
        if abs(w.sum() - 1.0) > NORM_TOL:
            raise InputError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "pin", _readonly(pin))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(self.pin == 0)

    @property
    def f(self) -> int:
        return int(np.count_nonzero(self.pin == 0))

    @cached_property
    def free_to_full(self) -> np.ndarray:
        """Full-cube index of every free configuration."""
        return _free_to_full(self.pin)

    @cached_property
    def points(self) -> np.ndarray:
        """Configurations (2**f, n) in free-index order."""
        return cube(self.n)[self.free_to_full]

    @cached_property
    def full(self) -> np.ndarray:
        """Weights on the whole cube, zero outside the pinned subcube."""
        out = np.zeros(1 << self.n)
        out[self.free_to_full] = self.weights
        out.setflags(write=False)
        return out

    @cached_property
    def support(self) -> np.ndarray:
        """Full indices of positive-mass configurations (sorted)."""
        return np.sort(self.free_to_full[self.weights > 0])

    def prob(self, x: Sequence[int]) -> float:
        return float(self.full[config_index(x)])

    def expect(self, values: np.ndarray) -> float:
        return float(self.full @ values)

    def allclose(self, other: "SpinMeasure", atol: float = 1e-12) -> bool:
        return self.n == other.n and np.allclose(self.full, other.full, rtol=0, atol=atol)

    def to_dict(self) -> dict:
        return {"n": self.n, "pin": [int(p) for p in self.pin], "weights": [float(w) for w in self.weights]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpinMeasure":
        return cls(int(d["n"]), np.asarray(d["pin"]), np.asarray(d["weights"], dtype=float))

    @classmethod
    def from_json(cls, s: str) -> "SpinMeasure":
        return cls.from_dict(json.loads(s))

    @classmethod
    def from_full(cls, full: np.ndarray, pin: Sequence[int] | None = None) -> "SpinMeasure":
        """Build from a 2**n table; mass outside the pinned subcube must be zero."""
        full = np.asarray(full, dtype=float)
        n = int(round(np.log2(full.size)))
        if 1 << n != full.size:
            raise InputError("table length must be a power of two")
        pin = np.zeros(n, dtype=np.int8) if pin is None else np.asarray(pin, dtype=np.int8)
        w = full[_free_to_full(pin)]
        if not np.isclose(w.sum(), full.sum(), rtol=0, atol=1e-14 * max(1.0, full.sum())):
            raise IncompatiblePin("table puts mass outside the pinned subcube")
        return cls(n, pin, _normalize(w))


@dataclass(frozen=True)
class Moments:
    b: np.ndarray
    cov: np.ndarray
    free_mask: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Influence:
    psi: np.ndarray
    cor: np.ndarray
    rho: float
    coords: np.ndarray


def _free_to_full(pin: np.ndarray) -> np.ndarray:
    pin = np.asarray(pin)
    free = np.flatnonzero(pin == 0)
    base = sum(1 << int(i) for i in np.flatnonzero(pin > 0))
    fidx = np.arange(1 << free.size)
    out = np.full(fidx.shape, base, dtype=np.int64)
    for k, i in enumerate(free):
        out += ((fidx >> k) & 1) << int(i)
    out.setflags(write=False)
    return out


def _normalize(w: np.ndarray) -> np.ndarray:
    s = w.sum()
    if not s > 0:
        raise AllZeroMass("measure has zero total mass")
    return w / s


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    m = np.max(logw)
    if not np.isfinite(m):
        raise AllZeroMass("measure has zero total mass")
    w = np.exp(logw - m)
    return w / w.sum()


def materialize(table: Mapping[tuple, float] | np.ndarray, n: int | None = None) -> SpinMeasure:
    """Normalize a configuration -> weight table into a SpinMeasure.

    Coordinates that are constant across the support are recorded as pinned.
    ``table`` is either a mapping from +-1 tuples or a dense 2**n array.
    """
    if isinstance(table, Mapping):
        if n is None:
            n = len(next(iter(table)))
        full = np.zeros(1 << n)
        for x, w in table.items():
            if len(x) != n or any(xi not in (-1, 1) for xi in x):
                raise InputError(f"bad configuration {x!r}")
            full[config_index(x)] += float(w)
    else:
        full = np.asarray(table, dtype=float).reshape(-1)
        n = int(round(np.log2(full.size)))
    if n > N_MAX or n < 1:
        raise DimensionTooLarge(f"n={n} outside [1, {N_MAX}]")
    if not np.isfinite(full).all():
        raise NonFinite("weights must be finite")
    if (full < 0).any():
        raise NegativeInput("weights must be nonnegative")
    if not (full > 0).any():
        raise AllZeroMass("every weight is zero")
    pts = cube(n)[full > 0]
    pin = np.where((pts == 1).all(axis=0), 1, np.where((pts == -1).all(axis=0), -1, 0)).astype(np.int8)
    return SpinMeasure.from_full(full / full.sum(), pin)


def dirac(x: Sequence[int]) -> SpinMeasure:
    return SpinMeasure(len(x), np.asarray(x, dtype=np.int8), np.ones(1))


def uniform(n: int) -> SpinMeasure:
    return SpinMeasure(n, np.zeros(n, dtype=np.int8), np.full(1 << n, 1.0 / (1 << n)))


def product(means: Sequence[float]) -> SpinMeasure:
    """Product measure with the given coordinate means in (-1, 1)."""
    m = np.asarray(means, dtype=float)
    p_plus = (1 + m) / 2
    pts = cube(m.size)
    w = np.prod(np.where(pts > 0, p_plus, 1 - p_plus), axis=1)
    return SpinMeasure(m.size, np.zeros(m.size, dtype=np.int8), _normalize(w))


def tilt(nu: SpinMeasure, v: Sequence[float]) -> SpinMeasure:
    """Exponential tilt: weights proportional to nu(x) exp(<v, x>)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (nu.n,) or not np.isfinite(v).all():
        raise NonFinite("tilt vector must be finite with length n")
    if not v[nu.free].any():
        return nu
    with np.errstate(divide="ignore"):
        logw = np.log(nu.weights) + nu.points[:, nu.free] @ v[nu.free]
    return SpinMeasure(nu.n, nu.pin, _normalize_log(logw))


def tilt_many(nu: SpinMeasure, vs: np.ndarray) -> np.ndarray:
    """Weights (over nu's free configurations) of tilts by each row of vs."""
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    with np.errstate(divide="ignore"):
        logw = np.log(nu.weights)[None, :] + vs[:, nu.free] @ nu.points[:, nu.free].T
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def pin(nu: SpinMeasure, u: Sequence[int]) -> SpinMeasure:
    """Restriction of nu to the subcube {x : x_i u_i >= 0}, renormalized."""
    u = np.asarray(u, dtype=np.int8)
    if u.shape != (nu.n,) or not np.isin(u, (-1, 0, 1)).all():
        raise InputError("pinning must be a vector in {-1,0,1}^n")
    if (u * nu.pin < 0).any():
        raise IncompatiblePin(f"pinning {u.tolist()} contradicts existing pin {nu.pin.tolist()}")
    new = (u != 0) & (nu.pin == 0)
    if not new.any():
        return nu
    keep = ((nu.points[:, new] * u[new]) > 0).all(axis=1)
    w = nu.weights[keep]
    if not w.sum() > 0:
        raise ZeroMassSubcube(f"nu puts no mass on the subcube of {u.tolist()}")
    merged = np.where(nu.pin != 0, nu.pin, u).astype(np.int8)
    # keep preserves free-index order because dropped coordinates are fixed
    return SpinMeasure(nu.n, merged, w / w.sum())


def pin_coordinate(nu: SpinMeasure, i: int, s: int) -> SpinMeasure:
    u = np.zeros(nu.n, dtype=np.int8)
    u[i] = s
    return pin(nu, u)


def center(nu: SpinMeasure) -> np.ndarray:
    return nu.weights @ nu.points


def moments(nu: SpinMeasure) -> Moments:
    b = center(nu)
    xc = nu.points - b
    cov = (xc * nu.weights[:, None]).T @ xc
    cov = (cov + cov.T) / 2
    fm = nu.pin == 0
    cov[~fm, :] = 0.0
    cov[:, ~fm] = 0.0
    b = np.where(fm, b, nu.pin.astype(float))
    return Moments(b=b, cov=cov, free_mask=fm)


def influence_correlation(nu: SpinMeasure, drop_degenerate: bool = False) -> Influence:
    """Influence matrix Cov D^{-1}, correlation matrix and spectral radius.

    Restricted to free coordinates.  A free coordinate with zero variance is
    an error unless ``drop_degenerate`` is set, in which case it is excluded.
    """
    m = moments(nu)
    coords = nu.free
    var = np.diag(m.cov)[coords]
    if (var <= VAR_TOL).any():
        if not drop_degenerate:
            bad = coords[var <= VAR_TOL].tolist()
            raise DegenerateCoordinate(f"free coordinates {bad} have zero variance")
        coords = coords[var > VAR_TOL]
        var = var[var > VAR_TOL]
    if coords.size == 0:
        z = np.zeros((0, 0))
        return Influence(psi=z, cor=z, rho=0.0, coords=coords)
    cov = m.cov[np.ix_(coords, coords)]
    psi = cov / var[None, :]
    d = 1.0 / np.sqrt(var)
    cor = cov * d[:, None] * d[None, :]
    rho = float(np.linalg.eigvalsh((cor + cor.T) / 2)[-1])
    return Influence(psi=psi, cor=cor, rho=rho, coords=coords)


def spectral_radius(nu: SpinMeasure) -> float:
    """rho(Psi) over the non-degenerate free coordinates (0 for a Dirac)."""
    return influence_correlation(nu, drop_degenerate=True).rho


def _values(nu: SpinMeasure, phi) -> np.ndarray:
    """Values of a test function at nu's free configurations."""
    if callable(phi):
        return np.asarray([phi(x) for x in nu.points], dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape == (1 << nu.n,):
        return phi[nu.free_to_full]
    raise InputError("test functions are callables or arrays over the full cube")


def variance(nu: SpinMeasure, phi) -> float:
    vals = _values(nu, phi)
    m = nu.weights @ vals
    return float(max(nu.weights @ (vals - m) ** 2, 0.0))


def xlogx(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos])
    return out


def entropy_of(weights: np.ndarray, vals: np.ndarray) -> float:
    m = weights @ vals
    return float(max(weights @ xlogx(vals) - xlogx(np.array(m)), 0.0))


def entropy(nu: SpinMeasure, f) -> float:
    """Ent_nu[f] = E[f log f] - E[f] log E[f], with 0 log 0 = 0."""
    vals = _values(nu, f)
    if (vals < -1e-14).any():
        raise NegativeInput("entropy needs a nonnegative function")
    return entropy_of(nu.weights, np.clip(vals, 0.0, None))


def kl(mu: SpinMeasure, nu: SpinMeasure) -> float:
    """Relative entropy D(mu || nu)."""
    if mu.n != nu.n:
        raise InputError("dimension mismatch")
    p, q = mu.full, nu.full
    sup = p > 0
    if (q[sup] <= 0).any():
        raise NotAbsolutelyContinuous("mu charges configurations outside the support of nu")
    return float(max(np.sum(p[sup] * np.log(p[sup] / q[sup])), 0.0))


def log_laplace(nu: SpinMeasure, theta: Sequence[float]) -> float:
    """L(theta) = log E_nu exp(<theta, x>)."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.log(nu.weights) + nu.points @ theta))


def tilt_kl(nu: SpinMeasure, v: Sequence[float]) -> float:
    """D(T_v nu || nu) via <v, b(T_v nu)> - L(v)."""
    v = np.asarray(v, dtype=float)
    t = tilt(nu, v)
    return float(max(v @ center(t) - log_laplace(nu, v), 0.0))


def moment_matching_tilt(nu: SpinMeasure, target: Sequence[float], max_iter: int = 200,
                         tol: float = 1e-9) -> np.ndarray:
    """Tilt vector v with b(T_v nu) = target, by damped Newton on L(v) - <target, v>.

    Only the non-degenerate free coordinates carry a tilt; on every other
    coordinate the target must equal the (fixed) center of mass.
    """
    target = np.asarray(target, dtype=float)
    m = moments(nu)
    var = np.diag(m.cov)
    act = np.flatnonzero((nu.pin == 0) & (var > VAR_TOL))
    fixed = np.setdiff1d(np.arange(nu.n), act)
    if not np.allclose(target[fixed], m.b[fixed], atol=tol):
        raise OutsideHull("target moves a coordinate that nu keeps fixed")
    if (np.abs(target[act]) >= 1).any():
        raise OutsideHull("target is on the boundary of the cube")
    v = np.zeros(nu.n)
    if act.size == 0:
        return v

    def objective(vv):
        return log_laplace(nu, vv) - target @ vv

    obj = objective(v)
    for _ in range(max_iter):
        t = tilt(nu, v)
        mt = moments(t)
        grad = (mt.b - target)[act]
        if np.max(np.abs(grad)) <= tol:
            return v
        hess = mt.cov[np.ix_(act, act)]
        try:
            step = np.linalg.solve(hess + 1e-300 * np.eye(act.size), grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if np.max(np.abs(grad)) < 1e-6 and np.max(np.abs(v[act] - step)) <= TILT_BOX:
            # quadratic-convergence regime: the line search is below rounding level
            v = v.copy()
            v[act] -= step
            obj = objective(v)
            continue
        a = 1.0
        while True:
            cand = v.copy()
            cand[act] -= a * step
            if np.max(np.abs(cand)) <= TILT_BOX:
                c_obj = objective(cand)
                if c_obj <= obj + 1e-4 * a * (grad @ -step) or a < 1e-12:
                    break
            a /= 2
            if a < 1e-12:
                raise OutsideHull("Newton step cannot stay inside the tilt box; target likely infeasible")
        v, obj = cand, c_obj
    t = tilt(nu, v)
    if np.max(np.abs(center(t) - target)) <= tol:
        return v
    raise MaxIterations(f"moment matching did not converge in {max_iter} iterations")


def legendre_dual(nu: SpinMeasure, x: Sequence[float], tol: float = 1e-12) -> float:
    """g(x) = sup_theta <x, theta> - L(theta) = D(T_{v(x)} nu || nu)."""
    x = np.asarray(x, dtype=float)
    v = moment_matching_tilt(nu, x, tol=tol)
    return float(x @ v - log_laplace(nu, v))


def random_measure(rng: np.random.Generator, n: int, sparsity: float = 0.0,
                   scale: float = 1.0) -> SpinMeasure:
    """Random full-support (or sparse if sparsity > 0) measure for test suites."""
    logw = scale * rng.standard_normal(1 << n)
    w = np.exp(logw)
    if sparsity > 0:
        w[rng.random(w.size) < sparsity] = 0.0
        if not (w > 0).any():
            w[rng.integers(w.size)] = 1.0
    return SpinMeasure(n, np.zeros(n, dtype=np.int8), w / w.sum())


def as_function(nu_or_n, fn: Callable[[np.ndarray], float]) -> np.ndarray:
    """Tabulate fn over the full cube."""
    n = nu_or_n if isinstance(nu_or_n, int) else nu_or_n.n
    return np.asarray([fn(x) for x in cube(n)], dtype=float)

"""Restricted Gaussian dynamics on grid-discretized one-dimensional
strongly log-concave measures.

The chain moves x -> y ~ N(x, eta) -> z ~ S_{y,eta} nu, where S_{y,eta} nu
reweights nu by exp(-(z - y)^2 / (2 eta)).  Writing the two Gaussian factors
around the midpoint m = (x + z)/2 gives

    P[x, z] = nu(z) exp(-(x - z)^2 / (4 eta)) / sqrt(2 pi) * int e^{-t^2} / Z(m + sqrt(eta) t) dt,

with Z(y) = sum_u nu(u) exp(-(u - y)^2 / (2 eta)).  The remaining integral is
done by Gauss-Hermite quadrature centred at m, so nu(x) P[x, z] is
symmetric in (x, z) by construction.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc, logsumexp, roots_hermite

from . import spectra as S
from .errors import InputError, NotStronglyConvex, QuadratureFailure, TailMass
from .parallel import map_ordered
from .reports import Check, close, geq, leq

MIN_POINTS = 64
TAIL_TOL = 1e-10
CURV_TOL = 1e-6
ROW_TOL = 1e-8
DB_TOL = 1e-8
ENVELOPE_RADIUS = math.sqrt(2 * 30.0)  # in units of 1/sqrt(mu)


@dataclass(frozen=True, eq=False)
class GridMeasure:
    points: np.ndarray
    weights: np.ndarray
    potential: np.ndarray
    mu: float
    mode: float
    tail_bound: float

    @property
    def h(self) -> float:
        return float(self.points[1] - self.points[0])

    @property
    def m(self) -> int:
        return int(self.points.size)

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    def mean(self) -> float:
        return float(self.weights @ self.points)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "weight", "V"])
        for x, p, v in zip(self.points, self.weights, self.potential):
            w.writerow([repr(float(x)), repr(float(p)), repr(float(v))])
        return buf.getvalue()


def _envelope_tail(mu: float, mode: float, a: float, b: float, v_mode: float, log_z: float) -> float:
    """Upper bound on the mass outside [a, b] from exp(-V) <= exp(-V(x*) - mu (x - x*)^2 / 2)."""
    s = math.sqrt(mu / 2)
    gauss = math.sqrt(2 * math.pi / mu)
    out = 0.5 * gauss * (erfc(s * (b - mode)) + erfc(s * (mode - a)))
    return float(math.exp(-v_mode - log_z) * out)


def discretize(V: Callable[[np.ndarray], np.ndarray], mu: float, interval: tuple | None = None,
               m: int = 256, curv_tol: float = CURV_TOL, tail_tol: float = TAIL_TOL) -> GridMeasure:
    """Uniform grid discretization of exp(-V) with weights exp(-V) h, normalized.

    Without an interval the grid is centred at the minimizer of V with
    half-width sqrt(60/mu), where the Gaussian envelope leaves about e^{-30}
    of the mass outside.  Raises NotStronglyConvex if a discrete second
    difference of V falls below mu - curv_tol, and TailMass if the envelope
    bound on the truncated mass exceeds tail_tol.
    """
    if m < MIN_POINTS:
        raise InputError(f"need at least {MIN_POINTS} grid points, got {m}")
    if not mu > 0:
        raise NotStronglyConvex("strong-convexity parameter must be positive")
    if interval is None:
        r = ENVELOPE_RADIUS / math.sqrt(mu)
        res = minimize_scalar(lambda x: float(V(np.array([x]))[0]), bracket=(-1.0, 1.0))
        x0 = float(res.x)
        a, b = x0 - r, x0 + r
    else:
        a, b = map(float, interval)
        if not b > a:
            raise InputError("interval must have a < b")
    x = np.linspace(a, b, m)
    v = np.asarray(V(x), dtype=float)
    if v.shape != x.shape or not np.all(np.isfinite(v)):
        raise InputError("potential must be finite on the grid")
    h = x[1] - x[0]
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / (h * h)
    if d2.min() < mu - curv_tol:
        k = int(np.argmin(d2)) + 1
        raise NotStronglyConvex(f"second difference {d2.min():.6g} < mu = {mu} at x = {x[k]:.6g}")
    k = int(np.argmin(v))
    res = minimize_scalar(lambda t: float(V(np.array([t]))[0]),
                          bounds=(x[max(k - 1, 0)], x[min(k + 1, m - 1)]), method="bounded",
                          options={"xatol": 1e-12})
    mode, v_mode = float(res.x), float(min(res.fun, v[k]))
    log_z = float(logsumexp(-v) + math.log(h))
    tail = _envelope_tail(mu, mode, a, b, v_mode, log_z)
    if tail > tail_tol:
        raise TailMass(f"truncated mass bound {tail:.3g} exceeds {tail_tol:g}; widen the interval")
    w = np.exp(-v - logsumexp(-v))
    return GridMeasure(x, w, v, float(mu), mode, tail)


def gaussian(mu: float, m: int = 256) -> GridMeasure:
    return discretize(lambda x: 0.5 * mu * x * x, mu, m=m)


@dataclass(frozen=True, eq=False)
class GridKernel:
    """Row-stochastic matrix on the grid with the grid measure as stationary law."""
    grid: GridMeasure
    P: np.ndarray
    name: str
    eta: float
    row_residual: float
    nodes: int = 64

    @property
    def pi(self) -> np.ndarray:
        return self.grid.weights

    @property
    def size(self) -> int:
        return self.grid.m

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.size)

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.P.sum(axis=1) - 1.0)))

    def detailed_balance_error(self) -> float:
        F = self.pi[:, None] * self.P
        return float(np.max(np.abs(F - F.T)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["from\\to"] + [repr(float(x)) for x in self.grid.points])
        for x, row in zip(self.grid.points, self.P):
            w.writerow([repr(float(x))] + [repr(float(p)) for p in row])
        return buf.getvalue()


def _assemble(gm: GridMeasure, eta: float, nodes: int, threads: int | None) -> np.ndarray:
    x, w = gm.points, gm.weights
    m = gm.m
    t, wq = roots_hermite(nodes)
    logw = np.log(np.maximum(w, 1e-300))
    # midpoints (x_i + x_j)/2 take 2m - 1 values on a half grid
    mids = x[0] + 0.5 * gm.h * np.arange(2 * m - 1)
    s = math.sqrt(eta)

    def inv_z(block):
        y = mids[block][:, None] + s * t[None, :]
        lz = logsumexp(logw[None, None, :] - (x[None, None, :] - y[:, :, None]) ** 2 / (2 * eta), axis=2)
        return np.exp(-lz) @ wq

    chunks = np.array_split(np.arange(mids.size), max(1, mids.size // 64))
    q = np.concatenate(map_ordered(inv_z, chunks, threads))
    i = np.arange(m)
    return w[None, :] * np.exp(-(x[:, None] - x[None, :]) ** 2 / (4 * eta)) / math.sqrt(2 * math.pi) \
        * q[i[:, None] + i[None, :]]


def rgd_kernel(gm: GridMeasure, eta: float, nodes: int = 64, max_nodes: int = 512,
               threads: int | None = None) -> GridKernel:
    """Restricted Gaussian dynamics kernel by midpoint-centred Gauss-Hermite
    quadrature.  Rows are renormalized; when the renormalization residual
    exceeds 1e-8 the node count is doubled (up to ``max_nodes``), which is
    needed once sqrt(eta) is small against the grid spacing."""
    if not eta > 0:
        raise InputError("eta must be positive")
    k = nodes
    while True:
        P = _assemble(gm, eta, k, threads)
        rows = P.sum(axis=1)
        resid = float(np.max(np.abs(rows - 1.0)))
        if resid <= ROW_TOL:
            break
        if 2 * k > max_nodes:
            raise QuadratureFailure(f"row renormalization residual {resid:.3g} exceeds {ROW_TOL:g} "
                                    f"with {k} nodes; refine the grid")
        k *= 2
    return GridKernel(gm, P / rows[:, None], f"rgd(eta={eta:g},m={gm.m})", float(eta), resid, k)


def rgo_bound(mu: float, eta: float) -> float:
    """mu / (mu + 1/eta)."""
    return mu / (mu + 1.0 / eta)


def refinement_delta(V, mu: float, eta: float, m: int = 256, interval: tuple | None = None) -> tuple[float, float]:
    """Gap at m grid points and its change when the spacing is halved."""
    g1 = S.spectral_gap(rgd_kernel(discretize(V, mu, interval, m), eta)).gap
    g2 = S.spectral_gap(rgd_kernel(discretize(V, mu, interval, 2 * m - 1), eta)).gap
    return g1, abs(g2 - g1)


def kl_decay(K: GridKernel, rho0: np.ndarray, steps: int = 50) -> np.ndarray:
    """KL(rho0 P^t || pi) for t = 0..steps by direct iteration."""
    pi = K.pi
    rho = np.asarray(rho0, dtype=float) / np.sum(rho0)
    out = []
    for _ in range(steps + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(rho > 0, rho * (np.log(rho) - np.log(pi)), 0.0)
        out.append(max(float(terms.sum()), 0.0))
        rho = rho @ K.P
    return np.asarray(out)


def warm_starts(gm: GridMeasure, log_ratio: float = 5.0) -> list[np.ndarray]:
    """Initial densities with d rho / d pi <= e^{log_ratio}: one-sided
    restrictions and linear tilts, clipped to the ratio bound."""
    x, w = gm.points, gm.weights
    c = gm.mean()
    sd = math.sqrt(max(float(w @ (x - c) ** 2), 1e-300))
    out = []
    for shape in (x < c, x > c, x < c - sd):
        r = shape.astype(float)
        out.append(w * r)
    for slope in (2.0, -3.0):
        out.append(w * np.exp(slope * (x - c) / sd))
    res = []
    for rho in out:
        rho = rho / rho.sum()
        ratio = np.minimum(rho / w, math.exp(log_ratio))
        rho = w * ratio
        res.append(rho / rho.sum())
    return res


def rgo_mlsi_check(gm: GridMeasure, eta: float, slack: float = 0.0, restarts: int = 10, seed: int = 0,
                   kl_steps: int = 50, nodes: int = 64, threads: int | None = None) -> list[Check]:
    """The bound mu/(mu + 1/eta) against the exact gap, the adversarial MLSI
    upper estimate and the measured KL decay from warm starts, each with the
    discretization slack."""
    K = rgd_kernel(gm, eta, nodes, threads=threads)
    b = rgo_bound(gm.mu, eta)
    inst = f"{K.name},mu={gm.mu:g}"
    out = [leq("rgd_row_residual", inst, K.row_residual, 0.0, ROW_TOL),
           leq("rgd_detailed_balance", inst, K.detailed_balance_error(), 0.0, DB_TOL)]
    gap = S.spectral_gap(K).gap
    out.append(geq("rgo_gap_bound", inst, gap, b, slack))
    est = S.mlsi_adversarial(K, restarts=restarts, seed=seed, threads=threads)
    out.append(geq("rgo_mlsi_bound", inst, est.upper, b, slack))
    worst = np.inf
    for k, rho0 in enumerate(warm_starts(gm)):
        kl = kl_decay(K, rho0, kl_steps)
        env = kl[0] * (1 - b) ** np.arange(kl.size) * (1 + slack) + 1e-14
        worst = min(worst, float(np.min(env - kl)))
    out.append(geq("rgo_kl_decay", inst, worst, 0.0, 0.0, steps=kl_steps))
    return out


def gaussian_gap_check(mu: float, eta: float, m: int = 256, tol: float = 1e-3) -> Check:
    """For a Gaussian target the gap equals mu/(mu + 1/eta)."""
    K = rgd_kernel(gaussian(mu, m), eta)
    gap = S.spectral_gap(K).gap
    return close("rgo_gaussian_gap", f"mu={mu:g},eta={eta:g},m={m}", gap, rgo_bound(mu, eta), tol)

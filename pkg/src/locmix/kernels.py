"""Markov kernels on the positive-mass configurations of a SpinMeasure.

Kernels are dense row-stochastic matrices indexed by the sorted full-cube
indices of the stationary measure's support.  Zero-mass configurations are
never enumerated, which keeps detailed balance exact.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import measures as M
from .errors import (
    DimensionTooLarge,
    InputError,
    InsufficientSamples,
    SubsetTooLarge,
    ZeroStationaryRow,
)
from .reports import Check, leq

MAX_FREE = 14
ROW_TOL = 1e-12
DB_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Kernel:
    support: np.ndarray
    P: np.ndarray
    stationary: M.SpinMeasure
    name: str = "kernel"
    stderr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pi = self.stationary.full[self.support]
        if (pi <= 0).any():
            raise ZeroStationaryRow("kernel support contains a zero-mass configuration")
        if self.P.shape != (self.support.size, self.support.size):
            raise InputError("kernel matrix does not match its support")

    @property
    def pi(self) -> np.ndarray:
        return self.stationary.full[self.support]

    @property
    def points(self) -> np.ndarray:
        return M.cube(self.stationary.n)[self.support]

    @property
    def size(self) -> int:
        return int(self.support.size)

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.P.sum(axis=1) - 1.0)))

    def detailed_balance_error(self) -> float:
        F = self.pi[:, None] * self.P
        return float(np.max(np.abs(F - F.T)))

    def stationarity_error(self) -> float:
        return float(np.max(np.abs(self.pi @ self.P - self.pi)))

    def invariant_checks(self, db_tol: float = DB_TOL) -> list[Check]:
        return [
            leq("row_stochastic", self.name, self.row_sum_error(), 0.0, ROW_TOL),
            leq("nonnegative", self.name, -float(self.P.min()), 0.0, 1e-14),
            leq("detailed_balance", self.name, self.detailed_balance_error(), 0.0, db_tol),
        ]

    def apply(self, f_full: np.ndarray) -> np.ndarray:
        """(P f) on the support for a function tabulated on the full cube."""
        return self.P @ np.asarray(f_full, dtype=float)[self.support]

    def to_csv(self) -> str:
        """Dense CSV, row-major, header row of support configurations."""
        labels = ["".join("+" if s > 0 else "-" for s in x) for x in self.points]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["from\\to"] + labels)
        for lab, row in zip(labels, self.P):
            w.writerow([lab] + [repr(float(p)) for p in row])
        return buf.getvalue()


def _check_size(nu: M.SpinMeasure, cap: int = MAX_FREE) -> None:
    if nu.f > cap:
        raise DimensionTooLarge(f"kernel matrices are capped at {cap} free coordinates (f={nu.f})")


def _positions(nu: M.SpinMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Support (sorted full indices) and a full-index -> row lookup (-1 if absent)."""
    sup = nu.support
    pos = np.full(1 << nu.n, -1, dtype=np.int64)
    pos[sup] = np.arange(sup.size)
    return sup, pos


def _finish_diagonal(P: np.ndarray) -> np.ndarray:
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return P


def glauber(nu: M.SpinMeasure) -> Kernel:
    """Heat-bath Glauber dynamics: pick a free coordinate uniformly, flip with
    probability nu(y) / (nu(x) + nu(y))."""
    _check_size(nu)
    sup, pos = _positions(nu)
    full = nu.full
    m = sup.size
    P = np.zeros((m, m))
    f = nu.f
    rows = np.arange(m)
    for i in nu.free:
        y = sup ^ (1 << int(i))
        cols = pos[y]
        ok = cols >= 0
        px, py = full[sup[ok]], full[y[ok]]
        P[rows[ok], cols[ok]] += py / (px + py) / f
    if f == 0:
        return Kernel(sup, np.ones((1, 1)), nu, "glauber")
    return Kernel(sup, _finish_diagonal(P), nu, "glauber")


def _mask_of(coords) -> int:
    return sum(1 << int(i) for i in coords)


def l_glauber(nu: M.SpinMeasure, ell: int) -> Kernel:
    """Resample a uniformly random size-ell set A of free coordinates from the
    conditional law given the coordinates outside A."""
    f = nu.f
    if not 1 <= ell <= f:
        raise SubsetTooLarge(f"ell={ell} must lie in [1, {f}]")
    _check_size(nu)
    sup = nu.support
    pi = nu.full[sup]
    m = sup.size
    P = np.zeros((m, m))
    subsets = list(itertools.combinations(nu.free.tolist(), ell))
    for A in subsets:
        key = sup & ~_mask_of(A)
        _, inv = np.unique(key, return_inverse=True)
        Z = np.bincount(inv, weights=pi)
        same = inv[:, None] == inv[None, :]
        P += np.where(same, pi[None, :] / Z[inv][:, None], 0.0)
    P /= len(subsets)
    return Kernel(sup, P, nu, f"l_glauber(ell={ell})")


def kernel_from_coordinate_localization(nu: M.SpinMeasure, tau: int) -> Kernel:
    """P[x, y] = E[nu_tau(x) nu_tau(y)] / nu(x) for the coordinate-by-coordinate
    scheme stopped after tau revealed coordinates, by explicit enumeration of
    the law of nu_tau."""
    from .localization import coord_enumerate

    if not 0 <= tau <= nu.f:
        raise SubsetTooLarge(f"tau={tau} must lie in [0, {nu.f}]")
    _check_size(nu)
    sup = nu.support
    ens = coord_enumerate(nu, tau)
    m = sup.size
    P = np.zeros((m, m))
    for w, mem in zip(ens.weights, ens.members):
        q = mem.full[sup]
        nz = np.flatnonzero(q)
        P[np.ix_(nz, nz)] += w * np.outer(q[nz], q[nz])
    P /= nu.full[sup][:, None]
    return Kernel(sup, P, nu, f"coordinate_localization(tau={tau})")


def cube_rgd(nu: M.SpinMeasure, eta: float, mc_samples: int = 100_000, seed: int = 0,
             target_stderr: float | None = None, chunk: int = 20_000) -> Kernel:
    """Restricted Gaussian dynamics on the cube, estimated by Monte Carlo.

    From x draw y ~ N(x, eta I), then z from nu tilted by y / eta.  Each row is
    the sample mean of the tilted law; per-entry standard errors are attached.
    """
    if not (eta > 0 and math.isfinite(eta)):
        raise InputError("eta must be positive and finite")
    if mc_samples < 2:
        raise InsufficientSamples("need at least two Monte Carlo samples")
    _check_size(nu)
    sup = nu.support
    pts = M.cube(nu.n)[sup]
    logpi = np.log(nu.full[sup])
    rng = np.random.default_rng(seed)
    m = sup.size
    P = np.zeros((m, m))
    SE = np.zeros((m, m))
    sqe = math.sqrt(eta)
    for r, x in enumerate(pts):
        s1 = np.zeros(m)
        s2 = np.zeros(m)
        done = 0
        while done < mc_samples:
            k = min(chunk, mc_samples - done)
            y = x[None, :] + sqe * rng.standard_normal((k, nu.n))
            logits = logpi[None, :] + (y @ pts.T) / eta
            logits -= logits.max(axis=1, keepdims=True)
            q = np.exp(logits)
            q /= q.sum(axis=1, keepdims=True)
            s1 += q.sum(axis=0)
            s2 += (q * q).sum(axis=0)
            done += k
        mean = s1 / mc_samples
        var = np.maximum(s2 / mc_samples - mean ** 2, 0.0)
        P[r] = mean / mean.sum()
        SE[r] = np.sqrt(var / (mc_samples - 1))
    if target_stderr is not None and SE.max() > target_stderr:
        raise InsufficientSamples(
            f"max standard error {SE.max():.3g} exceeds target {target_stderr:.3g} at {mc_samples} samples")
    return Kernel(sup, P, nu, f"cube_rgd(eta={eta:g})", stderr=SE)


def rgd_reversibility_check(K: Kernel, n_sigma: float = 3.0) -> Check:
    """Detailed balance for a Monte Carlo kernel, in units of its standard error."""
    pi = K.pi
    F = pi[:, None] * K.P
    se = np.sqrt((pi[:, None] * K.stderr) ** 2 + (pi[None, :] * K.stderr.T) ** 2)
    z = np.abs(F - F.T) / np.maximum(se, 1e-300)
    return leq("rgd_detailed_balance", K.name, float(z.max()), n_sigma)


def permute_coordinates(nu: M.SpinMeasure, perm) -> M.SpinMeasure:
    """Relabel coordinates: new coordinate k is old coordinate perm[k]."""
    perm = np.asarray(perm)
    pts = M.cube(nu.n)
    idx = ((pts[:, perm] > 0) << np.arange(nu.n)).sum(axis=1)
    full = np.zeros(1 << nu.n)
    full[idx] = nu.full
    return M.SpinMeasure.from_full(full, nu.pin[perm])

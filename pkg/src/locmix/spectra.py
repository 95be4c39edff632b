"""Spectral gaps, adversarial MLSI estimates, Dirichlet-form identities and
total-variation mixing times for reversible kernels."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, null_space, solve_triangular
from scipy.optimize import minimize

from . import measures as M
from .errors import DegenerateEntropy, InputError, Nonconvergence, NotReversible, SubsetTooLarge
from .kernels import Kernel, kernel_from_coordinate_localization
from .parallel import block_rngs, map_ordered
from .reports import Check, close, leq

REVERSIBILITY_TOL = 1e-8
# Entropies of mean-one functions below this are dominated by rounding and
# give meaningless ratios.
ENT_FLOOR = 1e-12


@dataclass
class SpectralReport:
    gap: float
    eigenvalues: np.ndarray
    witness: np.ndarray  # on the kernel support

    def to_dict(self) -> dict:
        return {"gap": self.gap, "eigenvalues": self.eigenvalues, "witness": self.witness}


@dataclass
class MlsiEstimate:
    upper: float
    ratio: float
    witness_f: np.ndarray
    restarts_used: int
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"upper": self.upper, "ratio": self.ratio, "witness_f": self.witness_f,
                "restarts_used": self.restarts_used}


def _symmetrized(K: Kernel) -> np.ndarray:
    err = K.detailed_balance_error()
    if err > REVERSIBILITY_TOL:
        raise NotReversible(f"detailed balance violated by {err:.3g}")
    s = np.sqrt(K.pi)
    S = s[:, None] * K.P / s[None, :]
    return (S + S.T) / 2


def spectral_gap(K: Kernel) -> SpectralReport:
    """1 minus the second largest eigenvalue of a reversible kernel."""
    if K.size == 1:
        return SpectralReport(1.0, np.ones(1), np.zeros(1))
    lam, U = np.linalg.eigh(_symmetrized(K))
    witness = U[:, -2] / np.sqrt(K.pi)
    witness = witness - K.pi @ witness
    return SpectralReport(float(1.0 - lam[-2]), lam, witness)


def dirichlet_form(K: Kernel, phi: np.ndarray) -> float:
    """(1/2) sum_x,y pi(x) P(x,y) (phi(x) - phi(y))^2 for phi on the support."""
    d = phi[:, None] - phi[None, :]
    return float(0.5 * np.sum(K.pi[:, None] * K.P * d * d))


def rayleigh_quotient(K: Kernel, phi: np.ndarray) -> float:
    var = float(K.pi @ (phi - K.pi @ phi) ** 2)
    return dirichlet_form(K, phi) / var


# ------------------------------------------------------------------ MLSI

def entropy_ratio(K: Kernel, f: np.ndarray) -> float:
    """Ent[Pf] / Ent[f] for a nonnegative f on the support; 0 when Ent[f]
    (with f scaled to mean one) is below the rounding floor ENT_FLOOR."""
    f = np.asarray(f, dtype=float)
    mass = float(K.pi @ f)
    if mass <= 0:
        return 0.0
    f = f / mass
    e = M.entropy_of(K.pi, f)
    if e <= ENT_FLOOR:
        return 0.0
    return M.entropy_of(K.pi, K.P @ f) / e


def _ratio_and_grad(g: np.ndarray, P: np.ndarray, pi: np.ndarray):
    h = g - g.max()
    f = np.exp(h)
    z = pi @ f
    f /= z
    Pf = P @ f
    logf = h - math.log(z)
    logPf = np.log(np.maximum(Pf, 1e-300))
    E = float(pi @ (f * logf))  # mean of f is 1
    A = float(pi @ (Pf * logPf))
    if E <= ENT_FLOOR:
        return 0.0, np.zeros_like(g)
    dE = pi * logf
    dA = P.T @ (pi * logPf)
    R = A / E
    grad_f = (dA - R * dE) / E
    return R, f * grad_f


def _optimize(g0: np.ndarray, P: np.ndarray, pi: np.ndarray, maxiter: int, gtol: float):
    def obj(g):
        r, gr = _ratio_and_grad(g, P, pi)
        return -r, -gr

    res = minimize(obj, g0, jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-15})
    return res.x


def mlsi_starts(K: Kernel, restarts: int, rng: np.random.Generator) -> list[np.ndarray]:
    m = K.size
    starts = []
    wit = spectral_gap(K).witness
    scale = math.sqrt(float(K.pi @ wit ** 2))  # pi-standard deviation, robust to heavy tails
    if scale > 0:
        # clip: eigenvector / sqrt(pi) is pure rounding where pi underflows
        w = np.clip(wit / scale, -6.0, 6.0)
        starts += [0.5 * w, -0.5 * w, 2.0 * w, np.log(w * w + 1e-3)]
    starts.append(np.where(np.arange(m) == int(np.argmin(K.pi)), 5.0, 0.0))
    starts.append(np.where(np.arange(m) == int(np.argmax(K.pi)), 5.0, 0.0))
    scales = (0.5, 1.0, 2.0, 4.0)
    k = 0
    while len(starts) < restarts:
        if k % 3 == 2:
            starts.append(np.where(np.arange(m) == rng.integers(m), 6.0, 0.0))
        else:
            starts.append(scales[k % 4] * rng.standard_normal(m))
        k += 1
    return starts[:max(restarts, 1)]


def mlsi_adversarial(K: Kernel, restarts: int = 50, seed: int = 0, maxiter: int = 5000,
                     gtol: float = 1e-10, threads: int | None = None) -> MlsiEstimate:
    """Upper estimate of rho_LS = 1 - sup_f Ent[Pf]/Ent[f].

    The supremum is searched by L-BFGS over f = exp(g) from several starts
    (spectral witness perturbations, spikes, random exponentials).  Any f
    found gives a valid upper bound on rho_LS; the true value may be lower.
    """
    if K.size < 2:
        raise DegenerateEntropy("stationary measure is a point mass; every entropy vanishes")
    rng = np.random.default_rng(seed)
    starts = mlsi_starts(K, restarts, rng)
    P, pi = K.P, K.pi

    def run(g0):
        g = _optimize(g0, P, pi, maxiter, gtol)
        f = np.exp(g - g.max())
        return entropy_ratio(K, f), f

    results = map_ordered(run, starts, threads)
    ratios = [r for r, _ in results]
    best = int(np.argmax(ratios))  # first index wins ties
    r, f = results[best]
    r = min(max(r, 0.0), 1.0)
    return MlsiEstimate(upper=1.0 - r, ratio=r, witness_f=f / (pi @ f), restarts_used=len(starts),
                        history=ratios)


# ------------------------------------------------------- localization sums

def expected_post_localization(nu: M.SpinMeasure, t: int, fn, kind: str = "var") -> float:
    """E[Var_{nu_t} phi] or E[Ent_{nu_t} f] for the coordinate scheme after t
    revealed coordinates, as the exact sum over revealed sets and values."""
    if not 0 <= t <= nu.f:
        raise SubsetTooLarge(f"t={t} must lie in [0, {nu.f}]")
    vals = M._values(nu, fn)
    w = nu.weights
    subsets = list(itertools.combinations(range(nu.f), t))
    total = 0.0
    for S in subsets:
        lab = _free_groups(nu, S)
        mass = np.bincount(lab, weights=w)
        m1 = np.bincount(lab, weights=w * vals)
        if kind == "var":
            m2 = np.bincount(lab, weights=w * vals * vals)
            with np.errstate(invalid="ignore", divide="ignore"):
                var = np.where(mass > 0, m2 - np.where(mass > 0, m1 * m1 / mass, 0.0), 0.0)
            total += float(np.sum(np.maximum(var, 0.0)))
        elif kind == "ent":
            mlogm = np.bincount(lab, weights=w * M.xlogx(vals))
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = np.where(mass > 0, m1 / np.where(mass > 0, mass, 1.0), 0.0)
            ent = mlogm - mass * M.xlogx(mean)
            total += float(np.sum(np.maximum(ent, 0.0)))
        else:
            raise InputError("kind must be 'var' or 'ent'")
    return total / len(subsets)


def _free_groups(nu: M.SpinMeasure, S) -> np.ndarray:
    """Labels by the values of the free coordinates with positions S (0..f-1)."""
    idx = np.arange(1 << nu.f)
    lab = np.zeros(idx.shape, dtype=np.int64)
    for j, k in enumerate(S):
        lab |= ((idx >> k) & 1) << j
    return lab


def localization_variance_form(nu: M.SpinMeasure, t: int) -> np.ndarray:
    """Matrix A over the support with phi^T A phi = E[Var_{nu_t} phi]."""
    sup_mask = nu.weights > 0
    w = nu.weights
    subsets = list(itertools.combinations(range(nu.f), t))
    A = np.zeros((w.size, w.size))
    for S in subsets:
        lab = _free_groups(nu, S)
        mass = np.bincount(lab, weights=w)
        same = lab[:, None] == lab[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            inv = np.where(mass[lab] > 0, 1.0 / mass[lab], 0.0)
        A += np.diag(w) - np.where(same, np.outer(w, w) * inv[:, None], 0.0)
    A /= len(subsets)
    order = np.argsort(nu.free_to_full[sup_mask])
    keep = np.flatnonzero(sup_mask)[order]
    return A[np.ix_(keep, keep)]


def generalized_min_eigenvalue(A: np.ndarray, pi: np.ndarray) -> float:
    """min over non-constant phi of phi^T A phi / Var_pi(phi), via whitening of
    the variance form on the complement of the constants."""
    m = pi.size
    if m == 1:
        return 1.0
    B = np.diag(pi) - np.outer(pi, pi)
    Q = null_space(np.ones((1, m)))
    Bq = Q.T @ B @ Q
    L = cholesky((Bq + Bq.T) / 2, lower=True)
    Aq = Q.T @ A @ Q
    X = solve_triangular(L, solve_triangular(L, (Aq + Aq.T) / 2, lower=True).T, lower=True)
    return float(np.linalg.eigvalsh((X + X.T) / 2)[0])


def _support_values(nu: M.SpinMeasure, fn) -> np.ndarray:
    full = np.zeros(1 << nu.n)
    full[nu.free_to_full] = M._values(nu, fn)
    return full[nu.support]


def verify_localization_gap_identity(nu: M.SpinMeasure, tau: int, phis, tol: float = 1e-10,
                                     instance: str = "") -> list[Check]:
    """Dirichlet form of the localization kernel equals E[Var_{nu_tau} phi];
    and the kernel's gap equals the minimal ratio of the two quadratic forms."""
    K = kernel_from_coordinate_localization(nu, tau)
    inst = instance or f"n={nu.n},tau={tau}"
    out = []
    for k, phi in enumerate(phis):
        lhs = dirichlet_form(K, _support_values(nu, phi))
        rhs = expected_post_localization(nu, tau, phi, "var")
        out.append(close("dirichlet_equals_expected_variance", f"{inst},phi#{k}", lhs, rhs, tol))
    gap = spectral_gap(K).gap
    gmin = generalized_min_eigenvalue(localization_variance_form(nu, tau), K.pi)
    out.append(close("gap_equals_min_variance_ratio", inst, gap, gmin, 1e-9))
    return out


def verify_entropy_step_inequality(nu: M.SpinMeasure, tau: int, fs, tol: float = 1e-10,
                                   instance: str = "") -> list[Check]:
    """Ent[Pf] <= Ent[f] - E[Ent_{nu_tau} f] for the localization kernel."""
    K = kernel_from_coordinate_localization(nu, tau)
    inst = instance or f"n={nu.n},tau={tau}"
    out = []
    for k, f in enumerate(fs):
        fv = _support_values(nu, f)
        lhs = M.entropy_of(K.pi, K.P @ fv)
        rhs = M.entropy_of(K.pi, fv) - expected_post_localization(nu, tau, f, "ent")
        out.append(leq("entropy_step_inequality", f"{inst},f#{k}", lhs, rhs, tol))
    return out


# ----------------------------------------------------------- mixing times

def _tv(rows: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(rows - pi[None, :]).sum(axis=1)


def _start_rows(K: Kernel, mu0) -> np.ndarray:
    if mu0 is None:
        return np.eye(K.size)
    if isinstance(mu0, M.SpinMeasure):
        full = mu0.full
        if full[np.setdiff1d(np.arange(full.size), K.support)].sum() > 1e-15:
            raise InputError("initial law charges configurations outside the kernel support")
        return full[K.support][None, :]
    mu0 = np.atleast_2d(np.asarray(mu0, dtype=float))
    if mu0.shape[1] != K.size:
        raise InputError("initial law must be given on the kernel support")
    return mu0


def tv_mixing_time(K: Kernel, mu0=None, eps: float = 0.25, cap: int = 1_000_000) -> int:
    """Smallest t with TV(mu0 P^t, pi) <= eps; worst start over the support if
    mu0 is None."""
    if not 0 < eps < 0.5:
        raise InputError("eps must lie in (0, 1/2)")
    rows = _start_rows(K, mu0)
    pi = K.pi
    lam = spectral_gap(K).eigenvalues if K.size > 1 else np.ones(1)
    slem = float(np.max(np.abs(lam[:-1]))) if lam.size > 1 else 0.0
    if slem < 1:
        pmin = float(pi.min())
        bound = math.log(1.0 / (eps * pmin)) / max(-math.log(max(slem, 1e-300)), 1e-300)
        if bound > cap:
            raise Nonconvergence(f"eigenvalue bound predicts > {cap} steps")
    t = 0
    while np.max(_tv(rows, pi)) > eps:
        if t >= cap:
            raise Nonconvergence(f"TV still above {eps} after {cap} steps")
        rows = rows @ K.P
        t += 1
    return t


def fact_mixing_consistency(K: Kernel, eps: float = 0.25) -> Check:
    """Measured worst-start t_mix against gap^{-1}(log(1/eta) + log(1/eps)).

    The ratio is reported; the unspecified constant means it is not a
    pass/fail assertion (``asserted`` is False in the detail).
    """
    t = tv_mixing_time(K, None, eps)
    gap = spectral_gap(K).gap
    eta = float(K.pi.min())
    bound = (math.log(1 / eta) + math.log(1 / eps)) / gap
    return Check("fact_mixing_ratio", K.name, float(t), bound, 0.0, True,
                 {"ratio": t / bound, "asserted": False, "gap": gap, "eta": eta, "eps": eps})

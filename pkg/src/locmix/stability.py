"""Certificates for spectral independence, entropic stability and tame or
bounded marginals, plus numerical checks of the supporting lemmas.

Pinning-quantified conditions are certified exactly by enumerating all
3^f pinnings through a subcube-mass tensor.  Tilt-quantified conditions are
estimated by a radial scan with local refinement; the reported constant is
therefore a lower estimate of the true supremum.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import measures as M
from .errors import BudgetExceeded, DomainError, InputError
from .reports import Check, close, geq, jsonable, leq

MAX_PIN_FREE = 11
SMALL_V = 1e-3
RADII = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
CHUNK = 20_000


@dataclass
class Certificate:
    kind: str
    constant: float
    witness: dict
    meta: dict = field(default_factory=dict)
    claim: float | None = None
    passed: bool | None = None

    def against(self, claim: float, tol: float = 0.0, upper: bool = True) -> "Certificate":
        """Compare with a claimed bound (constant <= claim if upper, else >=)."""
        self.claim = float(claim)
        self.passed = bool(self.constant <= claim + tol) if upper else bool(self.constant >= claim - tol)
        return self

    def to_dict(self) -> dict:
        return jsonable({"kind": self.kind, "constant": self.constant, "witness": self.witness,
                         "meta": self.meta, "claim": self.claim, "pass": self.passed})


# ------------------------------------------------------------ H and Phi

def h_divergence(x, y) -> float:
    """Sum over coordinates with |y_i| < 1 of the binary relative entropy
    between the +-1 laws with means x_i and y_i."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(np.sum(h_terms(x, y)))


def h_terms(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-coordinate terms of the H-divergence (broadcasting)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if (np.abs(x) > 1 + 1e-12).any() or (np.abs(y) > 1 + 1e-12).any():
        raise DomainError("arguments of H must lie in [-1, 1]")
    x = np.clip(x, -1.0, 1.0)
    y = np.clip(y, -1.0, 1.0)
    inner = np.abs(y) < 1
    yp = np.where(inner, 1 + y, 1.0)
    ym = np.where(inner, 1 - y, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(1 + x > 0, (1 + x) / 2 * np.log((1 + x) / yp), 0.0)
        t2 = np.where(1 - x > 0, (1 - x) / 2 * np.log((1 - x) / ym), 0.0)
    return np.where(inner, t1 + t2, 0.0)


def phi(s):
    """(1+s) log(1+s) - s for s >= -1."""
    s = np.asarray(s, dtype=float)
    if (s < -1 - 1e-15).any():
        raise DomainError("phi is defined for s >= -1")
    s = np.maximum(s, -1.0)
    return M.xlogx(1 + s) - s


def lemma_hphi_check(points: int = 2001, eps_values=(1, 2, 5, 10), tol: float = 1e-12) -> list[Check]:
    """Grid check of the H versus Phi comparisons on [-1,1] x (-1,1)."""
    g = np.linspace(-1.0, 1.0, points)
    x = g[:, None]
    y = g[1:-1][None, :]
    H = h_terms(x, y)
    mid = (1 + y) * phi((x - y) / (1 + y))
    out = [
        geq("hphi_lower", f"grid={points}", float(np.min(mid - 0.5 * H)), 0.0, tol),
        geq("hphi_upper", f"grid={points}", float(np.min(2 * H - mid)), 0.0, tol),
    ]
    for e in eps_values:
        rhs = e * (1 + y) * phi((x - y) / (e * (1 + y)))
        out.append(geq("hphi_scaled", f"grid={points},eps={e}", float(np.min(rhs - H / (4 * e))), 0.0, tol))
    s = g
    out.append(geq("phi_abs", f"grid={points}", float(np.min(phi(np.abs(s)) - phi(s) / 3)), 0.0, tol))
    return out


# ---------------------------------------------------- pinning enumeration

def _tern(a: np.ndarray) -> np.ndarray:
    """Extend every binary axis to [x=-1, free, x=+1] subcube sums."""
    for ax in range(a.ndim):
        lo = np.take(a, [0], axis=ax)
        hi = np.take(a, [1], axis=ax)
        a = np.concatenate([lo, lo + hi, hi], axis=ax)
    return a


class PinningTables:
    """Subcube masses and first/second moments for every pinning of the free
    coordinates of nu.  Ternary digit 0 pins -1, 1 leaves free, 2 pins +1;
    axis k is the k-th free coordinate."""

    def __init__(self, nu: M.SpinMeasure, max_free: int = MAX_PIN_FREE):
        f = nu.f
        if f > max_free:
            raise BudgetExceeded(f"pinning enumeration over 3^{f} pinnings exceeds the cap of {max_free} free coordinates")
        self.nu, self.f = nu, f
        shape2 = (2,) * f
        axes = tuple(range(f))[::-1]

        def cube_array(vals):
            return np.asarray(vals).reshape(shape2).transpose(axes) if f else np.asarray(vals).reshape(())

        w = nu.weights
        xs = nu.points[:, nu.free]
        self.T = _tern(cube_array(w)).ravel()
        self.M1 = np.stack([_tern(cube_array(w * xs[:, i])).ravel() for i in range(f)]) if f else np.zeros((0, 1))
        self.pairs = list(itertools.combinations(range(f), 2))
        self.M2 = (np.stack([_tern(cube_array(w * xs[:, i] * xs[:, j])).ravel() for i, j in self.pairs])
                   if self.pairs else np.zeros((0, self.T.size)))
        self.digits = (np.stack(np.unravel_index(np.arange(self.T.size), (3,) * f), axis=1)
                       if f else np.zeros((1, 0), dtype=np.int64))
        self.valid = self.T > 0
        self.level = (self.digits != 1).sum(axis=1)

    def pinning(self, flat: int) -> np.ndarray:
        """Full-length pinning vector (including nu's own pins) for a flat index."""
        u = self.nu.pin.astype(np.int8).copy()
        u[self.nu.free] = self.digits[flat] - 1
        return u

    def cov(self, idx: np.ndarray) -> np.ndarray:
        T = self.T[idx]
        b = self.M1[:, idx].T / T[:, None]
        cov = np.zeros((idx.size, self.f, self.f))
        d = np.arange(self.f)
        cov[:, d, d] = 1.0 - b * b
        for p, (i, j) in enumerate(self.pairs):
            c = self.M2[p, idx] / T - b[:, i] * b[:, j]
            cov[:, i, j] = c
            cov[:, j, i] = c
        free = (self.digits[idx] == 1)
        cov *= free[:, :, None] & free[:, None, :]
        return cov

    def rho(self) -> np.ndarray:
        """rho(Psi) = ||Cor|| for every pinning (nan for zero-mass pinnings)."""
        out = np.full(self.T.size, np.nan)
        idx_all = np.flatnonzero(self.valid)
        for s in range(0, idx_all.size, CHUNK):
            idx = idx_all[s:s + CHUNK]
            out[idx] = cor_norms(self.cov(idx))
        return out


def cor_norms(cov: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of the correlation matrix for a batch of covariances,
    dropping zero-variance coordinates."""
    if cov.shape[-1] == 0:
        return np.zeros(cov.shape[0])
    var = np.diagonal(cov, axis1=1, axis2=2)
    ok = var > M.VAR_TOL
    dinv = np.where(ok, 1.0 / np.sqrt(np.where(ok, var, 1.0)), 0.0)
    cor = cov * dinv[:, :, None] * dinv[:, None, :]
    cor = (cor + np.swapaxes(cor, 1, 2)) / 2
    return np.linalg.eigvalsh(cor)[:, -1]


def si_all_pinnings(nu: M.SpinMeasure, claim: float | None = None,
                    max_free: int = MAX_PIN_FREE) -> Certificate:
    """max over all positive-mass pinnings u of rho(Psi(R_u nu)), with the
    per-level maxima eta_i over pinnings of exactly i free coordinates."""
    tab = PinningTables(nu, max_free)
    rho = tab.rho()
    masked = np.where(tab.valid, rho, -np.inf)
    k = int(np.argmax(masked))
    eta = [float(np.max(masked[tab.level == i])) for i in range(tab.f + 1)]
    eta = [e if np.isfinite(e) else 0.0 for e in eta]
    cert = Certificate("SI-pinnings", float(masked[k]), {"u": tab.pinning(k).tolist()},
                       {"pinnings": int(tab.valid.sum()), "eta_levels": eta, "exact": True})
    return cert.against(claim, 1e-12) if claim is not None else cert


def eta_levels(nu: M.SpinMeasure) -> list[float]:
    return si_all_pinnings(nu).meta["eta_levels"]


def tame_marginals_check(nu: M.SpinMeasure, K: float | None = None,
                         max_free: int = MAX_PIN_FREE) -> Certificate:
    """Smallest K such that every further pinning inflates each marginal's odds
    ratio by at most K and 1 - b_i(R_u nu) >= 1/K over all pinnings u."""
    tab = PinningTables(nu, max_free)
    f = tab.f
    T = tab.T.reshape((3,) * f)
    k_ratio, k_low = 1.0, 1.0
    w_ratio, w_low = None, None
    for i in range(f):
        P = np.take(T, 2, axis=i)
        N = np.take(T, 0, axis=i)
        Tm = np.take(T, 1, axis=i)
        valid = Tm > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            odds = np.where(valid, P / N, np.nan)
            low = np.where(valid, Tm / (2 * N), -np.inf)
        sup = np.where(valid, odds, -np.inf)
        for ax in range(f - 1):
            lo = np.take(sup, 0, axis=ax)
            mid = np.take(sup, 1, axis=ax)
            hi = np.take(sup, 2, axis=ax)
            sup = np.stack([lo, np.maximum(mid, np.maximum(lo, hi)), hi], axis=ax)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(valid, sup / odds, -np.inf)
        both_edge = valid & (((odds == 0) & (sup == 0)) | (np.isinf(odds) & np.isinf(sup)))
        ratio = np.where(both_edge, 1.0, ratio)
        ratio = np.where(np.isnan(ratio), np.inf, ratio)
        r_idx = int(np.argmax(ratio))
        if ratio.flat[r_idx] > k_ratio:
            k_ratio, w_ratio = float(ratio.flat[r_idx]), (i, r_idx)
        l_idx = int(np.argmax(low))
        if low.flat[l_idx] > k_low:
            k_low, w_low = float(low.flat[l_idx]), (i, l_idx)

    def decode(i, flat):
        rest = np.unravel_index(flat, (3,) * (f - 1)) if f > 1 else ()
        digits = list(rest)
        digits.insert(i, 1)
        u = nu.pin.astype(np.int8).copy()
        u[nu.free] = np.asarray(digits, dtype=np.int64) - 1
        return int(nu.free[i]), u.tolist()

    witness = {}
    if w_ratio is not None:
        coord, u = decode(*w_ratio)
        witness["ratio"] = {"i": coord, "u": u}
    if w_low is not None:
        coord, u = decode(*w_low)
        witness["lower"] = {"i": coord, "u": u}
    const = max(k_ratio, k_low, 1.0)
    cert = Certificate("TameMarginals", const, witness,
                       {"K_ratio": k_ratio, "C_lower": k_low, "finite": bool(np.isfinite(const)), "exact": True})
    return cert.against(K) if K is not None else cert


def bounded_marginals_check(nu: M.SpinMeasure, b: float | None = None,
                            max_free: int = MAX_PIN_FREE) -> Certificate:
    """Largest b with |b_i(R_u nu)| <= 1 - b for all pinnings u and free i."""
    tab = PinningTables(nu, max_free)
    best, wit = 1.0, {}
    for i in range(tab.f):
        m = tab.valid & (tab.digits[:, i] == 1)
        idx = np.flatnonzero(m)
        if idx.size == 0:
            continue
        bi = tab.M1[i, idx] / tab.T[idx]
        slack = 1.0 - np.abs(bi)
        k = int(np.argmin(slack))
        if slack[k] < best:
            best, wit = float(slack[k]), {"i": int(nu.free[i]), "u": tab.pinning(idx[k]).tolist()}
    cert = Certificate("BoundedMarginals", best, wit, {"exact": True})
    return cert.against(b, 1e-12, upper=False) if b is not None else cert


def all_pinnings(nu: M.SpinMeasure, max_free: int = MAX_PIN_FREE):
    """Yield (u, R_u nu) over every positive-mass pinning of the free coordinates."""
    tab = PinningTables(nu, max_free)
    for k in np.flatnonzero(tab.valid):
        u = tab.pinning(k)
        yield u, M.pin(nu, u)


# ------------------------------------------------------------ tilt scans

def _active(nu: M.SpinMeasure) -> np.ndarray:
    var = np.diag(M.moments(nu).cov)
    return np.flatnonzero((nu.pin == 0) & (var > M.VAR_TOL))


def _directions(rng: np.random.Generator, d: int, n_dirs: int) -> np.ndarray:
    D = rng.standard_normal((n_dirs, d))
    D = np.vstack([np.eye(d), -np.eye(d), np.ones((1, d)) / math.sqrt(d), -np.ones((1, d)) / math.sqrt(d), D])
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def _support_arrays(nu: M.SpinMeasure):
    pos = nu.weights > 0
    return nu.points[pos], np.log(nu.weights[pos])


def tilted_means(nu: M.SpinMeasure, V: np.ndarray):
    """(b(T_v nu), KL(T_v nu || nu), weights) for every row v of V."""
    pts, lw = _support_arrays(nu)
    Z = lw[None, :] + V @ pts.T
    L = logsumexp(Z, axis=1)
    W = np.exp(Z - L[:, None])
    B = W @ pts
    KL = np.maximum(np.sum(W * (Z - L[:, None] - lw[None, :]), axis=1), 0.0)
    return B, KL, W


def tilted_covs(nu: M.SpinMeasure, V: np.ndarray) -> np.ndarray:
    pts, _ = _support_arrays(nu)
    B, _, W = tilted_means(nu, V)
    n = nu.n
    E2 = (W @ (pts[:, :, None] * pts[:, None, :]).reshape(pts.shape[0], n * n)).reshape(-1, n, n)
    cov = E2 - B[:, :, None] * B[:, None, :]
    free = nu.pin == 0
    return cov * (free[:, None] & free[None, :])[None]


def _psi_values(psi: str, B: np.ndarray, b0: np.ndarray, C: np.ndarray | None) -> np.ndarray:
    if psi == "quad":
        d = B - b0[None, :]
        if C is not None:
            d = d @ C.T
        return 0.5 * np.sum(d * d, axis=1)
    if psi == "H":
        return np.sum(h_terms(np.clip(B, -1, 1), b0[None, :]), axis=1)
    raise InputError("psi must be 'quad' or 'H'")


def _limit_ratio(psi: str, cov: np.ndarray, dirs: np.ndarray, C: np.ndarray | None) -> np.ndarray:
    """v -> 0 limit of psi/KL along each direction: (Cov d)^T G (Cov d) / d^T Cov d."""
    cd = dirs @ cov
    den = np.sum(cd * dirs, axis=1)
    if psi == "quad":
        G = np.eye(cov.shape[0]) if C is None else C.T @ C
    else:
        var = np.diag(cov)
        G = np.diag(np.where(var > M.VAR_TOL, 1.0 / np.where(var > M.VAR_TOL, var, 1.0), 0.0))
    num = np.sum((cd @ G) * cd, axis=1)
    return np.where(den > 1e-300, num / np.maximum(den, 1e-300), 0.0)


def entropic_ratio(nu: M.SpinMeasure, V, psi: str = "H", C=None) -> np.ndarray:
    """psi(b(T_v nu), b(nu)) / KL(T_v nu || nu) for each row of V, using the
    analytic small-tilt limit when |v| < 1e-3."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    C = None if C is None else np.asarray(C, dtype=float)
    mom = M.moments(nu)
    act = _active(nu)
    Va = np.zeros_like(V)
    Va[:, act] = V[:, act]
    norms = np.linalg.norm(Va, axis=1)
    out = np.zeros(V.shape[0])
    small = norms < SMALL_V
    if (~small).any():
        B, KL, _ = tilted_means(nu, Va[~small])
        num = _psi_values(psi, B, mom.b, C)
        out[~small] = np.where(KL > 0, num / np.where(KL > 0, KL, 1.0), 0.0)
    nz = small & (norms > 0)
    if nz.any():
        out[nz] = _limit_ratio(psi, mom.cov, Va[nz] / norms[nz, None], C)
    return out


def _limit_sup(psi: str, nu: M.SpinMeasure, C) -> tuple[float, np.ndarray]:
    """sup over directions of the small-tilt limit and a maximizing direction.

    With u = Cov^{1/2} d the limit is u^T Cov^{1/2} G Cov^{1/2} u / |u|^2,
    where G = C^T C (quadratic) or diag(Cov)^{-1} (H).
    """
    cov = M.moments(nu).cov
    act = _active(nu)
    if act.size == 0:
        return 0.0, np.zeros(nu.n)
    S = cov[np.ix_(act, act)]
    lam, U = np.linalg.eigh(S)
    keep = lam > 1e-14
    half = (U * np.sqrt(np.maximum(lam, 0.0))) @ U.T
    pinv_half = (U[:, keep] / np.sqrt(lam[keep])) @ U[:, keep].T
    if psi == "quad":
        Ca = (np.eye(nu.n) if C is None else np.asarray(C, dtype=float))[:, act]
        G = Ca.T @ Ca
    else:
        G = np.diag(1.0 / np.diag(S))
    A = half @ G @ half
    mu, Q = np.linalg.eigh((A + A.T) / 2)
    d = np.zeros(nu.n)
    d[act] = pinv_half @ Q[:, -1]
    nrm = np.linalg.norm(d)
    if nrm > 0:
        d /= nrm
    return float(mu[-1]), d


def _scan(nu: M.SpinMeasure, fn_ratio, radii, n_dirs, seed, extra, refine, limit=None):
    act = _active(nu)
    rng = np.random.default_rng(seed)
    cands = []
    if act.size:
        dirs = _directions(rng, act.size, n_dirs)
        for r in radii:
            V = np.zeros((dirs.shape[0], nu.n))
            V[:, act] = r * dirs
            cands.append(V)
    for v in extra:
        cands.append(np.atleast_2d(np.asarray(v, dtype=float)))
    if limit is not None:
        cands.append(limit[None, :])
    if not cands:
        return 0.0, np.zeros(nu.n), 0
    V = np.vstack(cands)
    vals = fn_ratio(V)
    k = int(np.argmax(vals))
    best, wit = float(vals[k]), V[k].copy()
    evaluated = V.shape[0]
    if refine and act.size and np.linalg.norm(wit) >= SMALL_V:
        def obj(z):
            v = np.zeros(nu.n)
            v[act] = np.clip(z, -M.TILT_BOX, M.TILT_BOX)
            return -float(fn_ratio(v[None, :])[0])

        res = minimize(obj, wit[act], method="Nelder-Mead",
                       options={"maxiter": 200 * act.size, "xatol": 1e-9, "fatol": 1e-13})
        evaluated += res.nfev
        if -res.fun > best:
            v = np.zeros(nu.n)
            v[act] = np.clip(res.x, -M.TILT_BOX, M.TILT_BOX)
            best, wit = -float(res.fun), v
    return best, wit, evaluated


def entropic_stability_scan(nu: M.SpinMeasure, psi: str = "H", C=None, radii=RADII, n_dirs: int = 200,
                            seed: int = 0, extra_tilts=(), refine: bool = True,
                            claim: float | None = None) -> Certificate:
    """sup over scanned tilts of psi(b(T_v nu), b(nu)) / KL(T_v nu || nu).

    Includes the exact small-tilt supremum (||C Cov C|| for the quadratic
    divergence, ||Cor|| for H) as a candidate, realized by a tiny tilt along
    the maximizing direction.
    """
    lim, d = _limit_sup(psi, nu, C)
    limit_v = d * (SMALL_V / 10)
    best, wit, evals = _scan(nu, lambda V: entropic_ratio(nu, V, psi, C), radii, n_dirs, seed,
                             extra_tilts, refine, limit_v if np.any(d) else None)
    kind = "EntStab-quad" if psi == "quad" else "EntStab-H"
    cert = Certificate(kind, best, {"v": wit.tolist()},
                       {"radii": list(radii), "n_dirs": n_dirs, "seed": seed, "refined": refine,
                        "evaluations": evals, "small_tilt_limit": lim, "exact": False})
    return cert.against(claim, 1e-9) if claim is not None else cert


def cor_norm_at(nu: M.SpinMeasure, V) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    return cor_norms(tilted_covs(nu, V))


def cor_under_tilts(nu: M.SpinMeasure, radii=RADII, n_dirs: int = 200, seed: int = 0,
                    refine: bool = True, claim: float | None = None) -> Certificate:
    """sup over scanned tilts of ||Cor(T_v nu)||, including v = 0."""
    best, wit, evals = _scan(nu, lambda V: cor_norm_at(nu, V), radii, n_dirs, seed,
                             [np.zeros(nu.n)], refine)
    cert = Certificate("Cor-tilts", best, {"v": wit.tolist()},
                       {"radii": list(radii), "n_dirs": n_dirs, "seed": seed, "refined": refine,
                        "evaluations": evals, "exact": False})
    return cert.against(claim, 1e-9) if claim is not None else cert


def scan_tilts(nu: M.SpinMeasure, n: int = 400, seed: int = 0, radii=RADII) -> np.ndarray:
    """A seeded cloud of tilt vectors (including 0) for inequality checks."""
    rng = np.random.default_rng(seed)
    d = _directions(rng, nu.n, n)
    r = np.asarray(radii)[rng.integers(len(radii), size=d.shape[0])]
    return np.vstack([np.zeros((1, nu.n)), d * r[:, None]])


# ------------------------------------------------------ lemma checks

def fact_inf_check(nu: M.SpinMeasure, tol: float = 1e-10) -> list[Check]:
    """Half the conditional-mean differences E[X_i | X_j = 1] - E[X_i | X_j = -1]
    equal (Cov D^{-1})_{ij}; ||Cor|| equals rho(Psi)."""
    inf = M.influence_correlation(nu, drop_degenerate=True)
    coords = inf.coords
    n = coords.size
    cond = np.zeros((n, n))
    for a, j in enumerate(coords):
        bp = M.center(M.pin_coordinate(nu, int(j), 1))
        bm = M.center(M.pin_coordinate(nu, int(j), -1))
        cond[:, a] = 0.5 * (bp - bm)[coords]
    inst = f"n={nu.n}"
    err = float(np.max(np.abs(cond - inf.psi))) if n else 0.0
    rho_psi = float(np.max(np.abs(np.linalg.eigvals(inf.psi)))) if n else 0.0
    cor_op = float(np.linalg.norm(inf.cor, 2)) if n else 0.0
    return [leq("influence_conditional_means", inst, err, 0.0, tol),
            close("cor_norm_equals_rho_psi", inst, cor_op, rho_psi, 1e-9)]


def lemma_cormar_check(nu: M.SpinMeasure, tol: float = 1e-10) -> list[Check]:
    """b(R_{s e_i} nu) - b(nu) = (1 + s b_i)^{-1} Cov(nu) s e_i."""
    mom = M.moments(nu)
    out = []
    worst = 0.0
    for i in nu.free:
        for s in (1, -1):
            if (1 + s * mom.b[i]) <= 0:
                continue
            lhs = M.center(M.pin_coordinate(nu, int(i), s)) - mom.b
            rhs = mom.cov[:, i] * s / (1 + s * mom.b[i])
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    out.append(leq("pinning_mean_shift", f"n={nu.n}", worst, 0.0, tol))
    return out


def llent_hessian_check(nu: M.SpinMeasure, x: np.ndarray, h: float = 1e-4, rtol: float = 1e-4) -> Check:
    """Central finite differences of the Legendre dual g at x against
    Cov(T_{v(x)} nu)^{-1} on the active coordinates."""
    act = _active(nu)
    x = np.asarray(x, dtype=float)
    k = act.size
    Hfd = np.zeros((k, k))

    def g(z):
        return M.legendre_dual(nu, z)

    for a in range(k):
        for c in range(a, k):
            ea = np.zeros(nu.n)
            ec = np.zeros(nu.n)
            ea[act[a]] = h
            ec[act[c]] = h
            val = (g(x + ea + ec) - g(x + ea - ec) - g(x - ea + ec) + g(x - ea - ec)) / (4 * h * h)
            Hfd[a, c] = Hfd[c, a] = val
    v = M.moment_matching_tilt(nu, x, tol=1e-12)
    cov = M.moments(M.tilt(nu, v)).cov[np.ix_(act, act)]
    ref = np.linalg.inv(cov)
    rel = float(np.max(np.abs(Hfd - ref)) / np.max(np.abs(ref)))
    return leq("legendre_hessian", f"n={nu.n}", rel, 0.0, rtol)


def lemma_sitoei_check(nu: M.SpinMeasure, alpha: float | None = None, K: float | None = None,
                       C: float | None = None, V: np.ndarray | None = None, seed: int = 0,
                       tol: float = 1e-10) -> list[Check]:
    """|b(T_v nu) - b(nu)|^2 <= 16 alpha^2 |v|^2 and, with tame constants,
    <v, b(T_v nu) - b(nu)> <= 4 alpha K^3 C sum (1+b_i) v_i^2 e^{4|v_i|}."""
    if alpha is None:
        alpha = max(1.0, si_all_pinnings(nu).constant)
    V = scan_tilts(nu, seed=seed) if V is None else np.atleast_2d(V)
    b0 = M.center(nu)
    B, _, _ = tilted_means(nu, V)
    d = B - b0
    lhs1 = np.sum(d * d, axis=1)
    rhs1 = 16 * alpha ** 2 * np.sum(V * V, axis=1)
    out = [geq("sitoei_quadratic_margin", f"n={nu.n}", float(np.min(rhs1 - lhs1)), 0.0, tol,
               alpha=alpha, worst_ratio=float(np.max(np.where(rhs1 > 0, lhs1 / np.maximum(rhs1, 1e-300), 0.0))))]
    if K is not None and C is not None:
        lhs2 = np.sum(V * d, axis=1)
        rhs2 = 4 * alpha * K ** 3 * C * np.sum((1 + b0)[None, :] * V * V * np.exp(4 * np.abs(V)), axis=1)
        out.append(geq("sitoei_weighted_margin", f"n={nu.n}", float(np.min(rhs2 - lhs2)), 0.0, tol,
                       K=K, C=C))
    return out


def lemma_llentdelta_check(nu: M.SpinMeasure, alpha: float | None = None, K: float | None = None,
                           C: float | None = None, V: np.ndarray | None = None, seed: int = 0,
                           tol: float = 1e-10) -> list[Check]:
    """With eps = 4 alpha: |b(T_v nu) - b|^2 <= eps KL; with
    eps_i = max(2, 4 alpha K^3 C (1+b_i)): H <= 192 C' KL, C' = max_i eps_i/(1+b_i)."""
    if alpha is None:
        alpha = max(1.0, si_all_pinnings(nu).constant)
    V = scan_tilts(nu, seed=seed) if V is None else np.atleast_2d(V)
    b0 = M.center(nu)
    B, KL, _ = tilted_means(nu, V)
    d = B - b0
    eps = 4 * alpha
    out = [geq("llentdelta_quadratic_margin", f"n={nu.n}", float(np.min(eps * KL - np.sum(d * d, axis=1))),
               0.0, tol, eps=eps)]
    if K is not None and C is not None:
        free = (nu.pin == 0) & (1 + b0 > 0)
        eps_i = np.maximum(2.0, 4 * alpha * K ** 3 * C * (1 + b0))
        c_prime = float(np.max((eps_i / np.where(free, 1 + b0, 1.0))[free])) if free.any() else 1.0
        Hs = _psi_values("H", B, b0, None)
        out.append(geq("llentdelta_h_margin", f"n={nu.n}", float(np.min(192 * c_prime * KL - Hs)), 0.0, tol,
                       C_prime=c_prime))
    return out


def theorem_eisi_check(nu: M.SpinMeasure, seed: int = 0, n_dirs: int = 200) -> list[Check]:
    """Scanned entropic-stability constants against 8 alpha (quadratic) and
    768 alpha K^3 C (H), with alpha = max(1, SI over all pinnings)."""
    si = si_all_pinnings(nu)
    alpha = max(1.0, si.constant)
    tame = tame_marginals_check(nu)
    quad = entropic_stability_scan(nu, "quad", seed=seed, n_dirs=n_dirs)
    inst = f"n={nu.n}"
    out = [leq("eisi_quadratic", inst, quad.constant, 8 * alpha, 1e-9, alpha=alpha)]
    K, Cc = tame.meta["K_ratio"], tame.meta["C_lower"]
    if np.isfinite(K) and np.isfinite(Cc):
        Hc = entropic_stability_scan(nu, "H", seed=seed, n_dirs=n_dirs)
        out.append(leq("eisi_h", inst, Hc.constant, 768 * alpha * K ** 3 * Cc, 1e-9, K=K, C=Cc))
    return out


def lemma_tiltmarginals_check(nu: M.SpinMeasure, V: np.ndarray | None = None, seed: int = 0,
                              tol: float = 1e-12) -> list[Check]:
    """Marginal growth under tilts of pinnings: 1 + b_i(T_v R_u nu) <= delta e^{max(0, 2 v_i)}
    and the two-sided odds version, over all pinnings u with u_i = 0."""
    tab = PinningTables(nu)
    free = nu.free
    delta, dlo, dhi = -np.inf, np.inf, -np.inf
    for a in range(tab.f):
        idx = np.flatnonzero(tab.valid & (tab.digits[:, a] == 1))
        stride = 3 ** (tab.f - 1 - a)
        plus, minus = tab.T[idx + stride], tab.T[idx - stride]
        delta = max(delta, float(np.max(2 * plus / tab.T[idx])))
        with np.errstate(divide="ignore"):
            odds = plus / minus
        dlo, dhi = min(dlo, float(np.min(odds))), max(dhi, float(np.max(odds)))
    V = scan_tilts(nu, n=100, seed=seed) if V is None else np.atleast_2d(V)
    m1, m2, m3 = np.inf, np.inf, np.inf
    for u, mu in all_pinnings(nu):
        B, _, W = tilted_means(mu, V)
        pts, _ = _support_arrays(mu)
        for i in free:
            if u[i] != 0:
                continue
            plus = W @ (pts[:, i] > 0)
            minus = W @ (pts[:, i] < 0)
            m1 = min(m1, float(np.min(delta * np.exp(np.maximum(0, 2 * V[:, i])) - 2 * plus)))
            with np.errstate(divide="ignore", invalid="ignore"):
                odds = plus / minus
            if np.isfinite(dhi):
                hi = dhi * np.exp(np.maximum(0, 2 * V[:, i]))
                ok = np.isfinite(odds)
                if ok.any():
                    m2 = min(m2, float(np.min((hi - odds)[ok] / np.maximum(hi[ok], 1.0))))
            lo = dlo * np.exp(np.minimum(0, 2 * V[:, i]))
            m3 = min(m3, float(np.min(np.where(np.isfinite(odds), odds - lo, np.inf))))
    inst = f"n={nu.n}"
    out = [geq("tiltmarginal_upper", inst, m1, 0.0, tol, delta=delta)]
    if np.isfinite(m2):
        out.append(geq("tiltmarginal_odds_upper", inst, m2, 0.0, 1e-10, delta_hi=dhi))
    if np.isfinite(m3):
        out.append(geq("tiltmarginal_odds_lower", inst, m3, 0.0, tol, delta_lo=dlo))
    return out


def maxent_dominance_check(nu: M.SpinMeasure, cert: Certificate, psi: str = "H", C=None,
                           n_mu: int = 200, seed: int = 0, slack: float = 0.05) -> list[Check]:
    """For random mu << nu: the moment-matching tilt has no larger KL, and
    psi(b(mu), b(nu)) <= (constant + slack) KL(mu || nu)."""
    rng = np.random.default_rng(seed)
    b0 = M.center(nu)
    worst_kl, worst_ratio = np.inf, 0.0
    for _ in range(n_mu):
        w = nu.weights * np.exp(rng.standard_normal(nu.weights.size) * rng.uniform(0.1, 2.0))
        mu = M.SpinMeasure(nu.n, nu.pin, w / w.sum())
        bm = M.center(mu)
        kmu = M.kl(mu, nu)
        if kmu <= 1e-12:
            continue
        try:
            v = M.moment_matching_tilt(nu, bm, tol=1e-10)
        except Exception:
            continue
        ktilt = M.tilt_kl(nu, v)
        worst_kl = min(worst_kl, kmu - ktilt)
        val = _psi_values(psi, bm[None, :], b0, None if C is None else np.asarray(C))[0]
        worst_ratio = max(worst_ratio, val / kmu)
    inst = f"n={nu.n}"
    return [geq("maxent_kl_dominance", inst, worst_kl if np.isfinite(worst_kl) else 0.0, 0.0, 1e-9),
            leq("maxent_ratio_vs_scan", inst, worst_ratio, cert.constant * (1 + slack), 1e-9)]


# ------------------------------------------------------ assembled bounds

def alo_bound(nu: M.SpinMeasure, ell: int, eta: list | None = None) -> float:
    """prod_{i=0}^{f-ell-1} (1 - eta_i/(f-i)), factors clamped at 0."""
    eta = eta_levels(nu) if eta is None else eta
    f = nu.f
    out = 1.0
    for i in range(f - ell):
        out *= max(0.0, 1.0 - eta[i] / (f - i))
    return out


def h_stability_levels(nu: M.SpinMeasure, n_dirs: int = 40, seed: int = 0,
                       radii=(0.5, 2.0, 8.0), refine: bool = False) -> list[float]:
    """Per-level maxima over pinnings (by number of pinned coordinates) of the
    scanned H-stability constant."""
    levels = [0.0] * (nu.f + 1)
    for u, mu in all_pinnings(nu):
        lvl = int(np.count_nonzero(u[nu.free]))
        c = entropic_stability_scan(mu, "H", radii=radii, n_dirs=n_dirs, seed=seed, refine=refine).constant
        levels[lvl] = max(levels[lvl], c)
    return levels


def clv_floor(nu: M.SpinMeasure, ell: int, kappa: list | None = None, **scan) -> float:
    """prod_{i=0}^{f-ell-1} (1 - kappa_i/(f-i)) from H-stability of every pinning."""
    kappa = h_stability_levels(nu, **scan) if kappa is None else kappa
    f = nu.f
    out = 1.0
    for i in range(f - ell):
        out *= max(0.0, 1.0 - kappa[i] / (f - i))
    return out

"""Localization processes: coordinate-by-coordinate (exact ensembles and
sampled paths), stochastic localization driven by Brownian motion, and
negative-fields localization with exponential pinning clocks.

Sampled schemes run batched over paths.  Paths are grouped in fixed blocks
with independent child seeds so results do not depend on the thread count.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import measures as M
from .errors import (
    BudgetExceeded,
    LocmixError,
    InputError,
    NoFreeCoordinates,
    StepTooLarge,
    SubsetTooLarge,
    ZeroDenominator,
)
from .kernels import Kernel
from .parallel import run_blocks
from .reports import Check, close, geq, jsonable, leq

ENUM_BUDGET = 2_000_000
TILT_PIN_TOL = 1e-12
CLIP_LIMIT = 0.01


# ---------------------------------------------------------------- records

@dataclass
class LocPath:
    scheme: str
    times: list
    states: list
    events: list
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def state_at(self, t: float) -> M.SpinMeasure:
        """Last recorded state at or before time t."""
        k = int(np.searchsorted(np.asarray(self.times), t + 1e-12, side="right")) - 1
        return self.states[max(k, 0)]

    def to_jsonl(self) -> str:
        head = {"scheme": self.scheme, "seed": self.seed, "meta": self.meta}
        lines = [json.dumps(jsonable(head), sort_keys=True)]
        lines += [json.dumps(jsonable(e), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"


@dataclass
class LocEnsemble:
    weights: np.ndarray
    members: list
    t: int

    def mixture(self) -> np.ndarray:
        out = np.zeros_like(self.members[0].full)
        for w, m in zip(self.weights, self.members):
            out += w * m.full
        return out

    def mixture_check(self, nu: M.SpinMeasure, tol: float = 1e-10) -> list[Check]:
        inst = f"n={nu.n},t={self.t}"
        return [close("ensemble_weights_sum", inst, float(np.sum(self.weights)), 1.0, 1e-12),
                leq("ensemble_mixture", inst, float(np.max(np.abs(self.mixture() - nu.full))), 0.0, tol)]


@dataclass
class ConservationTrace:
    kind: str  # "var" or "ent"
    scheme: str
    times: np.ndarray
    ratios: np.ndarray
    floors: np.ndarray
    stderr: np.ndarray | None = None
    cumulative: np.ndarray | None = None
    cumulative_floor: np.ndarray | None = None
    margins: np.ndarray | None = None  # min over members of ratio - floor (exact schemes)

    def checks(self, tol: float = 1e-9, n_sigma: float = 3.0) -> list[Check]:
        out = []
        for k, t in enumerate(self.times):
            inst = f"{self.scheme},{self.kind},t={t:g}"
            slack = tol if self.stderr is None else tol + n_sigma * float(self.stderr[k])
            out.append(leq("ratio_at_most_one", inst, float(self.ratios[k]), 1.0, 1e-12 + slack - tol))
            out.append(geq("ratio_above_floor", inst, float(self.ratios[k]), float(self.floors[k]), slack))
            if self.margins is not None:
                out.append(geq("conditional_ratio_above_floor", inst, float(self.margins[k]), 0.0, tol))
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "scheme": self.scheme, "times": self.times, "ratios": self.ratios,
             "floors": self.floors}
        for key in ("stderr", "cumulative", "cumulative_floor", "margins"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d


# ---------------------------------------------------- coordinate scheme

def _free_labels(f: int, S) -> np.ndarray:
    idx = np.arange(1 << f)
    lab = np.zeros(idx.shape, dtype=np.int64)
    for j, k in enumerate(S):
        lab |= ((idx >> k) & 1) << j
    return lab


def coord_enumerate(nu: M.SpinMeasure, t: int, budget: int = ENUM_BUDGET) -> LocEnsemble:
    """Exact law of nu_t: a uniform size-t set S of free coordinates is revealed
    with values drawn from nu; members are the conditionals nu(. | x_S)."""
    f = nu.f
    if not 0 <= t <= f:
        raise SubsetTooLarge(f"t={t} must lie in [0, {f}]")
    count = math.comb(f, t)
    if count * (1 << t) > budget:
        raise BudgetExceeded(f"C({f},{t})*2^{t} = {count << t} members exceeds budget {budget}")
    free = nu.free
    weights, members = [], []
    for S in itertools.combinations(range(f), t):
        lab = _free_labels(f, S)
        mass = np.bincount(lab, weights=nu.weights, minlength=1 << t)
        for g in np.flatnonzero(mass > 0):
            u = np.zeros(nu.n, dtype=np.int8)
            for j, k in enumerate(S):
                u[free[k]] = 1 if (g >> j) & 1 else -1
            weights.append(mass[g] / count)
            members.append(M.pin(nu, u))
    return LocEnsemble(np.asarray(weights), members, t)


@dataclass
class CoordStep:
    state: M.SpinMeasure
    Z: np.ndarray
    coord: int
    value: int
    threshold: float


def coord_sample_step(nu_t: M.SpinMeasure, rng: np.random.Generator) -> CoordStep:
    """One step of the coordinate scheme in its linear-tilt form.

    A uniform free coordinate k and U ~ Unif[-1, 1) give Z = e_k / (1 + b_k)
    (pin +1) when U < b_k and Z = -e_k / (1 - b_k) (pin -1) otherwise.  The
    multiplicative update nu_t (1 + <x - b, Z>) is checked against the pinning.
    """
    free = nu_t.free
    if free.size == 0:
        raise NoFreeCoordinates("all coordinates are pinned")
    k = int(free[rng.integers(free.size)])
    b = M.center(nu_t)
    U = float(rng.uniform(-1.0, 1.0))
    Z = np.zeros(nu_t.n)
    if U < b[k]:
        s, Z[k] = 1, 1.0 / (1.0 + b[k])
    else:
        s, Z[k] = -1, -1.0 / (1.0 - b[k])
    pinned = M.pin_coordinate(nu_t, k, s)
    upd = nu_t.weights * (1.0 + (nu_t.points - b) @ Z)
    full = np.zeros(1 << nu_t.n)
    full[nu_t.free_to_full] = upd
    err = float(np.max(np.abs(full - pinned.full)))
    if err > TILT_PIN_TOL:
        raise AssertionError(f"linear-tilt update differs from pinning by {err:.3g}")
    return CoordStep(pinned, Z, k, s, U)


def coord_sample_path(nu: M.SpinMeasure, rng: np.random.Generator, steps: int | None = None,
                      seed: int | None = None) -> LocPath:
    steps = nu.f if steps is None else steps
    if not 0 <= steps <= nu.f:
        raise SubsetTooLarge(f"steps={steps} must lie in [0, {nu.f}]")
    states, events = [nu], []
    cur = nu
    for t in range(steps):
        st = coord_sample_step(cur, rng)
        cur = st.state
        states.append(cur)
        events.append({"t": t + 1, "coord": st.coord, "value": st.value, "threshold": st.threshold})
    return LocPath("coordinate", list(range(steps + 1)), states, events, seed)


def coord_sample_final(nu: M.SpinMeasure, tau: int, n_paths: int, seed: int = 0,
                       threads: int | None = None) -> np.ndarray:
    """Weights of nu_tau (over nu's free configurations) for independent paths."""
    def block(size, rng):
        out = np.zeros((size, nu.weights.size))
        for p in range(size):
            cur = nu
            for _ in range(tau):
                cur = coord_sample_step(cur, rng).state
            out[p] = cur.full[nu.free_to_full]
        return out

    return np.vstack(run_blocks(block, n_paths, seed, threads=threads))


def _coord_cov_diag(nu_t: M.SpinMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Center of mass and diag of C_t = Cov(Z | nu_t) over all n coordinates."""
    b = M.center(nu_t)
    f = nu_t.f
    c = np.zeros(nu_t.n)
    fr = nu_t.free
    var = 1.0 - b[fr] ** 2
    ok = var > M.VAR_TOL
    c[fr[ok]] = 1.0 / (f * var[ok])
    return b, c


def coord_variance_step(nu_t: M.SpinMeasure, phi) -> tuple[float, float, float]:
    """(Var_t, E[Var_{t+1} | nu_t], <v, C_t v>) for one coordinate step."""
    vals = M._values(nu_t, phi)
    full = np.zeros(1 << nu_t.n)
    full[nu_t.free_to_full] = vals
    var_t = M.variance(nu_t, full)
    b, c = _coord_cov_diag(nu_t)
    expected = 0.0
    for k in nu_t.free:
        for s in (1, -1):
            p = (1 + s * b[k]) / 2
            if p > 0:
                expected += p * M.variance(M.pin_coordinate(nu_t, int(k), s), full) / nu_t.f
    v = (nu_t.weights * (vals - nu_t.weights @ vals)) @ (nu_t.points - b)
    return var_t, expected, float(v @ (c * v))


def coord_variance_step_check(nu_t: M.SpinMeasure, phi, tol: float = 1e-10) -> Check:
    var_t, expected, quad = coord_variance_step(nu_t, phi)
    return close("variance_decay_identity", f"n={nu_t.n},f={nu_t.f}", var_t - expected, quad, tol)


def coord_entropy_step(nu_t: M.SpinMeasure, fn) -> tuple[float, float, float]:
    """(Ent_t, E[Ent_{t+1} | nu_t], E[f] H(b(mu), b(nu_t)) / f) where mu = f nu_t / E f."""
    from .stability import h_divergence

    vals = M._values(nu_t, fn)
    full = np.zeros(1 << nu_t.n)
    full[nu_t.free_to_full] = vals
    ent = M.entropy(nu_t, full)
    b = M.center(nu_t)
    expected = 0.0
    for k in nu_t.free:
        for s in (1, -1):
            p = (1 + s * b[k]) / 2
            if p > 0:
                expected += p * M.entropy(M.pin_coordinate(nu_t, int(k), s), full) / nu_t.f
    mass = float(nu_t.weights @ vals)
    if mass <= 0:
        return ent, expected, 0.0
    bmu = (nu_t.weights * vals / mass) @ nu_t.points
    fr = nu_t.free
    return ent, expected, mass * h_divergence(bmu[fr], b[fr]) / nu_t.f


def coord_entropy_step_check(nu_t: M.SpinMeasure, fn, tol: float = 1e-10) -> Check:
    ent, expected, drop = coord_entropy_step(nu_t, fn)
    return close("entropy_decay_identity", f"n={nu_t.n},f={nu_t.f}", ent - expected, drop, tol)


# -------------------------------------------------- stochastic localization

def _as_driver(C, n: int) -> Callable[[float], np.ndarray]:
    if callable(C):
        return C
    C = np.asarray(C, dtype=float)
    if C.shape != (n, n) or not np.isfinite(C).all():
        raise InputError("driver must be an n x n finite matrix or a callable of t")
    return lambda t: C


def default_dt(C, n: int) -> float:
    norm = float(np.linalg.norm(_as_driver(C, n)(0.0), 2))
    return 1e-3 * min(1.0, 1.0 / max(norm, 1e-300) ** 2)


@dataclass
class SLBatch:
    times: np.ndarray
    weights: np.ndarray  # (paths, len(times), m) over nu's positive-mass free configurations
    index: np.ndarray  # full-cube indices of the m configurations
    max_clipped: float
    residual_rms: float

    def final(self) -> np.ndarray:
        return self.weights[:, -1, :]


def _record_grid(T: float, dt: float, record_every: int) -> tuple[int, list]:
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise InputError("T must be a positive multiple of dt")
    rec = sorted(set(list(range(0, steps + 1, record_every)) + [steps]))
    return steps, rec


def _sl_block(nu, drive, dt, steps, rec, size, rng, scheme="euler"):
    mask = nu.weights > 0
    pts = nu.points[mask]
    W = np.tile(nu.weights[mask], (size, 1))
    out = np.zeros((size, len(rec), W.shape[1]))
    out[:, 0] = W
    slot = 1
    sq = math.sqrt(dt)
    max_clip, res2 = 0.0, 0.0
    for k in range(1, steps + 1):
        Ct = drive((k - 1) * dt)
        b = W @ pts
        inc = sq * rng.standard_normal((size, nu.n)) @ Ct.T
        a = inc @ pts.T - np.sum(b * inc, axis=1, keepdims=True)
        if scheme == "milstein":
            G = Ct.T @ Ct
            q = (np.einsum("ij,jk,ik->i", pts, G, pts)[None, :] - 2.0 * (b @ G) @ pts.T
                 + np.einsum("pi,ij,pj->p", b, G, b)[:, None])
            a = a + 0.5 * (a * a - dt * q)
        W = W * (1.0 + a)
        neg = -np.minimum(W, 0.0).sum(axis=1)
        if neg.size:
            max_clip = max(max_clip, float(neg.max()))
        W = np.maximum(W, 0.0)
        tot = W.sum(axis=1, keepdims=True)
        res2 += float(np.sum((tot - 1.0) ** 2))
        W = W / tot
        if slot < len(rec) and rec[slot] == k:
            out[:, slot] = W
            slot += 1
    return out, max_clip, res2


def sl_simulate_batch(nu: M.SpinMeasure, C, dt: float | None = None, T: float = 1.0,
                      n_paths: int = 2000, seed: int = 0, record_every: int | None = None,
                      threads: int | None = None, scheme: str = "euler") -> SLBatch:
    """Euler-Maruyama on the density ratios: F <- F (1 + <x - b(nu_t), C_t sqrt(dt) g>),
    negative values clipped to zero, then renormalized.

    ``scheme="milstein"`` adds the mean-zero correction (a^2 - dt |C_t (x - b)|^2) / 2,
    which removes the leading non-affine error in log F while keeping the martingale
    property of the weights.
    """
    if scheme not in ("euler", "milstein"):
        raise InputError(f"unknown scheme {scheme!r}")
    drive = _as_driver(C, nu.n)
    dt = default_dt(C, nu.n) if dt is None else float(dt)
    if not dt > 0:
        raise InputError("dt must be positive")
    steps, rec = _record_grid(T, dt, record_every or max(1, int(round(T / dt))))
    res = run_blocks(lambda size, rng: _sl_block(nu, drive, dt, steps, rec, size, rng, scheme),
                     n_paths, seed, threads=threads)
    max_clip = max(r[1] for r in res)
    if max_clip > CLIP_LIMIT:
        raise StepTooLarge(f"clipping removed {max_clip:.3g} of the mass in one step; reduce dt")
    rms = math.sqrt(sum(r[2] for r in res) / (n_paths * steps))
    idx = nu.free_to_full[nu.weights > 0]
    return SLBatch(np.asarray(rec) * dt, np.concatenate([r[0] for r in res]), idx, max_clip, rms)


def _state_from(nu: M.SpinMeasure, idx: np.ndarray, w: np.ndarray) -> M.SpinMeasure:
    full = np.zeros(1 << nu.n)
    full[idx] = w
    return M.SpinMeasure.from_full(full, nu.pin)


def sl_simulate(nu: M.SpinMeasure, C, dt: float | None = None, T: float = 1.0, seed: int = 0,
                record_every: int | None = None, scheme: str = "euler") -> LocPath:
    """Single stochastic-localization path with states at the recorded times."""
    batch = sl_simulate_batch(nu, C, dt, T, 1, seed, record_every or 1, threads=1, scheme=scheme)
    states = [_state_from(nu, batch.index, w) for w in batch.weights[0]]
    events = [{"t": float(t), "weights": w} for t, w in zip(batch.times, batch.weights[0])]
    meta = {"dt": dt if dt is not None else default_dt(C, nu.n), "T": T,
            "max_clipped": batch.max_clipped, "residual_rms": batch.residual_rms, "scheme": scheme}
    return LocPath("stochastic", batch.times.tolist(), states, events, seed, meta)


def sl_form_residuals(nu: M.SpinMeasure, J: np.ndarray, times, weights, index) -> np.ndarray:
    """Max residual of the affine least-squares fit of log(nu_t/nu) + t<x, Jx>."""
    J = np.asarray(J, dtype=float)
    pts = M.cube(nu.n)[index]
    quad = np.einsum("ij,jk,ik->i", pts, J, pts)
    X = np.hstack([np.ones((pts.shape[0], 1)), pts])
    base = np.log(nu.full[index])
    out = []
    for t, w in zip(times, weights):
        if (w <= 0).any():
            out.append(np.inf)
            continue
        y = np.log(w) - base + t * quad
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        out.append(float(np.max(np.abs(X @ coef - y))))
    return np.asarray(out)


def sl_form_check(path: LocPath, nu: M.SpinMeasure, J: np.ndarray, tol: float = 1e-3) -> Check:
    """log(nu_t/nu) + t<x, Jx> should be affine in x along a path driven by (2J)^{1/2}."""
    idx = nu.free_to_full[nu.weights > 0]
    ws = [s.full[idx] for s in path.states]
    r = sl_form_residuals(nu, J, path.times, ws, idx)
    return leq("sl_affine_form", f"n={nu.n},dt={path.meta.get('dt')}", float(np.max(r)), 0.0, tol)


def sqrt_psd(A: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh((A + A.T) / 2)
    if lam.min() < -1e-12:
        raise InputError("driver square root needs a positive semidefinite matrix")
    return (U * np.sqrt(np.maximum(lam, 0.0))) @ U.T


# ---------------------------------------------- negative-fields localization

@dataclass
class NFBatch:
    s: float
    pin_times: np.ndarray  # (paths, n), inf where never pinned
    final: np.ndarray  # (paths, m) weights of nu_s over nu's positive-mass free configurations
    index: np.ndarray


def _nf_weights(logw, pts, pinned, t):
    """Weights of tilt(pin(nu, A), -t 1) for each path."""
    allowed = ~np.any(pinned[:, None, :] & (pts[None, :, :] < 0), axis=2)
    lw = logw[None, :] - t[:, None] * pts.sum(axis=1)[None, :]
    lw = np.where(allowed, lw, -np.inf)
    lw -= lw.max(axis=1, keepdims=True)
    w = np.exp(lw)
    return w / w.sum(axis=1, keepdims=True)


def _nf_rates(logw, pts, pinned, t):
    w = _nf_weights(logw, pts, pinned, t)
    plus = w @ (pts > 0).astype(float)
    return np.where(pinned, 0.0, 2.0 * plus)


def _nf_block(nu, s, dt, size, rng):
    mask = nu.weights > 0
    pts = nu.points[mask]
    logw = np.log(nu.weights[mask])
    n = nu.n
    pinned = np.zeros((size, n), dtype=bool)
    pinned[:, nu.pin != 0] = True
    E = rng.exponential(size=(size, n))
    H = np.zeros((size, n))
    t = np.zeros(size)
    pin_times = np.full((size, n), np.inf)
    active = np.ones(size, dtype=bool)
    while active.any():
        a = np.flatnonzero(active)
        t0 = t[a]
        h = np.minimum(dt, s - t0)
        r0 = _nf_rates(logw, pts, pinned[a], t0)
        r1 = _nf_rates(logw, pts, pinned[a], t0 + h)
        H0 = H[a]
        H1 = H0 + h[:, None] * (r0 + r1) / 2
        cross = (~pinned[a]) & (H1 >= E[a])
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(cross, (E[a] - H0) / (H1 - H0), np.inf)
        first = np.argmin(frac, axis=1)
        fmin = frac[np.arange(a.size), first]
        jump = np.isfinite(fmin)
        frac_used = np.where(jump, np.clip(fmin, 0.0, 1.0), 1.0)
        H[a] = H0 + (H1 - H0) * frac_used[:, None]
        t[a] = t0 + h * frac_used
        ja = a[jump]
        pinned[ja, first[jump]] = True
        pin_times[ja, first[jump]] = t[ja]
        done = (~jump) & (t0 + h >= s - 1e-15)
        t[a[done]] = s
        active[a[done]] = False
    final = _nf_weights(logw, pts, pinned, np.full(size, s))
    return pin_times, final


def nf_simulate_batch(nu: M.SpinMeasure, s: float = 1.0, n_paths: int = 2000, seed: int = 0,
                      dt: float = 1e-3, threads: int | None = None) -> NFBatch:
    """Negative-fields localization with drift -t 1: coordinate i is pinned to +1
    at rate 2 P_{nu_t}(x_i = +1), clocks integrated by the trapezoid rule on a
    fixed step with linear interpolation of crossing times."""
    if not (s > 0 and dt > 0):
        raise InputError("horizon and step must be positive")
    res = run_blocks(lambda size, rng: _nf_block(nu, s, dt, size, rng), n_paths, seed, threads=threads)
    return NFBatch(s, np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res]),
                   nu.free_to_full[nu.weights > 0])


def nf_state(nu: M.SpinMeasure, pinned_coords, t: float) -> M.SpinMeasure:
    u = np.zeros(nu.n, dtype=np.int8)
    u[list(pinned_coords)] = 1
    u = np.where(nu.pin != 0, nu.pin, u)
    return M.tilt(M.pin(nu, u), -t * np.ones(nu.n))


def nf_simulate(nu: M.SpinMeasure, s: float = 1.0, seed: int = 0, dt: float = 1e-3) -> LocPath:
    """Single negative-fields path with states at every pinning event and at s."""
    batch = nf_simulate_batch(nu, s, 1, seed, dt, threads=1)
    pt = batch.pin_times[0]
    order = [i for i in np.argsort(pt, kind="stable") if np.isfinite(pt[i]) and nu.pin[i] == 0]
    times, states, events = [0.0], [nu], []
    A = []
    for i in order:
        A.append(int(i))
        states.append(nf_state(nu, A, float(pt[i])))
        times.append(float(pt[i]))
        events.append({"t": float(pt[i]), "coord": int(i), "value": 1})
    end = nf_state(nu, A, s)
    err = float(np.max(np.abs(end.full[batch.index] - batch.final[0])))
    if err > TILT_PIN_TOL:
        raise AssertionError(f"negative-fields state departs from tilt-of-pinning form by {err:.3g}")
    times.append(s)
    states.append(end)
    return LocPath("negative_fields", times, states, events, seed, {"dt": dt, "s": s})


def nf_survival_single(t: np.ndarray) -> np.ndarray:
    """P(T > t) for one unbiased spin: exp(-(t - log cosh t))."""
    t = np.asarray(t, dtype=float)
    return np.exp(-(t - (np.logaddexp(t, -t) - math.log(2.0))))


# --------------------------------------------------------- martingale tests

def martingale_check(nu: M.SpinMeasure, final: np.ndarray, index: np.ndarray, name: str,
                     n_sigma: float = 4.0) -> Check:
    """Mean of the terminal weights against nu, in units of standard error."""
    mean = final.mean(axis=0)
    se = final.std(axis=0, ddof=1) / math.sqrt(final.shape[0])
    target = nu.full[index]
    z = np.abs(mean - target) / np.maximum(se, 1e-15)
    z = np.where(np.abs(mean - target) <= 1e-12, 0.0, z)
    return leq("martingale_mean", name, float(z.max()), n_sigma, max_abs_dev=float(np.max(np.abs(mean - target))))


# ----------------------------------------------------------- conservation

def _ens_functional(ens: LocEnsemble, full_vals: np.ndarray, kind: str) -> list[float]:
    if kind == "var":
        return [M.variance(m, full_vals) for m in ens.members]
    return [M.entropy(m, full_vals) for m in ens.members]


def _kappa_entropy(nu_t: M.SpinMeasure, full_vals: np.ndarray, seed: int) -> float:
    """Entropic stability constant (H-divergence) of nu_t from a tilt scan,
    including the moment-matching tilt of f nu_t / E f as a candidate."""
    from .stability import entropic_stability_scan

    extra = []
    vals = full_vals[nu_t.free_to_full]
    mass = float(nu_t.weights @ vals)
    if mass > 0:
        bmu = (nu_t.weights * vals / mass) @ nu_t.points
        try:
            extra.append(M.moment_matching_tilt(nu_t, np.clip(bmu, -1 + 1e-12, 1 - 1e-12)))
        except LocmixError:
            pass
    return entropic_stability_scan(nu_t, psi="H", n_dirs=64, seed=seed, extra_tilts=extra).constant


def conservation_trace(nu: M.SpinMeasure, scheme: str = "coordinate", horizon: int | None = None,
                       fn=None, kind: str = "var", seed: int = 0, **kwargs) -> ConservationTrace:
    """Per-step conservation ratios and theory floors.

    Coordinate scheme: exact, with conditional ratios for every member of the
    ensemble at each step; floors 1 - rho(Psi(nu_t))/(f-t) for variance and
    1 - kappa_H(nu_t)/(f-t) for entropy.  The aggregate ratio at step t is
    E[Q_{t+1}] / E[Q_t] and its floor is the worst member floor.
    Stochastic schemes: see ``mc_conservation_trace``.
    """
    if scheme != "coordinate":
        return mc_conservation_trace(nu, scheme, fn=fn, kind=kind, seed=seed, **kwargs)
    if kind not in ("var", "ent"):
        raise InputError("kind must be 'var' or 'ent'")
    horizon = nu.f if horizon is None else horizon
    vals = np.asarray(M._values(nu, fn), dtype=float)
    full = np.zeros(1 << nu.n)
    full[nu.free_to_full] = vals
    ratios, floors, margins = [], [], []
    ens = coord_enumerate(nu, 0)
    q_prev = _ens_functional(ens, full, kind)
    tot_prev = float(np.dot(ens.weights, q_prev))
    for t in range(horizon):
        worst_floor, margin = 1.0, np.inf
        for mem, q in zip(ens.members, q_prev):
            if kind == "var":
                _, nxt, _ = coord_variance_step(mem, full)
                kappa = M.spectral_radius(mem)
            else:
                _, nxt, _ = coord_entropy_step(mem, full)
                kappa = _kappa_entropy(mem, full, seed) if q > 0 else 0.0
            fl = 1.0 - kappa / (nu.f - t)
            worst_floor = min(worst_floor, fl)
            if q > 1e-14:
                margin = min(margin, nxt / q - fl)
        ens = coord_enumerate(nu, t + 1)
        q_next = _ens_functional(ens, full, kind)
        tot_next = float(np.dot(ens.weights, q_next))
        ratios.append(tot_next / tot_prev if tot_prev > 1e-14 else 1.0)
        floors.append(worst_floor)
        margins.append(margin if np.isfinite(margin) else 0.0)
        q_prev, tot_prev = q_next, tot_next
    ratios = np.asarray(ratios)
    floors = np.asarray(floors)
    return ConservationTrace(kind, "coordinate", np.arange(horizon, dtype=float), ratios, floors,
                             cumulative=np.cumprod(ratios), cumulative_floor=np.cumprod(floors),
                             margins=np.asarray(margins))


def sl_entropy_floor(J_norm: float, t):
    """exp(-2||J|| int_0^t alpha) with alpha(u) = 1/(1 - 2(1-u)||J||)."""
    t = np.asarray(t, dtype=float)
    if J_norm == 0:
        return np.ones_like(t)
    return (1 - 2 * J_norm) / (1 - 2 * J_norm * (1 - t))


def mc_conservation_trace(nu: M.SpinMeasure, scheme: str, fn=None, kind: str = "ent", seed: int = 0,
                          floor: Callable | None = None, n_paths: int = 2000, C=None,
                          dt: float | None = None, T: float = 1.0, record_every: int | None = None,
                          threads: int | None = None, sl_scheme: str = "euler") -> ConservationTrace:
    """Monte Carlo E[Q_{nu_t}[f]] / Q_nu[f] at recorded times for the stochastic
    scheme, with standard errors; ``floor(t)`` supplies the theory floor."""
    if scheme != "stochastic":
        raise InputError("Monte Carlo traces are provided for the stochastic scheme")
    batch = sl_simulate_batch(nu, C, dt, T, n_paths, seed, record_every, threads, scheme=sl_scheme)
    vals = np.asarray(M._values(nu, fn))[nu.weights > 0]
    W = batch.weights
    if kind == "ent":
        q = W @ M.xlogx(vals) - M.xlogx(W @ vals)
    else:
        q = W @ (vals ** 2) - (W @ vals) ** 2
    base = q[0, 0]
    if base <= 0:
        raise InputError("test function has zero variance/entropy under nu")
    r = q / base
    ratios = r.mean(axis=0)
    se = r.std(axis=0, ddof=1) / math.sqrt(r.shape[0])
    floors = floor(batch.times) if floor is not None else np.zeros_like(ratios)
    return ConservationTrace(kind, "stochastic", batch.times, ratios, np.asarray(floors), stderr=se)


# --------------------------------------------------------- kernel estimates

def estimate_kernel_from_states(nu: M.SpinMeasure, weights: np.ndarray, index: np.ndarray | None = None,
                                name: str = "estimated") -> Kernel:
    """P[x, y] = E[nu_tau(x) nu_tau(y)] / nu(x) from sampled states, with
    entrywise standard errors std / sqrt(N) of the sample mean."""
    index = nu.free_to_full[nu.weights > 0] if index is None else np.asarray(index)
    order = np.argsort(index)
    index, weights = index[order], weights[:, order]
    pi = nu.full[index]
    if (pi <= 0).any():
        raise ZeroDenominator("states with zero stationary mass cannot index kernel rows")
    N = weights.shape[0]
    if N < 2:
        raise InputError("need at least two sampled states")
    prod = weights[:, :, None] * weights[:, None, :] / pi[None, :, None]
    P = prod.mean(axis=0)
    SE = prod.std(axis=0, ddof=1) / math.sqrt(N)
    return Kernel(index, P, nu, name, stderr=SE)


def estimate_kernel_from_paths(paths: list, tau: float, nu: M.SpinMeasure | None = None) -> Kernel:
    nu = paths[0].states[0] if nu is None else nu
    index = nu.free_to_full[nu.weights > 0]
    W = []
    for p in paths:
        if p.times[-1] < tau - 1e-12:
            raise InputError("every path must reach time tau")
        W.append(p.state_at(tau).full[index])
    return estimate_kernel_from_states(nu, np.asarray(W), index)


def kernel_comparison_check(est: Kernel, ref: Kernel, n_sigma: float = 3.0, extra_se=None) -> Check:
    """Max entrywise deviation of an estimated kernel in units of its standard error."""
    if not np.array_equal(est.support, ref.support):
        raise InputError("kernels live on different supports")
    se = est.stderr if extra_se is None else np.sqrt(est.stderr ** 2 + extra_se ** 2)
    dev = np.abs(est.P - ref.P)
    z = np.where(dev <= 1e-12, 0.0, dev / np.maximum(se, 1e-15))
    return leq("kernel_agreement", f"{est.name} vs {ref.name}", float(z.max()), n_sigma,
               max_abs_dev=float(dev.max()))

"""Annealing (scheme concatenation) and application-level bound assemblers.

Every pipeline returns a ``PipelineReport``: the ingredient checks that the
assembled bound relies on, the bound itself, the exact or adversarial
brackets it is compared with, and any fitted empirical constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from . import kernels as Kn
from . import localization as L
from . import measures as M
from . import models as Mo
from . import spectra as S
from . import stability as St
from .errors import (
    InputError,
    NotDoobFinalScheme,
    NotFerromagnetic,
    NotInUniquenessRegime,
    NotUnique,
    PreconditionViolated,
    ZeroMassSubcube,
)
from .parallel import map_ordered
from .reports import Check, close, geq, jsonable, leq

SCHEMES = ("coordinate", "stochastic", "negative_fields")
BOUND_TOL = 1e-9


@dataclass
class PipelineReport:
    pipeline: str
    instance: dict
    ingredients: list
    assembled_bound: float
    brackets: dict = field(default_factory=dict)
    fitted_constants: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.ingredients)

    def failures(self) -> list:
        return [c for c in self.ingredients if not c.passed]

    def to_dict(self) -> dict:
        return jsonable({"pipeline": self.pipeline, "instance": self.instance,
                         "ingredients": [c.to_dict() for c in self.ingredients],
                         "assembled_bound": self.assembled_bound, "brackets": self.brackets,
                         "fitted_constants": self.fitted_constants, "meta": self.meta,
                         "pass": self.passed})


def _run_tasks(tasks: Sequence[Callable[[], list]], threads: int | None) -> list:
    """Run independent ingredient tasks and concatenate their checks in task order."""
    out = []
    for res in map_ordered(lambda fn: fn(), list(tasks), threads):
        out.extend(res)
    return out


def psd_coupling(J: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest diagonal shift J + cI (c >= 0) that is positive semidefinite.

    On the cube <x, x> = n, so the shift changes the Ising weights by a
    constant factor only.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1] or not np.allclose(J, J.T, atol=1e-12):
        raise InputError("coupling must be a symmetric square matrix")
    lo = float(np.linalg.eigvalsh(J)[0])
    c = max(0.0, -lo)
    return J + c * np.eye(J.shape[0]), c


def op_norm(J: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(J)))) if np.size(J) else 0.0


def glauber_brackets(nu: M.SpinMeasure, restarts: int = 50, seed: int = 0,
                     threads: int | None = None) -> dict:
    """Exact spectral gap and adversarial MLSI upper estimate of Glauber dynamics."""
    K = Kn.glauber(nu)
    gap = S.spectral_gap(K).gap
    if K.size < 2:
        return {"gap": gap, "mlsi_upper": 1.0, "mlsi_ratio": 0.0}
    est = S.mlsi_adversarial(K, restarts=restarts, seed=seed, threads=threads)
    return {"gap": gap, "mlsi_upper": est.upper, "mlsi_ratio": est.ratio}


def _bracket_checks(name: str, bound: float, br: dict) -> list[Check]:
    return [leq("bound_below_mlsi_upper", name, bound, br["mlsi_upper"], BOUND_TOL),
            leq("bound_below_gap", name, bound, br["gap"], BOUND_TOL)]


# ---------------------------------------------------------------- annealing

@dataclass
class AnnealPlan:
    """concat(initial, final, a): run ``initial`` to the deterministic time
    ``a``, then bound the final dynamics on nu_a by ``delta``; ``epsilon`` is
    the conservation factor of the initial leg."""
    initial: str
    a: float
    final: str
    tau: int
    epsilon: float
    delta: float
    mode: str = "variance"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.initial not in SCHEMES:
            raise InputError(f"unknown initial scheme {self.initial!r}")
        if self.mode not in ("variance", "entropy"):
            raise InputError("mode must be 'variance' or 'entropy'")
        for name in ("epsilon", "delta"):
            val = getattr(self, name)
            if not -1e-12 <= val <= 1 + 1e-12:
                raise InputError(f"{name} = {val} must lie in [0, 1]")

    @property
    def bound(self) -> float:
        return self.epsilon * self.delta

    def to_dict(self) -> dict:
        return jsonable({"initial": self.initial, "a": self.a, "final": self.final, "tau": self.tau,
                         "epsilon": self.epsilon, "delta": self.delta, "mode": self.mode,
                         "bound": self.bound, "meta": self.meta})


def coordinate_anneal_plan(nu: M.SpinMeasure, a: int, tau: int, mode: str = "variance",
                           kappa: list | None = None, **scan) -> AnnealPlan:
    """Coordinate scheme to time a, then the coordinate scheme with tau further
    revealed coordinates (the (f-a-tau)-Glauber dynamics on nu_a).

    variance: epsilon = min_phi E[Var_{nu_a} phi] / Var_nu phi exactly (a
    generalized eigenvalue) and delta = min over realized nu_a of the exact gap.
    entropy: epsilon = prod_{i<a} (1 - kappa_i/(f-i)) and delta = min over
    realized nu_a of the same product for the remaining levels, with
    kappa_i the scanned H-stability constant of level-i pinnings.
    """
    f = nu.f
    if not (0 <= a and 0 <= tau and a + tau <= f - 1):
        raise InputError(f"need a + tau <= f - 1 (a={a}, tau={tau}, f={f})")
    ens = L.coord_enumerate(nu, a)
    pi = nu.weights[nu.weights > 0][np.argsort(nu.free_to_full[nu.weights > 0])]
    if mode == "variance":
        eps = 1.0 if a == 0 else S.generalized_min_eigenvalue(S.localization_variance_form(nu, a), pi)
        deltas = [S.spectral_gap(Kn.kernel_from_coordinate_localization(m, tau)).gap for m in ens.members]
        meta = {}
    else:
        kappa = St.h_stability_levels(nu, **scan) if kappa is None else list(kappa)
        eps = 1.0
        for i in range(a):
            eps *= max(0.0, 1.0 - kappa[i] / (f - i))
        deltas = [St.clv_floor(m, m.f - tau, kappa[a:]) for m in ens.members]
        meta = {"kappa_levels": kappa}
    delta = float(min(deltas))
    return AnnealPlan("coordinate", a, "coordinate", tau, float(min(max(eps, 0.0), 1.0)), delta,
                      "variance" if mode == "variance" else "entropy",
                      dict(meta, members=len(ens.members)))


def sl_glauber_plan(J: np.ndarray, n: int | None = None) -> AnnealPlan:
    """Stochastic localization with C = (2J)^{1/2} to time 1, then Glauber on
    the product endpoint: epsilon = exp(-2||J|| int alpha) = 1 - 2||J||,
    delta = 1/n."""
    J = np.asarray(J, dtype=float)
    n = J.shape[0] if n is None else n
    a = op_norm(J)
    if a >= 0.5:
        raise PreconditionViolated(f"||J||_OP = {a:.6g} must be < 1/2")
    eps = float(L.sl_entropy_floor(a, 1.0))
    return AnnealPlan("stochastic", 1.0, "coordinate", n - 1, eps, 1.0 / n, "entropy", {"J_norm": a})


def anneal_bound(nu: M.SpinMeasure, plan: AnnealPlan, restarts: int = 50, seed: int = 0,
                 slack: float = BOUND_TOL) -> PipelineReport:
    """Compare epsilon * delta with the gap (variance) or the adversarial
    MLSI upper estimate (entropy) of the final dynamics on nu."""
    if plan.final != "coordinate":
        raise NotDoobFinalScheme(f"final scheme {plan.final!r} is not a Doob scheme")
    K = Kn.kernel_from_coordinate_localization(nu, plan.tau)
    inst = f"{plan.initial}+coordinate,a={plan.a},tau={plan.tau},mode={plan.mode}"
    br = {"gap": S.spectral_gap(K).gap}
    checks = []
    if plan.mode == "variance":
        checks.append(leq("anneal_variance_bound", inst, plan.bound, br["gap"], slack))
    else:
        est = S.mlsi_adversarial(K, restarts=restarts, seed=seed)
        br["mlsi_upper"] = est.upper
        checks.append(leq("anneal_entropy_bound", inst, plan.bound, est.upper, slack))
    return PipelineReport("anneal", {"n": nu.n, "plan": plan.to_dict()}, checks, plan.bound, br)


def _doob_quantities(mu: M.SpinMeasure, tau: int, phi_full: np.ndarray, f_full: np.ndarray):
    """<phi, P phi>_mu and int (Pf) log(Pf) dmu for the coordinate kernel of mu."""
    K = Kn.kernel_from_coordinate_localization(mu, min(tau, mu.f))
    pi = K.pi
    ph = phi_full[K.support]
    Pf = K.P @ f_full[K.support]
    return float(pi @ (ph * (K.P @ ph))), float(pi @ M.xlogx(Pf))


def submartingale_check(nu: M.SpinMeasure, phis, fs, tau: int = 1, tol: float = 1e-10) -> list[Check]:
    """Exact one-step test that t -> <phi, P^(t) phi>_{nu_t} and
    t -> int P^(t) f log P^(t) f dnu_t are submartingales along the coordinate
    scheme, where P^(t) is the kernel of the coordinate scheme with tau
    revealed coordinates assigned to nu_t."""
    if not 1 <= tau:
        raise InputError("tau must be positive")
    fulls = []
    for phi, fn in zip(phis, fs):
        pf = np.zeros(1 << nu.n)
        pf[nu.free_to_full] = M._values(nu, phi)
        ff = np.zeros(1 << nu.n)
        vals = np.asarray(M._values(nu, fn), dtype=float)
        if (vals < 0).any():
            raise InputError("entropy test functions must be nonnegative")
        ff[nu.free_to_full] = vals
        fulls.append((pf, ff))
    worst = [np.inf] * len(fulls), [np.inf] * len(fulls)
    for t in range(nu.f):
        for mu in L.coord_enumerate(nu, t).members:
            if mu.f == 0:
                continue
            kids = L.coord_enumerate(mu, 1)
            for k, (pf, ff) in enumerate(fulls):
                q0, r0 = _doob_quantities(mu, tau, pf, ff)
                q1 = r1 = 0.0
                for w, child in zip(kids.weights, kids.members):
                    qc, rc = _doob_quantities(child, tau, pf, ff)
                    q1 += w * qc
                    r1 += w * rc
                worst[0][k] = min(worst[0][k], q1 - q0)
                worst[1][k] = min(worst[1][k], r1 - r0)
    out = []
    for k in range(len(fulls)):
        out.append(geq("submartingale_variance", f"n={nu.n},tau={tau},phi#{k}", worst[0][k], 0.0, tol))
        out.append(geq("submartingale_entropy", f"n={nu.n},tau={tau},f#{k}", worst[1][k], 0.0, tol))
    return out


# -------------------------------------------------------------- Ising bounds

def sk_alpha(J_norm: float, lam) -> np.ndarray:
    """alpha(lambda) = 1 / (1 - 2 (1 - lambda) ||J||)."""
    return 1.0 / (1.0 - 2.0 * (1.0 - np.asarray(lam, dtype=float)) * J_norm)


def _cov_norm(J: np.ndarray, v: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(M.moments(Mo.ising(J, v)).cov)[-1])


def theorem_sk_pipeline(J, v=None, n_fields: int = 50, lambdas=None, field_scale: float = 2.0,
                        restarts: int = 50, seed: int = 0, endpoint_fields: int = 3,
                        mc_paths: int = 0, threads: int | None = None) -> PipelineReport:
    """Glauber MLSI lower bound (1/n) exp(-2||J|| int alpha) = (1/n)(1 - 2||J||)
    for nu_{J,v} with ||J|| < 1/2, with the covariance hypothesis scanned over
    mu_{lambda,w} = nu_{(1-lambda)J, v+w}, the product endpoint checked, and the
    bound compared with the exact gap and adversarial MLSI upper estimate."""
    J0 = np.asarray(J, dtype=float)
    n = J0.shape[0]
    Jp, shift = psd_coupling(J0)
    a = op_norm(Jp)
    if a >= 0.5:
        raise PreconditionViolated(f"||J||_OP = {a:.6g} (after diagonal shift {shift:.3g}) must be < 1/2")
    v0 = np.zeros(n) if v is None else np.asarray(v, dtype=float)
    nu = Mo.ising(Jp, v0)
    lambdas = np.linspace(0.0, 1.0, 11) if lambdas is None else np.asarray(lambdas, dtype=float)
    rng = np.random.default_rng(seed)
    fields = np.vstack([np.zeros((1, n)), field_scale * rng.standard_normal((n_fields - 1, n))])
    integral = -math.log(1 - 2 * a) / (2 * a) if a > 0 else 1.0
    bound = (1.0 - 2.0 * a) / n
    inst = f"n={n},J_norm={a:.4g}"

    def formula():
        num, _ = quad(lambda s: float(sk_alpha(a, s)), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
        return [close("alpha_integral", inst, num, integral, 1e-10),
                close("sk_bound_closed_form", inst, math.exp(-2 * a * num) / n, bound, 1e-10)]

    def cov_scan():
        out = []
        for lam in lambdas:
            worst = max(_cov_norm((1.0 - lam) * Jp, v0 + w) for w in fields)
            out.append(leq("sk_cov_hypothesis", f"{inst},lambda={lam:.3g}", worst,
                           float(sk_alpha(a, lam)), 1e-9, fields=len(fields)))
        return out

    def endpoint():
        out = []
        for k, w in enumerate(fields[:endpoint_fields]):
            prod = Mo.ising(np.zeros((n, n)), v0 + w)
            K = Kn.glauber(prod)
            up = S.mlsi_adversarial(K, restarts=min(restarts, 10), seed=seed + k).upper if K.size > 1 else 1.0
            out.append(geq("product_endpoint_mlsi_consistent", f"{inst},field#{k}", up, 1.0 / n, 1e-9))
        return out

    checks = _run_tasks([formula, cov_scan, endpoint], threads)
    br = glauber_brackets(nu, restarts, seed, threads)
    checks += _bracket_checks(inst, bound, br)
    meta = {"diagonal_shift": shift}
    if mc_paths > 0:
        tr = L.mc_conservation_trace(nu, "stochastic", fn=np.exp(rng.standard_normal(nu.weights.size)),
                                     kind="ent", seed=seed, floor=lambda t: L.sl_entropy_floor(a, t),
                                     n_paths=mc_paths, C=L.sqrt_psd(2 * Jp), threads=threads)
        checks += tr.checks()
        meta["sl_trace"] = tr.to_dict()
    return PipelineReport("theorem_sk", {"n": n, "J": Jp, "field": v0, "J_norm": a}, checks, bound, br,
                          {"epsilon_endpoint": 1.0 / n, "alpha_integral": integral}, meta)


def effective_degree(G: Mo.Graph) -> int:
    """Max degree, raised to 3 where the uniqueness formulas need Delta >= 3."""
    return max(3, G.max_degree)


def graphical_ising_bound(G: Mo.Graph, beta: float, v=None, n_betas: int = 5, n_fields: int = 20,
                          field_scale: float = 2.0, restarts: int = 50, seed: int = 0,
                          threads: int | None = None) -> PipelineReport:
    """Glauber MLSI lower bound for a graphical Ising model in the uniqueness regime.

    Scans rho(Psi(T_w nu_{G,beta'})) <= 2/delta over beta' between 0 and beta
    and random fields w and assembles (1/n) exp(-4 ||J|| / delta) with J the
    PSD coupling (alpha = 2/delta in the covariance hypothesis).  This equals
    1/n at beta = 0 and dominates the closed form (1/n) e^{-8/delta}, which is
    reported alongside and checked to be the smaller of the two.
    """
    n = G.n
    D = effective_degree(G)
    delta = Mo.uniqueness_margin(D, beta)
    if delta is None:
        raise NotInUniquenessRegime(f"beta={beta} is outside the uniqueness regime for Delta={D}")
    v0 = np.zeros(n) if v is None else np.asarray(v, dtype=float)
    Jp, shift = psd_coupling(Mo.graph_ising_coupling(G, beta))
    a = op_norm(Jp)
    nu = Mo.build_graph_ising(G, beta, v0)
    rng = np.random.default_rng(seed)
    fields = np.vstack([np.zeros((1, n)), field_scale * rng.standard_normal((n_fields - 1, n))])
    betas = np.linspace(0.0, beta, n_betas) if beta != 0 else np.zeros(1)
    inst = f"graph(n={n},edges={len(G.edges)}),beta={beta:g}"
    corollary = math.exp(-8.0 / delta) / n
    theorem = math.exp(-4.0 * a / delta) / n

    def si_scan():
        out = []
        for b in betas:
            worst_rho, worst_cov = 0.0, 0.0
            for w in fields:
                mu = Mo.build_graph_ising(G, b, v0 + w)
                worst_rho = max(worst_rho, M.spectral_radius(mu))
                worst_cov = max(worst_cov, float(np.linalg.eigvalsh(M.moments(mu).cov)[-1]))
            out.append(leq("si_ising_uniqueness", f"{inst},beta'={b:.4g}", worst_rho, 2.0 / delta, 1e-9))
            out.append(leq("cov_below_cor", f"{inst},beta'={b:.4g}", worst_cov, worst_rho, 1e-9))
        return out

    checks = _run_tasks([si_scan], threads)
    checks.append(leq("corollary_below_theorem_bound", inst, corollary, theorem, 1e-15, J_norm=a))
    br = glauber_brackets(nu, restarts, seed, threads)
    checks += _bracket_checks(inst, theorem, br)
    return PipelineReport("graphical_ising", {"graph": G.to_dict(), "beta": beta, "field": v0}, checks,
                          theorem, br, {"delta": delta, "J_norm": a, "corollary_bound": corollary},
                          {"diagonal_shift": shift, "effective_degree": D})


def ferro_susceptibility_bound(G: Mo.Graph | None = None, beta: float = 0.0, J=None, v=None,
                               grid: int = 21, n_fields: int = 20, field_scale: float = 2.0,
                               restarts: int = 50, seed: int = 0,
                               threads: int | None = None) -> PipelineReport:
    """(1/n) exp(-2||J|| int_0^1 chi) with chi(l) = ||Cov(nu_{lJ,0})|| for a
    ferromagnetic coupling (a graph with beta >= 0, or an explicit J).

    chi is trapezoid-integrated on a uniform grid; the field-monotonicity
    ingredient ||Cov(nu_{lJ,w})|| <= chi(l) is scanned over random fields.
    """
    if J is None:
        if G is None:
            raise InputError("give a graph or a coupling matrix")
        if beta < 0:
            raise NotFerromagnetic("beta must be nonnegative")
        J = Mo.graph_ising_coupling(G, beta)
    J = np.asarray(J, dtype=float)
    off = J - np.diag(np.diag(J))
    if (off < -1e-12).any():
        raise NotFerromagnetic("all off-diagonal couplings must be nonnegative")
    n = J.shape[0]
    Jp, shift = psd_coupling(J)
    a = op_norm(Jp)
    v0 = np.zeros(n) if v is None else np.asarray(v, dtype=float)
    nu = Mo.ising(Jp, v0)
    ls = np.linspace(0.0, 1.0, grid)
    chi = np.array([_cov_norm(l * Jp, np.zeros(n)) for l in ls])
    integral = float(np.trapezoid(chi, ls)) if hasattr(np, "trapezoid") else float(np.trapz(chi, ls))
    bound = math.exp(-2.0 * a * integral) / n
    rng = np.random.default_rng(seed)
    fields = field_scale * rng.standard_normal((n_fields, n))
    inst = f"ferro(n={n},J_norm={a:.4g})"

    def monotone():
        out = []
        for l, c in zip(ls[:: max(1, grid // 5)], chi[:: max(1, grid // 5)]):
            worst = max(_cov_norm(l * Jp, w) for w in fields)
            out.append(leq("field_monotone_susceptibility", f"{inst},lambda={l:.3g}", worst, c, 1e-9))
            out += Mo.gks_monotonicity_check(l * Jp, fields[:5])
        return out

    checks = _run_tasks([monotone], threads)
    br = glauber_brackets(nu, restarts, seed, threads)
    checks += _bracket_checks(inst, bound, br)
    return PipelineReport("ferro_susceptibility", {"n": n, "J": Jp, "field": v0}, checks, bound, br,
                          {"chi_integral": integral, "J_norm": a},
                          {"diagonal_shift": shift, "chi": chi, "grid": ls})


# ----------------------------------------------------------------- hardcore

def hardcore_delta(G: Mo.Graph, lam: float) -> float:
    """delta = 1 - lam / lambda_Delta (Delta raised to 3 for low-degree graphs)."""
    return 1.0 - lam / Mo.critical_fugacity(effective_degree(G))


def _nonpositive_tilts(rng: np.random.Generator, n: int, count: int, scale: float) -> np.ndarray:
    return -scale * rng.random((count, n))


def hardcore_ingredients(G: Mo.Graph, lam: float, s: float = 2.0, t_grid: int = 9,
                         n_tilts: int = 4, restarts: int = 50, seed: int = 0,
                         threads: int | None = None) -> tuple[list, dict]:
    """All numeric ingredients of the hardcore mixing argument on one instance."""
    delta = hardcore_delta(G, lam)
    if delta <= 0:
        raise NotUnique(f"lambda={lam} is not below the critical fugacity")
    D = effective_degree(G)
    nu = Mo.hardcore(G, lam)
    ts = np.linspace(0.0, s, t_grid)
    inst = f"hardcore(n={G.n},edges={len(G.edges)},lam={lam:g})"
    rng = np.random.default_rng(seed)
    tilts = _nonpositive_tilts(rng, G.n, n_tilts, s)
    info = {"delta": delta, "effective_degree": D}

    def si():
        worst, where = 0.0, None
        for t in ts:
            c = St.si_all_pinnings(Mo.hardcore(G, math.exp(-2 * t) * lam)).constant
            if c > worst:
                worst, where = c, float(t)
        for k, vt in enumerate(tilts):
            c = St.si_all_pinnings(M.tilt(nu, vt)).constant
            if c > worst:
                worst, where = c, f"tilt#{k}"
        info["si_max"] = worst
        return [leq("si_all_pinnings_negative_tilts", inst, worst, 144.0 / delta, 1e-9, at=where)]

    def marginals():
        out = []
        spec = Mo.HardcoreSpec(G, lam)
        for vert in range(G.n):
            others = [i for i in range(G.n) if i != vert and i not in G.neighbors[vert]]
            worst_lo = worst_hi = worst_u = np.inf
            for digits in np.ndindex(*(3,) * len(others)):
                u = np.zeros(G.n, dtype=np.int8)
                for i, d in zip(others, digits):
                    u[i] = d - 1
                try:
                    res = Mo.hardcore_marginal_bounds_check(spec, u, vert, delta=delta)
                except ZeroMassSubcube:
                    continue
                worst_lo = min(worst_lo, res[0].lhs - res[0].rhs)
                worst_hi = min(worst_hi, res[1].rhs - res[1].lhs)
                worst_u = min(worst_u, res[2].lhs - res[2].rhs)
            out.append(geq("marginal_lower", f"{inst},v={vert}", worst_lo, 0.0, 1e-12))
            out.append(geq("marginal_upper", f"{inst},v={vert}", worst_hi, 0.0, 1e-12))
            out.append(geq("marginal_lower_unique", f"{inst},v={vert}", worst_u, 0.0, 1e-12))
        return out

    def tilt_identity():
        err = 0.0
        for t in ts:
            a = M.tilt(nu, -t * np.ones(G.n)).full
            b = Mo.hardcore(G, math.exp(-2 * t) * lam).full
            err = max(err, float(np.max(np.abs(a - b))))
        return [leq("tilt_still_hardcore", inst, err, 0.0, 1e-12)]

    def tame():
        worst, c_low = 1.0, 1.0
        for t in ts:
            cert = St.tame_marginals_check(Mo.hardcore(G, math.exp(-2 * t) * lam))
            worst = max(worst, cert.constant)
            c_low = max(c_low, cert.meta["C_lower"])
        info["K"], info["C"] = worst, c_low
        return [leq("tame_marginals_finite", inst, worst, math.exp(30), 0.0)]

    def small_fugacity():
        lam_end = math.exp(-2 * s) * lam
        out = [leq("endpoint_small_fugacity", inst, lam_end, 1.0 / (2 * D), 0.0)]
        end = Mo.hardcore(G, lam_end)
        K = Kn.glauber(end)
        up = S.mlsi_adversarial(K, restarts=restarts, seed=seed).upper if K.size > 1 else 1.0
        info["endpoint_mlsi_upper"] = up
        out.append(geq("small_fugacity_mlsi_consistent", inst, up, 1.0 / (4 * G.n), 1e-12))
        return out

    checks = _run_tasks([si, marginals, tilt_identity, tame, small_fugacity], threads)
    return checks, info


def hardcore_pipeline(G: Mo.Graph, lam: float, s: float = 2.0, t_grid: int = 9, n_tilts: int = 4,
                      restarts: int = 50, nf_paths: int = 400, n_test_fns: int = 3, eps: float = 0.25,
                      seed: int = 0, threads: int | None = None) -> PipelineReport:
    """Hardcore mixing pipeline: (a) every ingredient checked numerically,
    (b) measured entropy conservation of the negative-fields leg with fitted
    exponent constants, (c) worst-start TV mixing time of Glauber dynamics
    against n log n + 3 n log(1/eps)."""
    checks, info = hardcore_ingredients(G, lam, s, t_grid, n_tilts, restarts, seed, threads)
    nu = Mo.hardcore(G, lam)
    n = G.n
    delta = info["delta"]
    fitted = {}
    if nf_paths > 0 and nu.f > 0:
        batch = L.nf_simulate_batch(nu, s, nf_paths, seed, threads=threads)
        rng = np.random.default_rng(seed + 1)
        vals_all = nu.weights > 0
        ratios = []
        for _ in range(n_test_fns):
            f = np.exp(rng.standard_normal(int(vals_all.sum())))
            base = M.entropy_of(nu.weights[vals_all], f)
            ent = batch.final @ M.xlogx(f) - M.xlogx(batch.final @ f)
            ratios.append(float(np.mean(ent)) / base)
        eps_hat = max(min(ratios), 1e-300)
        eta = 144.0 / delta
        K = info["K"]
        fitted = {"entropy_conservation": eps_hat, "conservation_ratios": ratios,
                  "c_tiltmix": -math.log(eps_hat) / (K ** 4 * eta),
                  "c_eisi": -math.log(eps_hat) / (768.0 * eta * K ** 3 * info["C"]),
                  "K": K, "C": info["C"], "eta": eta}
    Kg = Kn.glauber(nu)
    tmix = S.tv_mixing_time(Kg, None, eps)
    scale = n * math.log(n) + 3 * n * math.log(1 / eps)
    fitted["tmix"] = tmix
    fitted["tmix_ratio"] = tmix / scale
    br = {"gap": S.spectral_gap(Kg).gap, "endpoint_mlsi_upper": info.get("endpoint_mlsi_upper")}
    return PipelineReport("hardcore", {"graph": G.to_dict(), "lambda": lam, "s": s}, checks,
                          1.0 / (4 * n), br, fitted,
                          {"delta": delta, "effective_degree": info["effective_degree"],
                           "si_max": info.get("si_max")})

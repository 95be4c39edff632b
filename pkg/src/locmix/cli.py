"""Batch driver: ``locmix <analyze|certify|simulate|pipeline|verify>``.

Every command resolves a single configuration (defaults, then an optional
JSON config file, then command-line flags), runs the requested analysis and
writes a deterministic JSON report that embeds the configuration hash, the
seed and the library version.  Secondary CSV tables are written next to the
report when ``--out`` is given.

Exit codes: 0 success, 2 malformed input, 3 budget or precondition failure,
4 failed check.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import kernels as Kn
from . import localization as L
from . import measures as M
from . import models as Mo
from . import pipelines as P
from . import rgo as R
from . import spectra as S
from . import stability as St
from .errors import BudgetExceeded, DimensionTooLarge, InputError, LocmixError
from .reports import Check, close, config_hash, dumps, first_failure, jsonable, leq

COMMANDS = ("analyze", "certify", "simulate", "pipeline", "verify")
CHAINS = ("glauber", "l-glauber", "rgd")
CERTIFICATES = ("si-pinnings", "ent-stab-H", "ent-stab-quad", "cor-tilts", "tame", "bounded",
                "eisi", "fact-inf", "cormar", "tilt-marginals", "hphi")
SCHEMES = ("coordinate", "sl", "nf")
PIPELINES = ("theorem-sk", "graphical-ising", "ferro", "hardcore", "anneal-coordinate", "anneal-sl")
VERIFY_SUITES = ("kernel-equivalence", "localization-identity", "tightness", "fact-inf", "cormar",
                 "llent-hessian", "hphi", "tilt-marginals", "coordinate-martingale", "rgo-gaussian")

# Smallest tolerance accepted for any override; anything below double
# precision resolution cannot be met reliably.
MACHINE_TOL = 1e-15

DEFAULT_TOL = {"identity": 1e-10, "bound": 1e-9, "sigma": 4.0, "rgo": 1e-3, "fd": 1e-4}
DEFAULT_BUDGET = {"n": 14, "paths": 200_000, "restarts": 1000, "mc_samples": 5_000_000, "grid": 2048}

DEFAULTS: dict[str, Any] = {
    "chain": "glauber", "ell": 1, "eta": 1.0, "eps": 0.25, "restarts": 20, "mc_samples": 100_000,
    "certificates": ["si-pinnings"], "n_dirs": 200,
    "scheme": "coordinate", "horizon": None, "dt": None, "paths": 2000, "drive": "identity",
    "integrator": "euler",
    "pipeline": None, "a": 1, "tau": 1, "mode": "variance",
    "suites": list(VERIFY_SUITES), "instances": 5,
}


# ------------------------------------------------------------------ config

def _load_json(text: str, what: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _read_file(path: Path, what: str) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} {str(path)!r}: {exc.strerror}")


def _resolve_model(value: Any, base: Path) -> dict:
    """Model given inline (mapping or JSON text) or as a path to a JSON file."""
    if isinstance(value, dict):
        return value
    if not isinstance(value, str):
        raise InputError("model must be a JSON object or a path to one")
    text = value.strip()
    if text.startswith("{"):
        return _load_json(text, "model spec")
    path = Path(text)
    if not path.is_absolute():
        path = base / path
    return _load_json(_read_file(path, "model spec"), f"model spec {str(path)!r}")


def _number(text: str, key: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise InputError(f"--{key} expects a number, got {text!r}")
    if not math.isfinite(val):
        raise InputError(f"--{key} must be finite")
    return val


def _dotted(extra: Sequence[str]) -> dict:
    """Parse ``--tol.NAME VALUE`` / ``--budget.NAME=VALUE`` pairs."""
    out: dict = {"tol": {}, "budget": {}}
    items = list(extra)
    k = 0
    while k < len(items):
        tok = items[k]
        if not tok.startswith("--") or "." not in tok:
            raise InputError(f"unrecognized argument {tok!r}")
        key, _, val = tok[2:].partition("=")
        group, _, name = key.partition(".")
        if group not in out or not name:
            raise InputError(f"unrecognized argument {tok!r}")
        if not val:
            if k + 1 >= len(items):
                raise InputError(f"{tok} expects a value")
            k += 1
            val = items[k]
        out[group][name] = _number(val, key)
        k += 1
    return out


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_config(args: argparse.Namespace, extra: Sequence[str]) -> dict:
    """Merge defaults, the optional config file and command-line flags."""
    base = Path.cwd()
    cfg: dict = {}
    if args.config:
        path = Path(args.config)
        cfg = _load_json(_read_file(path, "config"), f"config {str(path)!r}")
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
        base = path.resolve().parent
        if "command" in cfg and cfg["command"] != args.command:
            raise InputError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    merged = dict(DEFAULTS)
    merged.update({k: v for k, v in cfg.items() if k not in ("tol", "budget")})
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")}
    for key in ("certificates", "suites"):
        if isinstance(flags.get(key), str):
            flags[key] = _csv_list(flags[key])
    merged.update(flags)
    merged["command"] = args.command
    dotted = _dotted(extra)
    for group, defaults in (("tol", DEFAULT_TOL), ("budget", DEFAULT_BUDGET)):
        vals = dict(defaults)
        given = cfg.get(group, {})
        if not isinstance(given, dict):
            raise InputError(f"config field {group!r} must be an object")
        vals.update(given)
        vals.update(dotted[group])
        for name, val in vals.items():
            if name not in defaults:
                raise InputError(f"unknown {group} key {name!r}; expected one of {sorted(defaults)}")
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                raise InputError(f"{group}.{name} must be a finite number")
        merged[group] = vals
    for name, val in merged["tol"].items():
        if val < MACHINE_TOL:
            raise InputError(f"tol.{name} = {val:g} is below machine resolution {MACHINE_TOL:g}")
    if merged.get("seed") is None:
        raise InputError(f"{args.command} is stochastic; --seed is required")
    if isinstance(merged["seed"], bool) or not isinstance(merged["seed"], int) or merged["seed"] < 0:
        raise InputError("seed must be a non-negative integer")
    if "model" in merged and merged["model"] is not None:
        merged["model"] = _resolve_model(merged["model"], base)
    return merged


def _budget(cfg: dict, key: str, value: float, what: str) -> None:
    cap = cfg["budget"][key]
    if value > cap:
        raise BudgetExceeded(f"{what} = {value:g} exceeds budget.{key} = {cap:g}")


# ------------------------------------------------------------------ models

def _grid_measure(d: dict, cfg: dict) -> tuple[R.GridMeasure, tuple]:
    """One-dimensional potential V = mu x^2/2 + quartic x^4 + abs |x|."""
    try:
        mu = float(d["mu"])
        c4 = float(d.get("quartic", 0.0))
        c1 = float(d.get("abs", 0.0))
        m = int(d.get("m", 256))
    except (KeyError, TypeError, ValueError):
        raise InputError("grid model needs numeric 'mu' and optional 'quartic', 'abs', 'm'")
    if c4 < 0 or c1 < 0:
        raise InputError("grid model coefficients 'quartic' and 'abs' must be non-negative")
    _budget(cfg, "grid", m, "grid points")
    return R.discretize(lambda x: mu * x * x / 2 + c4 * x ** 4 + c1 * np.abs(x), mu, m=m), (mu, c4, c1, m)


def _model(cfg: dict) -> Mo.ModelSpec:
    if cfg.get("model") is None:
        raise InputError(f"{cfg['command']} needs --model")
    spec = Mo.parse_model(cfg["model"])
    if spec.n > cfg["budget"]["n"]:
        raise DimensionTooLarge(f"n = {spec.n} exceeds budget.n = {cfg['budget']['n']:g}")
    return spec


def _is_grid(cfg: dict) -> bool:
    return isinstance(cfg.get("model"), dict) and cfg["model"].get("type") == "grid"


def _positive_int(cfg: dict, key: str, minimum: int = 1) -> int:
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val or val < minimum:
        raise InputError(f"{key} must be an integer >= {minimum}, got {val!r}")
    return int(val)


def _restarts(cfg: dict) -> int:
    r = _positive_int(cfg, "restarts")
    _budget(cfg, "restarts", r, "restarts")
    return r


# ------------------------------------------------------------------ commands

def _kernel(cfg: dict, nu: M.SpinMeasure) -> tuple[Kn.Kernel, list[Check]]:
    chain = cfg["chain"]
    if chain == "glauber":
        K = Kn.glauber(nu)
    elif chain == "l-glauber":
        K = Kn.l_glauber(nu, _positive_int(cfg, "ell"))
    elif chain == "rgd":
        samples = _positive_int(cfg, "mc_samples")
        _budget(cfg, "mc_samples", samples, "mc_samples")
        K = Kn.cube_rgd(nu, float(cfg["eta"]), samples, cfg["seed"])
        return K, [Kn.rgd_reversibility_check(K, cfg["tol"]["sigma"])]
    else:
        raise InputError(f"chain must be one of {', '.join(CHAINS)}, got {chain!r}")
    return K, K.invariant_checks()


TMIX_EPS = (0.25, 0.125, 0.0625)


def cmd_analyze(cfg: dict) -> tuple[dict, list[Check], dict]:
    """Spectral gap, adversarial MLSI upper estimate and TV mixing times."""
    if cfg["chain"] not in CHAINS:
        raise InputError(f"chain must be one of {', '.join(CHAINS)}, got {cfg['chain']!r}")
    restarts = _restarts(cfg)
    if _is_grid(cfg):
        if cfg["chain"] != "rgd":
            raise InputError("grid models only support chain rgd")
        gm, (mu, c4, c1, m) = _grid_measure(cfg["model"], cfg)
        eta = float(cfg["eta"])
        V = lambda x: mu * x * x / 2 + c4 * x ** 4 + c1 * np.abs(x)
        _, delta = R.refinement_delta(V, mu, eta, m)
        checks = R.rgo_mlsi_check(gm, eta, slack=10 * delta, restarts=restarts, seed=cfg["seed"])
        by = {c.check: c for c in checks}
        result = {"gap": by["rgo_gap_bound"].lhs, "mlsi_upper": by["rgo_mlsi_bound"].lhs,
                  "bound": R.rgo_bound(mu, eta), "refinement_delta": delta, "grid_points": gm.m,
                  "interval": list(gm.interval)}
        return result, checks, {"grid": gm.to_csv()}
    nu = _model(cfg).build()
    K, checks = _kernel(cfg, nu)
    spec = S.spectral_gap(K)
    est = S.mlsi_adversarial(K, restarts=restarts, seed=cfg["seed"])
    tmix = {}
    for eps in TMIX_EPS:
        try:
            tmix[repr(eps)] = S.tv_mixing_time(K, eps=eps)
        except LocmixError as exc:
            tmix[repr(eps)] = f"unavailable: {exc}"
    result = {"kernel": K.name, "support_size": K.size, "spectral": spec.to_dict(), "mlsi": est.to_dict(),
              "t_mix": tmix}
    table = "eps,t_mix\n" + "".join(f"{e},{tmix[repr(e)]}\n" for e in TMIX_EPS)
    return result, checks, {"tmix": table}


def _certify_one(kind: str, spec: Mo.ModelSpec, nu: M.SpinMeasure, cfg: dict) -> tuple[list, list[Check]]:
    seed, n_dirs = cfg["seed"], _positive_int(cfg, "n_dirs")
    tol = cfg["tol"]
    if kind == "si-pinnings":
        claim = None
        if spec.kind == "hardcore":
            delta = P.hardcore_delta(spec.graph, spec.lam)
            claim = 144.0 / delta if delta > 0 else None
        return [St.si_all_pinnings(nu, claim)], []
    if kind == "ent-stab-H":
        return [St.entropic_stability_scan(nu, "H", n_dirs=n_dirs, seed=seed)], []
    if kind == "ent-stab-quad":
        return [St.entropic_stability_scan(nu, "quad", n_dirs=n_dirs, seed=seed)], []
    if kind == "cor-tilts":
        return [St.cor_under_tilts(nu, n_dirs=n_dirs, seed=seed)], []
    if kind == "tame":
        return [St.tame_marginals_check(nu)], []
    if kind == "bounded":
        return [St.bounded_marginals_check(nu)], []
    if kind == "eisi":
        return [], St.theorem_eisi_check(nu, seed=seed, n_dirs=n_dirs)
    if kind == "fact-inf":
        return [], St.fact_inf_check(nu, tol["identity"])
    if kind == "cormar":
        return [], St.lemma_cormar_check(nu, tol["identity"])
    if kind == "tilt-marginals":
        return [], St.lemma_tiltmarginals_check(nu, seed=seed)
    if kind == "hphi":
        return [], St.lemma_hphi_check()
    raise InputError(f"unknown certificate kind {kind!r}; expected one of {', '.join(CERTIFICATES)}")


def cmd_certify(cfg: dict) -> tuple[dict, list[Check], dict]:
    """Certificates (constant, witness, optional claim) and identity checks."""
    kinds = cfg["certificates"]
    if isinstance(kinds, str):
        kinds = _csv_list(kinds)
    for kind in kinds:
        if kind not in CERTIFICATES:
            raise InputError(f"unknown certificate kind {kind!r}; expected one of {', '.join(CERTIFICATES)}")
    spec = _model(cfg)
    nu = spec.build()
    certs, checks = [], []
    for kind in kinds:
        cs, ch = _certify_one(kind, spec, nu, cfg)
        for c in cs:
            if c.passed is not None:
                checks.append(leq(f"certificate_{c.kind}", kind, c.constant, c.claim, 1e-12))
        certs.extend(cs)
        checks.extend(ch)
    return {"certificates": [c.to_dict() for c in certs]}, checks, {}


def _drive(cfg: dict, spec: Mo.ModelSpec, n: int) -> np.ndarray:
    if cfg["drive"] == "identity":
        return np.eye(n)
    if cfg["drive"] == "ising":
        J = spec.coupling()
        if J is None:
            raise InputError("drive 'ising' needs an Ising model")
        Jp, _ = P.psd_coupling(J)
        return L.sqrt_psd(2.0 * Jp)
    raise InputError(f"drive must be identity or ising, got {cfg['drive']!r}")


def cmd_simulate(cfg: dict) -> tuple[dict, list[Check], dict]:
    """Simulate a localization scheme and test the martingale property."""
    scheme = cfg["scheme"]
    if scheme not in SCHEMES:
        raise InputError(f"scheme must be one of {', '.join(SCHEMES)}, got {scheme!r}")
    spec = _model(cfg)
    nu = spec.build()
    paths = _positive_int(cfg, "paths", 2)
    _budget(cfg, "paths", paths, "paths")
    seed, sigma = cfg["seed"], cfg["tol"]["sigma"]
    tables = {}
    if scheme == "coordinate":
        tau = nu.f if cfg["horizon"] is None else _positive_int(cfg, "horizon", 0)
        final = L.coord_sample_final(nu, tau, paths, seed)
        index = nu.free_to_full
        result = {"horizon": tau}
        checks = [L.martingale_check(nu, final, index, f"coordinate,tau={tau}", sigma)]
    elif scheme == "sl":
        T = 1.0 if cfg["horizon"] is None else float(cfg["horizon"])
        C = _drive(cfg, spec, nu.n)
        batch = L.sl_simulate_batch(nu, C, cfg["dt"], T, paths, seed, scheme=cfg["integrator"])
        final, index = batch.final(), batch.index
        target = nu.full[index]
        dev = np.abs(batch.weights.mean(axis=0) - target[None, :]).max(axis=1)
        tables["trace"] = "t,max_abs_mean_deviation\n" + "".join(
            f"{t!r},{d!r}\n" for t, d in zip(batch.times.tolist(), dev.tolist()))
        result = {"horizon": T, "drive": cfg["drive"], "integrator": cfg["integrator"],
                  "max_clipped_mass": batch.max_clipped, "renormalization_rms": batch.residual_rms}
        checks = [L.martingale_check(nu, final, index, f"sl,T={T:g}", sigma)]
    else:
        s = 1.0 if cfg["horizon"] is None else float(cfg["horizon"])
        dt = 1e-3 if cfg["dt"] is None else float(cfg["dt"])
        batch = L.nf_simulate_batch(nu, s, paths, seed, dt)
        final, index = batch.final, batch.index
        pinned = np.isfinite(batch.pin_times)
        tables["pins"] = "coordinate,fraction_pinned\n" + "".join(
            f"{i},{p!r}\n" for i, p in enumerate(pinned.mean(axis=0).tolist()))
        result = {"horizon": s, "fraction_pinned": pinned.mean(axis=0)}
        checks = [L.martingale_check(nu, final, index, f"nf,s={s:g}", sigma)]
    result.update({"scheme": scheme, "paths": paths, "mean_final": final.mean(axis=0), "target": nu.full[index]})
    return result, checks, tables


def cmd_pipeline(cfg: dict) -> tuple[dict, list[Check], dict]:
    """Assemble a mixing bound from numerically checked ingredients."""
    name = cfg["pipeline"]
    if name not in PIPELINES:
        raise InputError(f"pipeline must be one of {', '.join(PIPELINES)}, got {name!r}")
    spec = _model(cfg)
    seed, restarts = cfg["seed"], _restarts(cfg)
    if name == "theorem-sk":
        J = spec.coupling()
        if J is None:
            raise InputError("theorem-sk needs an Ising model")
        rep = P.theorem_sk_pipeline(J, spec.field, restarts=restarts, seed=seed)
    elif name == "graphical-ising":
        if spec.kind != "graph_ising":
            raise InputError("graphical-ising needs a graph_ising model")
        rep = P.graphical_ising_bound(spec.graph, spec.beta, spec.field, restarts=restarts, seed=seed)
    elif name == "ferro":
        if spec.kind == "graph_ising":
            rep = P.ferro_susceptibility_bound(spec.graph, spec.beta, v=spec.field, restarts=restarts, seed=seed)
        elif spec.kind == "ising":
            rep = P.ferro_susceptibility_bound(J=spec.J, v=spec.field, restarts=restarts, seed=seed)
        else:
            raise InputError("ferro needs an Ising model")
    elif name == "hardcore":
        if spec.kind != "hardcore":
            raise InputError("hardcore pipeline needs a hardcore model")
        rep = P.hardcore_pipeline(spec.graph, spec.lam, restarts=restarts, eps=float(cfg["eps"]), seed=seed)
    elif name == "anneal-coordinate":
        nu = spec.build()
        plan = P.coordinate_anneal_plan(nu, _positive_int(cfg, "a", 0), _positive_int(cfg, "tau", 0),
                                        cfg["mode"], seed=seed)
        rep = P.anneal_bound(nu, plan, restarts, seed, cfg["tol"]["bound"])
    else:
        J = spec.coupling()
        if J is None:
            raise InputError("anneal-sl needs an Ising model")
        rep = P.anneal_bound(spec.build(), P.sl_glauber_plan(J, spec.n), restarts, seed, cfg["tol"]["bound"])
    d = rep.to_dict()
    checks = rep.ingredients
    d.pop("ingredients")
    return d, checks, {}


def _suite(name: str, rng: np.random.Generator, count: int, tol: dict, seed: int) -> list[Check]:
    ident = tol["identity"]
    out: list[Check] = []
    if name == "kernel-equivalence":
        for k in range(count):
            nu = M.random_measure(rng, int(rng.integers(3, 6)))
            for ell in range(1, nu.f + 1):
                a = Kn.kernel_from_coordinate_localization(nu, nu.f - ell).P
                b = Kn.l_glauber(nu, ell).P
                out.append(leq("kernel_equivalence", f"random#{k},ell={ell}", float(np.abs(a - b).max()), 0.0,
                               max(ident, 1e-12)))
    elif name == "localization-identity":
        for k in range(count):
            nu = M.random_measure(rng, int(rng.integers(2, 6)))
            tau = int(rng.integers(0, nu.f + 1))
            phis = rng.standard_normal((3, 1 << nu.n))
            fs = np.exp(rng.standard_normal((3, 1 << nu.n)))
            out += S.verify_localization_gap_identity(nu, tau, phis, ident, f"random#{k},tau={tau}")
            out += S.verify_entropy_step_inequality(nu, tau, fs, ident, f"random#{k},tau={tau}")
    elif name == "tightness":
        for n in (4, 6):
            nu = M.uniform(n)
            for ell in range(1, n + 1):
                gap = S.spectral_gap(Kn.l_glauber(nu, ell)).gap
                out.append(close("uniform_gap", f"n={n},ell={ell}", gap, ell / n, ident))
                out.append(close("uniform_assembled_bound", f"n={n},ell={ell}", St.alo_bound(nu, ell), ell / n, ident))
    elif name == "fact-inf":
        for k in range(count):
            out += St.fact_inf_check(M.random_measure(rng, int(rng.integers(2, 6))), ident)
    elif name == "cormar":
        for k in range(count):
            out += St.lemma_cormar_check(M.random_measure(rng, int(rng.integers(2, 6))), ident)
    elif name == "llent-hessian":
        for k in range(count):
            nu = M.random_measure(rng, int(rng.integers(2, 5)))
            x = np.tanh(0.5 * rng.standard_normal(nu.n)) * 0.9 + 0.1 * M.center(nu)
            out.append(St.llent_hessian_check(nu, x, rtol=tol["fd"]))
    elif name == "hphi":
        out += St.lemma_hphi_check()
    elif name == "tilt-marginals":
        for k in range(count):
            out += St.lemma_tiltmarginals_check(M.random_measure(rng, int(rng.integers(2, 5))), seed=seed + k)
    elif name == "coordinate-martingale":
        for k in range(count):
            nu = M.random_measure(rng, int(rng.integers(2, 6)), sparsity=0.2)
            for t in range(nu.f + 1):
                ens = L.coord_enumerate(nu, t)
                mix = sum(w * m.full for w, m in zip(ens.weights, ens.members))
                out.append(leq("coordinate_mixture_equals_nu", f"random#{k},t={t}",
                               float(np.abs(mix - nu.full).max()), 0.0, ident))
    elif name == "rgo-gaussian":
        for mu, eta in itertools.product((1.0, 2.0), (0.25, 1.0, 4.0)):
            out.append(R.gaussian_gap_check(mu, eta, tol=tol["rgo"]))
    else:
        raise InputError(f"unknown verify suite {name!r}; expected one of {', '.join(VERIFY_SUITES)}")
    return out


def cmd_verify(cfg: dict) -> tuple[dict, list[Check], dict]:
    """Run the identity and lemma suites on seeded random instances."""
    suites = cfg["suites"]
    if isinstance(suites, str):
        suites = _csv_list(suites)
    for s in suites:
        if s not in VERIFY_SUITES:
            raise InputError(f"unknown verify suite {s!r}; expected one of {', '.join(VERIFY_SUITES)}")
    count = _positive_int(cfg, "instances")
    ss = np.random.SeedSequence(cfg["seed"])
    children = ss.spawn(len(VERIFY_SUITES))
    checks, summary = [], {}
    for s in suites:
        rng = np.random.default_rng(children[VERIFY_SUITES.index(s)])
        res = _suite(s, rng, count, cfg["tol"], cfg["seed"])
        summary[s] = {"checks": len(res), "failed": sum(not c.passed for c in res)}
        checks += res
    return {"suites": summary}, checks, {}


HANDLERS = {"analyze": cmd_analyze, "certify": cmd_certify, "simulate": cmd_simulate,
            "pipeline": cmd_pipeline, "verify": cmd_verify}


# ------------------------------------------------------------------ driver

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locmix", description=__doc__.splitlines()[0],
                                epilog="Tolerance and budget overrides: --tol.NAME VALUE, --budget.NAME VALUE.")
    p.add_argument("--version", action="version", version=f"locmix {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--model", help="model spec: path to a JSON file or inline JSON")
    common.add_argument("--seed", type=int, help="master seed (required)")
    common.add_argument("--out", help="report path (JSON); CSV tables are written alongside")
    common.add_argument("--restarts", type=int, help="MLSI optimizer restarts")
    for name, helptext in (
        ("analyze", "spectral gap, MLSI upper estimate and t_mix of a chain"),
        ("certify", "spectral-independence, entropic-stability and marginal certificates"),
        ("simulate", "simulate a localization scheme and test the martingale property"),
        ("pipeline", "assemble and bracket a mixing bound"),
        ("verify", "identity and lemma suite on random instances"),
    ):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        if name == "analyze":
            sp.add_argument("--chain", choices=CHAINS)
            sp.add_argument("--ell", type=int)
            sp.add_argument("--eta", type=float)
            sp.add_argument("--mc-samples", dest="mc_samples", type=int)
        elif name == "certify":
            sp.add_argument("--certificates", help=f"comma list from: {', '.join(CERTIFICATES)}")
            sp.add_argument("--n-dirs", dest="n_dirs", type=int)
        elif name == "simulate":
            sp.add_argument("--scheme", choices=SCHEMES)
            sp.add_argument("--horizon", type=float, help="tau (coordinate), T (sl) or s (nf)")
            sp.add_argument("--dt", type=float)
            sp.add_argument("--paths", type=int)
            sp.add_argument("--drive", choices=("identity", "ising"))
            sp.add_argument("--integrator", choices=("euler", "milstein"))
        elif name == "pipeline":
            sp.add_argument("--pipeline", choices=PIPELINES)
            sp.add_argument("--a", type=int)
            sp.add_argument("--tau", type=int)
            sp.add_argument("--mode", choices=("variance", "entropy"))
            sp.add_argument("--eps", type=float)
        else:
            sp.add_argument("--suites", help=f"comma list from: {', '.join(VERIFY_SUITES)}")
            sp.add_argument("--instances", type=int)
    return p


def _integral_horizon(cfg: dict) -> None:
    h = cfg.get("horizon")
    if cfg["command"] == "simulate" and cfg["scheme"] == "coordinate" and h is not None:
        if float(h) != int(h):
            raise InputError("coordinate horizon must be an integer")
        cfg["horizon"] = int(h)


def run(cfg: dict) -> tuple[dict, bool]:
    """Execute a resolved configuration; returns (report, all checks passed)."""
    _integral_horizon(cfg)
    result, checks, tables = HANDLERS[cfg["command"]](cfg)
    record = {k: v for k, v in cfg.items() if k != "out"}
    report = {
        "command": cfg["command"],
        "version": __version__,
        "seed": cfg["seed"],
        "config_hash": config_hash(record),
        "config": record,
        "result": result,
        "checks": [c.to_dict() for c in checks],
        "pass": all(c.passed for c in checks),
    }
    return {"report": jsonable(report), "tables": tables, "failure": first_failure(checks)}, report["pass"]


def _write(cfg: dict, out: dict) -> None:
    text = dumps(out["report"]) + "\n"
    if not cfg.get("out"):
        sys.stdout.write(text)
        return
    path = Path(cfg["out"])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    for name, table in out["tables"].items():
        path.with_name(f"{path.stem}_{name}.csv").write_text(table)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = build_config(args, extra)
        out, ok = run(cfg)
        _write(cfg, out)
    except LocmixError as exc:
        print(f"locmix {args.command}: error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    if not ok:
        c = out["failure"]
        witness = f", witness {json.dumps(jsonable(c.detail), sort_keys=True)}" if c.detail else ""
        print(f"locmix {args.command}: check {c.check} failed on {c.instance}: lhs={c.lhs!r} rhs={c.rhs!r} "
              f"tol={c.tolerance!r}{witness}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())

import math

import numpy as np
import pytest
from scipy import stats

from locmix import kernels as Kn
from locmix import localization as L
from locmix import measures as M
from locmix import models as Mo
from locmix import pipelines as P
from locmix.errors import NoFreeCoordinates

from conftest import ising3, k2, random_measures


def test_coord_enumerate_endpoints():
    for nu in random_measures(31, 5, sparsity=0.3):
        e0 = L.coord_enumerate(nu, 0)
        assert len(e0.members) == 1 and e0.weights[0] == pytest.approx(1.0, abs=1e-15)
        ef = L.coord_enumerate(nu, nu.f)
        assert all(m.f == 0 for m in ef.members)
        for w, m in zip(ef.weights, ef.members):
            assert w == pytest.approx(nu.full[m.support[0]], abs=1e-15)


def test_coord_enumerate_mixture_identity():
    for nu in random_measures(32, 8, sparsity=0.2):
        for t in range(nu.f + 1):
            assert all(c.passed for c in L.coord_enumerate(nu, t).mixture_check(nu))


def test_coord_step_increment_moments():
    nu = random_measures(33, 1, n_range=(3, 3))[0]
    b = M.center(nu)
    for k in range(3):
        up, dn = 1 / (1 + b[k]), -1 / (1 - b[k])
        p_up = (1 + b[k]) / 2
        assert p_up * up + (1 - p_up) * dn == pytest.approx(0.0, abs=1e-14)
        second = p_up * up ** 2 + (1 - p_up) * dn ** 2
        assert second == pytest.approx(1 / (1 - b[k] ** 2), rel=1e-12)


def test_coord_step_single_spin_goes_to_dirac():
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(200):
        st = L.coord_sample_step(M.uniform(1), rng)
        assert st.state.f == 0 and abs(st.Z[0]) == 1.0
        vals.append(st.value)
    assert 60 < sum(v > 0 for v in vals) < 140
    with pytest.raises(NoFreeCoordinates):
        L.coord_sample_step(M.dirac([1]), rng)


def test_coord_variance_and_entropy_step_identities():
    rng = np.random.default_rng(34)
    for nu in random_measures(34, 6, sparsity=0.2):
        phi = rng.standard_normal(1 << nu.n)
        f = np.exp(rng.standard_normal(1 << nu.n))
        assert L.coord_variance_step_check(nu, phi).passed
        ent, expected, drop = L.coord_entropy_step(nu, f)
        assert ent - expected >= -1e-12


def test_sl_zero_driver_is_constant():
    nu = random_measures(35, 1, n_range=(3, 3))[0]
    batch = L.sl_simulate_batch(nu, np.zeros((3, 3)), dt=1e-2, T=1.0, n_paths=5, seed=0)
    assert np.allclose(batch.final(), nu.weights[nu.weights > 0][None, :], atol=1e-15)


def test_sl_renormalization_drift_shrinks_with_dt():
    nu = Mo.ising(*ising3())
    rms = [L.sl_simulate_batch(nu, np.eye(3), dt=dt, T=0.1, n_paths=200, seed=1).residual_rms
           for dt in (1e-2, 1e-3, 1e-4)]
    assert rms[0] > rms[1] > rms[2]
    assert rms[2] <= 10 * 1e-4


@pytest.mark.parametrize("driver", ["identity", "ising"])
def test_sl_martingale(driver):
    J, v = ising3()
    nu = Mo.ising(J, v)
    C = np.eye(3) if driver == "identity" else L.sqrt_psd(2 * P.psd_coupling(J)[0])
    batch = L.sl_simulate_batch(nu, C, T=1.0, n_paths=2000, seed=7)
    assert L.martingale_check(nu, batch.final(), batch.index, driver).passed
    assert batch.max_clipped <= 1e-3


def test_sl_form_trivial_cases():
    nu = Mo.ising(*ising3())
    idx = nu.free_to_full
    # C = I corresponds to J = I/2, whose quadratic form is constant on the
    # cube: the exact process is a pure tilt, so the residual vanishes
    rng = np.random.default_rng(2)
    times = np.linspace(0, 1, 11)
    states = [nu] + [M.tilt(nu, rng.standard_normal(3)) for _ in times[1:]]
    r = L.sl_form_residuals(nu, 0.5 * np.eye(3), times, [s.full[idx] for s in states], idx)
    assert r.max() <= 1e-10
    # simulated paths carry only discretization error, shrinking with dt
    res = []
    for dt in (1e-2, 1e-3):
        path = L.sl_simulate(nu, np.eye(3), dt=dt, T=0.2, seed=2, record_every=int(round(0.02 / dt)),
                             scheme="milstein")
        res.append(L.sl_form_check(path, nu, 0.5 * np.eye(3)).lhs)
    assert res[1] < res[0]


def test_sl_form_residual_decreases_with_dt():
    J, v = ising3()
    Jp = P.psd_coupling(J)[0]
    nu = Mo.ising(J, v)
    C = L.sqrt_psd(2 * Jp)
    res = [L.sl_form_check(L.sl_simulate(nu, C, dt=dt, T=1.0, seed=3, record_every=10), nu, Jp).lhs
           for dt in (1e-2, 1e-3)]
    assert res[1] < res[0]


def test_nf_single_spin_survival_ks():
    s = 3.0
    batch = L.nf_simulate_batch(M.uniform(1), s=s, n_paths=5000, seed=11)
    t = batch.pin_times[:, 0]
    pinned = t[np.isfinite(t)]
    p_s = 1 - L.nf_survival_single(s)
    # the spin is never pinned with probability S(s) -> 1/2; test the
    # conditional law of the pinning time and the pinned fraction separately
    res = stats.kstest(pinned, lambda x: (1 - L.nf_survival_single(x)) / p_s)
    assert res.pvalue > 0.01
    assert abs(pinned.size / t.size - p_s) <= 4 * math.sqrt(p_s * (1 - p_s) / t.size)


def test_nf_form_invariant():
    nu = Mo.hardcore(Mo.Graph.cycle(6), 1.0)
    for seed in range(5):
        path = L.nf_simulate(nu, 2.0, seed=seed)
        for k, (t, st) in enumerate(zip(path.times[1:-1], path.states[1:-1])):
            A = [e["coord"] for e in path.events[: k + 1]]
            assert st.allclose(L.nf_state(nu, A, t), 1e-12)


@pytest.mark.parametrize("graph", ["K2", "C6"])
def test_nf_martingale(graph):
    G = Mo.Graph(2, ((0, 1),)) if graph == "K2" else Mo.Graph.cycle(6)
    nu = Mo.hardcore(G, 1.0)
    batch = L.nf_simulate_batch(nu, 2.0, n_paths=2000, seed=12)
    assert L.martingale_check(nu, batch.final, batch.index, graph).passed


def test_coordinate_martingale_by_sampling():
    nu = random_measures(36, 1, n_range=(3, 3))[0]
    final = L.coord_sample_final(nu, 2, 2000, seed=3)
    assert L.martingale_check(nu, final, nu.free_to_full, "coordinate").passed


def test_conservation_trace_uniform_product_tight():
    nu = M.uniform(4)
    rng = np.random.default_rng(0)
    f = nu.f
    # linear functions attain the floor exactly; higher parity modes decay
    # more slowly, so a generic function sits above it
    linear = M.cube(4) @ rng.standard_normal(4)
    generic = rng.standard_normal(16)
    tr = L.conservation_trace(nu, "coordinate", fn=linear, kind="var")
    tg = L.conservation_trace(nu, "coordinate", fn=generic, kind="var")
    for ell in range(f):
        assert tr.cumulative[f - ell - 1] == pytest.approx(ell / f, abs=1e-10)
        assert tr.cumulative_floor[f - ell - 1] == pytest.approx(ell / f, abs=1e-10)
        assert tg.cumulative[f - ell - 1] >= ell / f - 1e-10
    assert all(c.passed for c in tr.checks()) and all(c.passed for c in tg.checks())


def test_conservation_trace_entropy_indicator():
    ind = np.zeros(8)
    ind[3] = 1.0
    tr = L.conservation_trace(M.uniform(3), "coordinate", fn=ind, kind="ent")
    assert all(c.passed for c in tr.checks())
    for t in range(3):
        assert tr.floors[t] == pytest.approx(1 - 1 / (3 - t), abs=1e-6)


def test_sl_entropy_conservation_floor():
    J, v = ising3()
    Jp = P.psd_coupling(J)[0]
    a = P.op_norm(Jp)
    nu = Mo.ising(J, v)
    f = np.exp(np.random.default_rng(5).standard_normal(8))
    tr = L.mc_conservation_trace(nu, "stochastic", fn=f, kind="ent", seed=4, n_paths=2000,
                                 C=L.sqrt_psd(2 * Jp), T=1.0, record_every=100,
                                 floor=lambda t: L.sl_entropy_floor(a, t))
    assert all(c.passed for c in tr.checks(n_sigma=3.0))


def test_kernel_estimate_coordinate_matches_glauber():
    nu = random_measures(37, 1, n_range=(3, 3))[0]
    final = L.coord_sample_final(nu, nu.f - 1, 4000, seed=8)
    est = L.estimate_kernel_from_states(nu, final, nu.free_to_full)
    assert L.kernel_comparison_check(est, Kn.glauber(nu), n_sigma=4.0).passed


def test_kernel_estimate_tau_zero_exact():
    nu = random_measures(38, 1, n_range=(3, 3))[0]
    rng = np.random.default_rng(0)
    paths = [L.coord_sample_path(nu, rng, steps=1) for _ in range(3)]
    est = L.estimate_kernel_from_paths(paths, 0, nu)
    assert np.allclose(est.P, np.tile(est.pi, (est.size, 1)), atol=1e-14)

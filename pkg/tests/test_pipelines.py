import math

import numpy as np
import pytest

from locmix import localization as L
from locmix import measures as M
from locmix import models as Mo
from locmix import pipelines as P
from locmix.errors import InputError, NotUnique, PreconditionViolated

from conftest import random_measures


def test_psd_coupling_minimal_shift():
    J = np.array([[0.0, 0.2], [0.2, 0.0]])
    Jp, shift = P.psd_coupling(J)
    assert shift == pytest.approx(0.2, abs=1e-14)
    assert np.linalg.eigvalsh(Jp)[0] == pytest.approx(0.0, abs=1e-14)
    assert Mo.ising(Jp).allclose(Mo.ising(J), 1e-14)
    assert P.psd_coupling(0.1 * np.ones((2, 2)))[1] == 0.0


def test_anneal_without_initial_leg_is_inner_gap():
    nu = random_measures(51, 1, n_range=(3, 3))[0]
    plan = P.coordinate_anneal_plan(nu, 0, 1)
    rep = P.anneal_bound(nu, plan)
    assert plan.epsilon == 1.0
    assert rep.assembled_bound == pytest.approx(rep.brackets["gap"], abs=1e-12)


def test_anneal_uniform_three_bits():
    nu = M.uniform(3)
    plan = P.coordinate_anneal_plan(nu, 1, 1)
    assert plan.epsilon == pytest.approx(2 / 3, abs=1e-12)
    assert plan.delta == pytest.approx(1 / 2, abs=1e-12)
    rep = P.anneal_bound(nu, plan)
    assert rep.passed and rep.assembled_bound <= rep.brackets["gap"]
    with pytest.raises(InputError):
        P.coordinate_anneal_plan(nu, 2, 1)


def test_anneal_entropy_mode():
    nu = random_measures(52, 1, n_range=(3, 3))[0]
    plan = P.coordinate_anneal_plan(nu, 1, 1, mode="entropy", n_dirs=20)
    rep = P.anneal_bound(nu, plan, restarts=20)
    assert rep.passed


def test_sl_then_glauber_two_spin():
    J = 0.1 * np.ones((2, 2))
    rep = P.anneal_bound(Mo.ising(J), P.sl_glauber_plan(J), restarts=20)
    assert rep.assembled_bound == pytest.approx(0.5 * (1 - 0.4), abs=1e-12)
    assert rep.passed
    with pytest.raises(PreconditionViolated):
        P.sl_glauber_plan(0.3 * np.ones((2, 2)))


def test_submartingale_examples():
    nu = M.uniform(3)
    var, ent = P.submartingale_check(nu, [np.full(8, 2.0)], [np.full(8, 2.0)])
    assert var.lhs == pytest.approx(var.rhs, abs=1e-12) and ent.passed
    ind = np.zeros(8)
    ind[0] = 1.0
    checks = P.submartingale_check(nu, [ind], [ind])
    assert all(c.passed for c in checks)
    full = np.zeros(8)
    full[nu.free_to_full] = ind
    q0, r0 = P._doob_quantities(nu, 1, full, full)
    kids = L.coord_enumerate(nu, 1)
    q1 = sum(w * P._doob_quantities(c, 1, full, full)[0] for w, c in zip(kids.weights, kids.members))
    r1 = sum(w * P._doob_quantities(c, 1, full, full)[1] for w, c in zip(kids.weights, kids.members))
    assert q1 - q0 > 1e-6 and r1 - r0 > 1e-6


def test_submartingale_random():
    rng = np.random.default_rng(53)
    for nu in random_measures(53, 10, n_range=(2, 5), sparsity=0.2):
        phis = rng.standard_normal((5, 1 << nu.n))
        fs = np.exp(rng.standard_normal((5, 1 << nu.n)))
        assert all(c.passed for c in P.submartingale_check(nu, phis, fs))


def test_theorem_sk_product():
    rep = P.theorem_sk_pipeline(np.zeros((3, 3)), n_fields=5, restarts=10)
    assert rep.assembled_bound == pytest.approx(1 / 3, abs=1e-12)
    assert rep.brackets["gap"] == pytest.approx(1 / 3, abs=1e-12)
    assert rep.passed


def test_theorem_sk_two_spin_ferromagnet():
    rep = P.theorem_sk_pipeline(0.1 * np.ones((2, 2)), n_fields=10, restarts=20)
    assert rep.assembled_bound == pytest.approx(0.3, abs=1e-12)
    assert rep.brackets["mlsi_upper"] >= 0.3
    assert rep.passed


def test_theorem_sk_random_six():
    rng = np.random.default_rng(54)
    A = rng.standard_normal((6, 6))
    J = (A + A.T) / 2
    J = 0.25 * J / np.abs(np.linalg.eigvalsh(J)).max()
    rep = P.theorem_sk_pipeline(J, n_fields=10, restarts=10)
    assert rep.passed
    assert rep.assembled_bound <= rep.brackets["gap"] <= rep.brackets["mlsi_upper"] + 1e-9


def test_graphical_bounds_at_zero_temperature_coupling():
    G = Mo.Graph.cycle(4)
    for rep in (P.graphical_ising_bound(G, 0.0, n_fields=3, restarts=5),
                P.ferro_susceptibility_bound(G, 0.0, n_fields=3, restarts=5)):
        assert rep.assembled_bound == pytest.approx(1 / 4, abs=1e-12)
        assert rep.passed


def test_graphical_bound_cubic_graph():
    G = Mo.Graph(6, ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4), (2, 5)))
    beta = 0.3
    rep = P.graphical_ising_bound(G, beta, n_fields=5, restarts=10)
    e = math.exp(beta)
    assert rep.fitted_constants["delta"] == pytest.approx((3 - e) / (1 + e), abs=1e-12)
    assert rep.passed
    neg = P.graphical_ising_bound(G, -beta, n_fields=5, restarts=10)
    assert neg.fitted_constants["delta"] == pytest.approx(rep.fitted_constants["delta"], abs=1e-12)
    assert neg.passed


def test_ferro_bound_positive_beta():
    rep = P.ferro_susceptibility_bound(Mo.Graph.cycle(5), 0.4, n_fields=5, restarts=10)
    assert rep.passed and 0 < rep.assembled_bound <= rep.brackets["gap"]


def test_hardcore_single_vertex():
    rep = P.hardcore_pipeline(Mo.Graph(1, ()), 1.0, restarts=5, nf_paths=100)
    assert rep.fitted_constants["tmix"] == 1
    assert rep.passed


def test_hardcore_path_full_suite():
    lam = 0.5 * Mo.critical_fugacity(3)
    rep = P.hardcore_pipeline(Mo.Graph.path(4), lam, restarts=10, nf_paths=200)
    assert rep.passed, [c.check for c in rep.failures()]
    assert rep.assembled_bound == pytest.approx(1 / 16)


def test_hardcore_cycle_ratio_reported():
    ratios = []
    for lam in (0.5, 1.0, 2.0):
        rep = P.hardcore_pipeline(Mo.Graph.cycle(8), lam, t_grid=3, n_tilts=2, restarts=5, nf_paths=100)
        ratios.append(rep.fitted_constants["tmix_ratio"])
    assert all(r > 0 and math.isfinite(r) for r in ratios)


def test_hardcore_not_unique():
    with pytest.raises(NotUnique):
        P.hardcore_pipeline(Mo.Graph.star(3), 10.0)

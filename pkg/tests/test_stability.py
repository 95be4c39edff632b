import math

import numpy as np
import pytest

from locmix import measures as M
from locmix import models as Mo
from locmix import pipelines as P
from locmix import stability as St
from locmix.errors import DomainError

from conftest import correlated_pair, k2, random_measures


def test_h_divergence_values():
    assert St.h_divergence([0.3, -0.2], [0.3, -0.2]) == 0.0
    assert St.h_divergence([1.0], [0.0]) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(DomainError):
        St.h_divergence([1.5], [0.0])


def test_h_divergence_is_binary_kl():
    rng = np.random.default_rng(41)
    x, y = rng.uniform(-0.99, 0.99, (2, 5))
    p, q = (1 + x) / 2, (1 + y) / 2
    kl = np.sum(p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q)))
    assert St.h_divergence(x, y) == pytest.approx(kl, abs=1e-12)


def test_hphi_grid_results():
    checks = {c.check + c.instance: c for c in St.lemma_hphi_check()}
    assert checks["hphi_uppergrid=2001"].passed
    assert checks["phi_absgrid=2001"].passed
    # the lower comparison fails near x = -1, y -> 1 (see hphi counterexample)
    assert not checks["hphi_lowergrid=2001"].passed


def test_hphi_lower_counterexample():
    x, y = -1.0, 0.99
    half_h = 0.5 * St.h_divergence([x], [y])
    mid = (1 + y) * float(St.phi((x - y) / (1 + y)))
    assert half_h == pytest.approx(2.649, abs=1e-3)
    assert mid == pytest.approx(1.99, abs=1e-12)
    assert half_h > mid
    # the comparison does hold when y is small
    for yy in (-0.5, 0.0, 0.05):
        xs = np.linspace(-1, 1, 401)
        lhs = 0.5 * St.h_terms(xs, yy)
        rhs = (1 + yy) * St.phi((xs - yy) / (1 + yy))
        assert np.all(lhs <= rhs + 1e-12)


def test_si_all_pinnings_small_cases():
    assert St.si_all_pinnings(M.product([0.3, -0.1, 0.6])).constant == pytest.approx(1.0, abs=1e-12)
    cert = St.si_all_pinnings(correlated_pair())
    assert cert.constant == pytest.approx(2.0, abs=1e-12)
    assert cert.meta["eta_levels"][1] <= 1.0


def test_si_all_pinnings_hardcore_claim():
    rng = np.random.default_rng(42)
    done = 0
    while done < 4:
        G = Mo.Graph.random(rng, int(rng.integers(4, 9)), 0.4)
        if G.max_degree > 3 or G.max_degree == 0:
            continue
        delta = P.hardcore_delta(G, 2.0)
        cert = St.si_all_pinnings(Mo.hardcore(G, 2.0), 144 / delta)
        assert cert.passed
        done += 1


def test_cor_under_tilts():
    assert St.cor_under_tilts(M.product([0.2, -0.4]), n_dirs=20).constant == pytest.approx(1.0, abs=1e-10)
    pair = correlated_pair()
    cert = St.cor_under_tilts(pair, n_dirs=40)
    assert cert.constant == pytest.approx(2.0, abs=1e-9)
    v = np.asarray(cert.witness["v"])
    assert St.cor_norm_at(pair, v[None, :])[0] == pytest.approx(cert.constant, abs=1e-9)


def test_cor_under_tilts_refinement_stable():
    J = np.array([[0.0, -0.6], [-0.6, 0.0]])
    nu = Mo.ising(J)
    coarse = St.cor_under_tilts(nu, n_dirs=40, refine=False).constant
    fine = St.cor_under_tilts(nu, n_dirs=400, refine=False).constant
    assert math.isfinite(coarse)
    assert abs(coarse - fine) <= 0.01 * fine


def test_entropic_stability_product_quadratic():
    cert = St.entropic_stability_scan(M.uniform(2), "quad", n_dirs=50)
    assert cert.constant <= 2.0
    assert cert.meta["small_tilt_limit"] == pytest.approx(1.0, abs=1e-9)


def test_entropic_stability_covariance_bound():
    # constant <= ||C A C|| when Cov(T_v nu) <= A over all tilts
    for nu in random_measures(43, 4, n_range=(2, 4)):
        C = np.diag(np.random.default_rng(0).uniform(0.5, 1.5, nu.n))
        V = np.vstack([np.zeros(nu.n), St.scan_tilts(nu, 3000, seed=1)])
        A = max(np.linalg.eigvalsh(c)[-1] for c in St.tilted_covs(nu, V))
        cert = St.entropic_stability_scan(nu, "quad", C=C, n_dirs=60)
        assert cert.constant <= A * np.max(np.diag(C)) ** 2 + 1e-6


def test_h_stability_below_correlation_bound():
    for nu in random_measures(44, 4, n_range=(2, 5)):
        h = St.entropic_stability_scan(nu, "H", n_dirs=60).constant
        cor = St.cor_under_tilts(nu, n_dirs=60).constant
        assert h <= cor + 1e-2


def test_tame_and_bounded_marginals():
    cert = St.tame_marginals_check(M.product([0.2, -0.5]))
    assert math.isfinite(cert.constant) and cert.meta["K_ratio"] == pytest.approx(1.0, abs=1e-12)
    assert St.bounded_marginals_check(M.product([0.2, -0.5])).constant == pytest.approx(0.5, abs=1e-12)
    pair = St.tame_marginals_check(correlated_pair())
    assert not math.isfinite(pair.constant) and pair.meta["finite"] is False


@pytest.mark.parametrize("G", [Mo.Graph.star(3), Mo.Graph.cycle(6), Mo.Graph.path(5)])
def test_tame_hardcore_unique(G):
    lam = 0.5 * Mo.critical_fugacity(max(3, G.max_degree))
    cert = St.tame_marginals_check(Mo.hardcore(G, lam))
    assert math.isfinite(cert.constant) and cert.constant <= math.exp(30)


def test_lemma_checks_small_instances():
    for nu in (k2(1.0), M.product([0.1, -0.3]), correlated_pair()):
        checks = (St.lemma_sitoei_check(nu) + St.lemma_llentdelta_check(nu) + St.lemma_tiltmarginals_check(nu))
        assert all(c.passed for c in checks)
    for c in St.theorem_eisi_check(k2(1.0), n_dirs=50):
        assert c.passed


def test_sitoei_zero_tilt():
    c = St.lemma_sitoei_check(M.product([0.2]), V=np.zeros((1, 1)))
    assert all(x.passed for x in c)


def test_tilt_marginals_single_spin_grid():
    V = np.linspace(-3, 3, 61)[:, None]
    for b in (-0.6, 0.0, 0.7):
        assert all(c.passed for c in St.lemma_tiltmarginals_check(M.product([b]), V=V))


def test_fact_inf_and_cormar_random():
    for nu in random_measures(45, 10, sparsity=0.2):
        assert all(c.passed for c in St.fact_inf_check(nu))
        assert all(c.passed for c in St.lemma_cormar_check(nu))


def test_llent_hessian_random():
    rng = np.random.default_rng(46)
    for nu in random_measures(46, 6, n_range=(2, 4)):
        x = 0.8 * M.center(M.tilt(nu, rng.standard_normal(nu.n)))
        assert St.llent_hessian_check(nu, x).passed


def test_alo_bound_uniform_product():
    for n in (4, 6):
        for ell in range(1, n + 1):
            assert St.alo_bound(M.uniform(n), ell) == pytest.approx(ell / n, abs=1e-12)

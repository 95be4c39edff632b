import math

import numpy as np
import pytest

from locmix import measures as M
from locmix.errors import AllZeroMass, DimensionTooLarge, NegativeInput, NonFinite, OutsideHull

from conftest import correlated_pair, random_measures


def test_cube_index_order():
    pts = M.cube(3)
    for k, x in enumerate(pts):
        assert M.config_index(x) == k


def test_materialize_uniform_single_spin():
    nu = M.materialize({(-1,): 1.0, (1,): 1.0}, 1)
    assert np.allclose(nu.weights, [0.5, 0.5])
    assert M.center(nu)[0] == pytest.approx(0.0, abs=1e-15)


def test_materialize_detects_constant_coordinate():
    nu = M.materialize({(1, 1): 2.0, (1, -1): 2.0}, 2)
    assert list(nu.pin) == [1, 0]
    assert np.allclose(nu.weights, [0.5, 0.5])
    mom = M.moments(nu)
    assert mom.b[0] == 1.0 and mom.cov[0, 0] == 0.0


def test_materialize_correlated_weights():
    nu = M.materialize({(-1, -1): 3, (1, 1): 3, (-1, 1): 1, (1, -1): 1}, 2)
    mom = M.moments(nu)
    assert np.allclose(mom.b, 0.0, atol=1e-15)
    assert mom.cov[0, 1] == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("table,err", [
    ({(1,): 0.0, (-1,): 0.0}, AllZeroMass),
    ({(1,): -1.0, (-1,): 1.0}, NegativeInput),
    ({(1,): np.nan, (-1,): 1.0}, NonFinite),
])
def test_materialize_rejects_bad_tables(table, err):
    with pytest.raises(err):
        M.materialize(table, 1)


def test_dimension_cap():
    with pytest.raises(DimensionTooLarge):
        M.uniform(M.N_MAX + 1)


def test_invariants_on_random_measures():
    for nu in random_measures(1, 20, sparsity=0.3):
        assert np.all(nu.weights >= 0)
        assert abs(nu.weights.sum() - 1) <= 1e-12
        mom = M.moments(nu)
        assert np.linalg.eigvalsh(mom.cov).min() >= -1e-10
        fr = nu.free
        assert np.allclose(np.diag(mom.cov)[fr], 1 - mom.b[fr] ** 2, atol=1e-12)
        full = nu.full
        pts = M.cube(nu.n)
        assert np.all((pts[full > 0] * nu.pin) >= 0)


def test_dirac_has_zero_free_coordinates():
    nu = M.dirac([1, -1, 1])
    assert nu.f == 0 and nu.weights.tolist() == [1.0]
    assert np.allclose(M.moments(nu).cov, 0.0)


def test_tilt_identity_and_single_spin():
    nu = M.uniform(3)
    assert M.tilt(nu, np.zeros(3)).allclose(nu, 0.0)
    for a in (-2.0, 0.3, 1.5):
        assert M.center(M.tilt(M.uniform(1), [a]))[0] == pytest.approx(math.tanh(a), abs=1e-14)


def test_pin_noop_and_full_pin():
    nu = M.uniform(2)
    assert M.pin(nu, [0, 0]).allclose(nu, 0.0)
    d = M.pin(nu, [1, 1])
    assert d.f == 0 and d.prob([1, 1]) == 1.0


def test_pin_mean_shift_matches_covariance_column():
    for nu in random_measures(2, 10):
        b = M.center(nu)
        cov = M.moments(nu).cov
        for i in range(nu.n):
            for s in (-1, 1):
                shift = M.center(M.pin_coordinate(nu, i, s)) - b
                assert np.allclose(shift, cov[:, i] * s / (1 + s * b[i]), atol=1e-10)


def test_product_moments_and_influence():
    means = [0.3, -0.5, 0.0]
    nu = M.product(means)
    mom = M.moments(nu)
    assert np.allclose(mom.cov, np.diag(1 - np.square(means)), atol=1e-14)
    inf = M.influence_correlation(nu)
    assert np.allclose(inf.psi, np.eye(3), atol=1e-12)
    assert np.allclose(inf.cor, np.eye(3), atol=1e-12)
    assert inf.rho == pytest.approx(1.0, abs=1e-12)


def test_correlated_pair_influence():
    inf = M.influence_correlation(correlated_pair())
    assert np.allclose(inf.cor, np.ones((2, 2)))
    assert inf.rho == pytest.approx(2.0, abs=1e-12)


def test_weighted_pair_covariance():
    nu = M.SpinMeasure(2, np.zeros(2, dtype=np.int8), np.array([3, 1, 1, 3]) / 8)
    assert M.moments(nu).cov[0, 1] == pytest.approx(0.5, abs=1e-14)


def test_entropy_and_kl_trivia():
    nu = random_measures(3, 1)[0]
    assert M.entropy(nu, np.full(1 << nu.n, 2.5)) == pytest.approx(0.0, abs=1e-14)
    assert M.kl(nu, nu) == pytest.approx(0.0, abs=1e-14)


def test_tilt_kl_expansion():
    rng = np.random.default_rng(4)
    for nu in random_measures(4, 10):
        v = rng.standard_normal(nu.n)
        mu = M.tilt(nu, v)
        expected = float(v @ M.center(mu)) - M.log_laplace(nu, v)
        assert M.kl(mu, nu) == pytest.approx(expected, abs=1e-10)
        assert M.tilt_kl(nu, v) == pytest.approx(expected, abs=1e-10)


def test_moment_matching_inverts_tanh():
    v = M.moment_matching_tilt(M.uniform(1), [0.5])
    assert v[0] == pytest.approx(math.atanh(0.5), abs=1e-9)
    nu = random_measures(5, 1)[0]
    v0 = M.moment_matching_tilt(nu, M.center(nu))
    assert np.allclose(M.center(M.tilt(nu, v0)), M.center(nu), atol=1e-9)


def test_moment_matching_round_trip():
    rng = np.random.default_rng(6)
    for nu in random_measures(6, 8):
        target = M.center(M.tilt(nu, rng.standard_normal(nu.n)))
        v = M.moment_matching_tilt(nu, target)
        assert np.allclose(M.center(M.tilt(nu, v)), target, atol=1e-8)


def test_moment_matching_outside_hull():
    with pytest.raises(OutsideHull):
        M.moment_matching_tilt(M.uniform(2), [1.0, 0.0])


def test_json_round_trip():
    nu = random_measures(7, 1, sparsity=0.4)[0]
    assert M.SpinMeasure.from_json(nu.to_json()).allclose(nu, 0.0)

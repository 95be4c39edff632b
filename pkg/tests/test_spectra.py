import math

import numpy as np
import pytest

from locmix import kernels as Kn
from locmix import measures as M
from locmix import spectra as S
from locmix.errors import DegenerateEntropy, NotReversible

from conftest import random_measures


def two_state(a, b):
    nu = M.product([(a - b) / (a + b)])
    return Kn.Kernel(np.array([0, 1]), np.array([[1 - a, a], [b, 1 - b]]), nu, "two_state")


def test_rank_one_gap():
    nu = random_measures(21, 1, n_range=(3, 3))[0]
    K = Kn.kernel_from_coordinate_localization(nu, 0)
    assert S.spectral_gap(K).gap == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("a,b", [(0.1, 0.3), (0.5, 0.5), (0.9, 0.2), (0.02, 0.05)])
def test_two_state_gap(a, b):
    assert S.spectral_gap(two_state(a, b)).gap == pytest.approx(a + b, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_uniform_glauber_gap(n):
    rep = S.spectral_gap(Kn.glauber(M.uniform(n)))
    assert rep.gap == pytest.approx(1 / n, abs=1e-12)
    K = Kn.glauber(M.uniform(n))
    assert S.rayleigh_quotient(K, rep.witness) == pytest.approx(rep.gap, abs=1e-10)


def test_nonreversible_kernel_rejected():
    nu = M.uniform(2)
    P = np.array([[0.5, 0.5, 0, 0], [0, 0.5, 0.5, 0], [0, 0, 0.5, 0.5], [0.5, 0, 0, 0.5]])
    with pytest.raises(NotReversible):
        S.spectral_gap(Kn.Kernel(nu.support, P, nu))


def test_mlsi_trivial_cases():
    assert S.mlsi_adversarial(Kn.glauber(M.product([0.3])), restarts=5).upper == pytest.approx(1.0, abs=1e-9)
    assert S.mlsi_adversarial(two_state(0.5, 0.5), restarts=5).upper == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DegenerateEntropy):
        S.mlsi_adversarial(Kn.glauber(M.dirac([1, -1])))


def test_mlsi_uniform_two_bits_bracket():
    est = S.mlsi_adversarial(Kn.glauber(M.uniform(2)), restarts=50, seed=0)
    # any f certifies the upper estimate; the entropy-conservation floor for
    # products gives 1/2 from below
    assert 0.5 - 1e-9 <= est.upper <= 1.0
    assert est.upper == pytest.approx(0.75, abs=1e-6)
    assert S.entropy_ratio(Kn.glauber(M.uniform(2)), est.witness_f) == pytest.approx(est.ratio, abs=1e-12)


def test_mlsi_deterministic_given_seed():
    K = Kn.glauber(random_measures(22, 1, n_range=(3, 3))[0])
    a = S.mlsi_adversarial(K, restarts=8, seed=4)
    b = S.mlsi_adversarial(K, restarts=8, seed=4, threads=1)
    assert a.upper == b.upper and np.array_equal(a.witness_f, b.witness_f)


def test_localization_gap_identity_examples():
    nu = M.uniform(3)
    const = np.ones(8)
    checks = S.verify_localization_gap_identity(nu, 1, [const])
    assert checks[0].lhs == pytest.approx(0.0, abs=1e-14) and checks[0].rhs == pytest.approx(0.0, abs=1e-14)
    x1 = M.cube(3)[:, 0]
    c = S.verify_localization_gap_identity(nu, 2, [x1])[0]
    assert c.lhs == pytest.approx(1 / 3, abs=1e-12) and c.rhs == pytest.approx(1 / 3, abs=1e-12)


def test_localization_gap_identity_random():
    rng = np.random.default_rng(23)
    for nu in random_measures(23, 10, sparsity=0.2):
        tau = int(rng.integers(0, nu.f + 1))
        checks = S.verify_localization_gap_identity(nu, tau, rng.standard_normal((10, 1 << nu.n)))
        assert all(c.passed for c in checks)


def test_entropy_step_inequality_examples():
    nu = M.uniform(2)
    c = S.verify_entropy_step_inequality(nu, 1, [np.full(4, 3.0)])[0]
    assert abs(c.lhs) <= 1e-14 and abs(c.rhs) <= 1e-14
    ind = np.zeros(4)
    ind[0] = 1.0
    c = S.verify_entropy_step_inequality(nu, 1, [ind])[0]
    assert c.passed and c.lhs < c.rhs - 1e-3


def test_entropy_step_inequality_random():
    rng = np.random.default_rng(24)
    for nu in random_measures(24, 10, sparsity=0.2):
        tau = int(rng.integers(0, nu.f + 1))
        fs = np.exp(2 * rng.standard_normal((10, 1 << nu.n)))
        assert all(c.passed for c in S.verify_entropy_step_inequality(nu, tau, fs))


def test_expected_post_localization():
    rng = np.random.default_rng(25)
    nu = random_measures(25, 1, n_range=(4, 4))[0]
    phi = rng.standard_normal(16)
    f = np.exp(rng.standard_normal(16))
    assert S.expected_post_localization(nu, 0, phi, "var") == pytest.approx(M.variance(nu, phi), abs=1e-12)
    assert S.expected_post_localization(nu, 0, f, "ent") == pytest.approx(M.entropy(nu, f), abs=1e-12)
    assert S.expected_post_localization(nu, nu.f, phi, "var") == pytest.approx(0.0, abs=1e-12)
    s = M.cube(3).sum(axis=1)
    assert S.expected_post_localization(M.uniform(3), 1, s, "var") == pytest.approx(2.0, abs=1e-12)


def test_tv_mixing_time_cases():
    K = Kn.glauber(random_measures(26, 1, n_range=(3, 3))[0])
    assert S.tv_mixing_time(K, mu0=K.stationary) == 0
    a, b = 0.3, 0.1
    K2 = two_state(a, b)
    start = np.array([[1.0, 0.0]])
    tv0 = 0.5 * np.abs(start[0] - K2.pi).sum()
    expected = math.ceil(math.log(tv0 / 0.05) / -math.log(abs(1 - a - b)))
    assert S.tv_mixing_time(K2, mu0=start, eps=0.05) == expected


def test_tv_mixing_time_matrix_power_oracle():
    K = Kn.glauber(M.uniform(3))
    t = 0
    Pt = np.eye(K.size)
    while np.max(0.5 * np.abs(Pt - K.pi[None, :]).sum(axis=1)) > 0.25:
        Pt = Pt @ K.P
        t += 1
    assert S.tv_mixing_time(K, eps=0.25) == t


def test_fact_mixing_consistency_reports_ratio():
    c = S.fact_mixing_consistency(Kn.glauber(M.uniform(3)))
    assert c.lhs > 0 and math.isfinite(c.rhs)

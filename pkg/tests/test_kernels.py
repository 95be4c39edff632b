import itertools
import math

import numpy as np
import pytest
from scipy.special import expit, roots_hermite

from locmix import kernels as Kn
from locmix import localization as L
from locmix import measures as M
from locmix import spectra as S
from locmix.errors import SubsetTooLarge

from conftest import random_measures


def test_glauber_single_spin_is_rank_one():
    nu = M.product([0.4])
    K = Kn.glauber(nu)
    assert np.allclose(K.P, np.tile(K.pi, (2, 1)), atol=1e-15)
    assert S.spectral_gap(K).gap == pytest.approx(1.0, abs=1e-12)


def test_glauber_uniform_two_bits():
    K = Kn.glauber(M.uniform(2))
    assert np.allclose(np.diag(K.P), 0.5)
    for r, x in enumerate(K.points):
        for i in range(2):
            y = x.copy()
            y[i] = -y[i]
            c = int(np.flatnonzero(K.support == M.config_index(y))[0])
            assert K.P[r, c] == pytest.approx(0.25, abs=1e-15)


def test_invariants_on_random_kernels():
    for nu in random_measures(11, 10, sparsity=0.25):
        kernels = [Kn.glauber(nu)] + [Kn.l_glauber(nu, ell) for ell in range(1, nu.f + 1)]
        for K in kernels:
            assert all(c.passed for c in K.invariant_checks(db_tol=1e-12)), K.name


def test_l_glauber_full_resample_and_ell_one():
    for nu in random_measures(12, 5):
        K = Kn.l_glauber(nu, nu.f)
        assert np.allclose(K.P, np.tile(K.pi, (K.size, 1)), atol=1e-14)
        assert S.spectral_gap(K).gap == pytest.approx(1.0, abs=1e-10)
        assert np.max(np.abs(Kn.l_glauber(nu, 1).P - Kn.glauber(nu).P)) <= 1e-12
    with pytest.raises(SubsetTooLarge):
        Kn.l_glauber(M.uniform(3), 4)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_l_glauber_uniform_gap(n):
    for ell in range(1, n + 1):
        assert S.spectral_gap(Kn.l_glauber(M.uniform(n), ell)).gap == pytest.approx(ell / n, abs=1e-12)


def test_coordinate_localization_kernel_special_cases():
    for nu in random_measures(13, 8, n_range=(2, 5), sparsity=0.2):
        K0 = Kn.kernel_from_coordinate_localization(nu, 0)
        assert np.allclose(K0.P, np.tile(K0.pi, (K0.size, 1)), atol=1e-14)
        G = Kn.glauber(nu)
        assert np.max(np.abs(Kn.kernel_from_coordinate_localization(nu, nu.f - 1).P - G.P)) <= 1e-12
        for ell in range(1, nu.f + 1):
            A = Kn.kernel_from_coordinate_localization(nu, nu.f - ell).P
            assert np.max(np.abs(A - Kn.l_glauber(nu, ell).P)) <= 1e-12


def test_permutation_equivariance():
    nu = random_measures(14, 1, n_range=(4, 4))[0]
    perm = [2, 0, 3, 1]
    a = S.spectral_gap(Kn.glauber(nu)).gap
    b = S.spectral_gap(Kn.glauber(Kn.permute_coordinates(nu, perm))).gap
    assert a == pytest.approx(b, abs=1e-12)


def test_cube_rgd_single_spin_quadrature_oracle():
    eta = 0.7
    K = Kn.cube_rgd(M.uniform(1), eta, mc_samples=200_000, seed=3)
    t, w = roots_hermite(80)
    g = math.sqrt(2) * t
    oracle = float(w @ expit(2 * (1 + math.sqrt(eta) * g) / eta)) / math.sqrt(math.pi)
    r = int(np.flatnonzero(K.support == 1)[0])
    assert abs(K.P[r, r] - oracle) <= 3 * K.stderr[r, r]
    assert Kn.rgd_reversibility_check(K).passed


def test_cube_rgd_large_eta_rows_approach_nu():
    nu = random_measures(15, 1, n_range=(2, 2))[0]
    K = Kn.cube_rgd(nu, 1e4, mc_samples=20_000, seed=1)
    assert np.max(np.abs(K.P - K.pi[None, :])) < 0.02


def test_cube_rgd_matches_stochastic_localization():
    nu = random_measures(16, 1, n_range=(2, 2))[0]
    eta = 1.0
    ref = Kn.cube_rgd(nu, eta, mc_samples=100_000, seed=5)
    batch = L.sl_simulate_batch(nu, np.eye(2), dt=1e-3, T=1 / eta, n_paths=4000, seed=6, scheme="milstein")
    est = L.estimate_kernel_from_states(nu, batch.final(), batch.index)
    assert L.kernel_comparison_check(est, ref, n_sigma=4.0, extra_se=ref.stderr).passed


def test_kernel_csv_header():
    text = Kn.glauber(M.uniform(2)).to_csv()
    assert text.splitlines()[0] == "from\\to,--,+-,-+,++"

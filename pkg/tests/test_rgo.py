import math

import numpy as np
import pytest

from locmix import rgo as R
from locmix import spectra as S
from locmix.errors import InputError, NotStronglyConvex, TailMass


def quartic(x):
    return 0.5 * x * x + x ** 4 / 12


@pytest.mark.parametrize("mu,eta", [(1.0, 0.25), (1.0, 1.0), (1.0, 4.0), (2.0, 0.5)])
def test_gaussian_gap_matches_bound(mu, eta):
    c = R.gaussian_gap_check(mu, eta)
    assert c.passed, (c.lhs, c.rhs)


def test_rgo_bound_values():
    assert R.rgo_bound(1.0, 1.0) == 0.5
    assert R.rgo_bound(2.0, 0.5) == pytest.approx(0.5)


def test_small_step_kernel_is_lazy():
    K = R.rgd_kernel(R.gaussian(1.0), 1e-4)
    assert K.row_residual <= R.ROW_TOL
    assert K.nodes > 64
    assert np.min(np.diag(K.P)) > 0.99


def test_kernel_row_sums_and_detailed_balance():
    K = R.rgd_kernel(R.discretize(quartic, 1.0), 1.0)
    assert K.row_sum_error() < 1e-12
    assert K.detailed_balance_error() < R.DB_TOL
    assert np.all(K.P >= 0)


def test_perturbed_gaussian_check_passes_with_refinement_slack():
    gap, delta = R.refinement_delta(quartic, 1.0, 1.0)
    assert gap >= R.rgo_bound(1.0, 1.0)
    checks = R.rgo_mlsi_check(R.discretize(quartic, 1.0), 1.0, slack=10 * delta, restarts=5)
    assert all(c.passed for c in checks), [(c.check, c.lhs, c.rhs) for c in checks if not c.passed]


def test_kink_potential_discretizes():
    gm = R.discretize(lambda x: 0.5 * x * x + np.abs(x), 1.0)
    assert gm.weights.sum() == pytest.approx(1.0)
    assert abs(gm.mode) < 1e-6
    gap = S.spectral_gap(R.rgd_kernel(gm, 1.0)).gap
    assert gap >= R.rgo_bound(1.0, 1.0) - 1e-3


def test_discretize_errors():
    with pytest.raises(NotStronglyConvex):
        R.discretize(np.cos, 1.0)
    with pytest.raises(NotStronglyConvex):
        R.discretize(quartic, 0.0)
    with pytest.raises(TailMass):
        R.discretize(quartic, 1.0, interval=(-1.0, 1.0))
    with pytest.raises(InputError):
        R.discretize(quartic, 1.0, m=10)
    with pytest.raises(InputError):
        R.discretize(quartic, 1.0, interval=(1.0, -1.0))
    with pytest.raises(InputError):
        R.rgd_kernel(R.gaussian(1.0), 0.0)


def test_kl_decay_contracts():
    gm = R.gaussian(1.0)
    K = R.rgd_kernel(gm, 1.0)
    b = R.rgo_bound(1.0, 1.0)
    for rho0 in R.warm_starts(gm):
        kl = R.kl_decay(K, rho0, 30)
        assert kl[0] > 0
        assert np.all(np.diff(kl) <= 1e-14)
        assert np.all(kl <= kl[0] * (1 - b) ** np.arange(31) * (1 + 1e-3) + 1e-14)


def test_kernel_csv_round_trip():
    K = R.rgd_kernel(R.gaussian(1.0, 64), 1.0)
    rows = K.to_csv().strip().split("\n")
    assert len(rows) == 65
    P = np.array([[float(v) for v in r.split(",")[1:]] for r in rows[1:]])
    assert np.array_equal(P, K.P)

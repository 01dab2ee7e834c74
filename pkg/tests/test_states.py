import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aiphase.states import (GaussianState, covariance_at, max_width, trap_ground_state,
                            two_time_moment)


def test_trap_ground_state_widths_saturate_uncertainty():
    s = trap_ground_state([2.0, 3.0, 4.0], mass=1.0, hbar=1.0)
    assert np.diag(s.sigma_rr) == pytest.approx([1 / 4, 1 / 6, 1 / 8])
    prod = np.diag(s.sigma_rr) * np.diag(s.sigma_pp)
    assert prod == pytest.approx([0.25] * 3)
    assert not np.any(s.sigma_rp)


def test_scalar_frequency_is_isotropic():
    s = trap_ground_state(5.0, mass=2.0, hbar=1.0)
    assert np.diag(s.sigma_rr) == pytest.approx([0.05] * 3)


@pytest.mark.parametrize("omega", [[1.0, 2.0], [1.0, -1.0, 1.0], 0.0])
def test_bad_trap_frequencies(omega):
    with pytest.raises(ValueError):
        trap_ground_state(omega, mass=1.0, hbar=1.0)


def test_rejects_uncertainty_violation_and_indefinite_covariance():
    with pytest.raises(ValueError, match="uncertainty"):
        GaussianState(np.zeros(3), np.zeros(3), np.diag([1.0, 1, 1, 0.1, 1, 1]), 1.0, 1.0)
    cov = np.eye(6)
    cov[0, 3] = cov[3, 0] = 2.0
    with pytest.raises(ValueError, match="semidefinite"):
        GaussianState(np.zeros(3), np.zeros(3), cov, 1.0, 1.0)
    with pytest.raises(ValueError, match="symmetric"):
        bad = np.eye(6)
        bad[0, 1] = 0.5
        GaussianState(np.zeros(3), np.zeros(3), bad, 1.0, 1.0)


def test_free_spreading():
    s = trap_ground_state(1.0, mass=1.0, hbar=1.0)
    # sigma^2(t) = sigma0^2 (1 + (w t)^2) for the ground state
    assert covariance_at(s, 3.0)[2, 2] == pytest.approx(0.5 * (1 + 9))
    assert max_width(s, 3.0) == pytest.approx(np.sqrt(5.0))
    assert covariance_at(s, np.array([0.0, 1.0])).shape == (2, 3, 3)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0, 5), tp=st.floats(0, 5), c=st.floats(-0.4, 0.4))
def test_two_time_moment_reduces_to_covariance(t, tp, c):
    rp = np.diag([c, 0.0, -c])
    s = GaussianState.from_blocks(np.zeros(3), np.zeros(3), np.eye(3), rp, np.eye(3), 1.0, 1.0)
    G, comm = two_time_moment(s, t, t)
    assert np.allclose(G, covariance_at(s, t))
    assert comm == 0.0
    G1, c1 = two_time_moment(s, t, tp)
    G2, c2 = two_time_moment(s, tp, t)
    assert np.allclose(G1, G2.T)
    assert c1 == pytest.approx(-c2)
    assert c1 == pytest.approx((tp - t) / 2)


def test_widened_preserves_uncertainty_product():
    s = trap_ground_state([1.0, 2.0, 3.0], mass=1.0, hbar=1.0)
    w = s.widened(10.0)
    assert np.diag(w.sigma_rr) == pytest.approx(100 * np.diag(s.sigma_rr))
    assert np.diag(w.sigma_rr) * np.diag(w.sigma_pp) == pytest.approx([0.25] * 3)
    assert np.array_equal(w.mean_r, s.mean_r)

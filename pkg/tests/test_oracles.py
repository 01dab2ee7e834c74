import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aiphase.core import Pulse, PulseSequence, build_mach_zehnder, phi0
from aiphase.engine import EngineOptions, phase_total
from aiphase.oracles import (GridOptions, OracleError, Tolerances, classical_oracle,
                             dump_wavefunction, gaussian_wavefunction, quantum_oracle_1d,
                             verify_engine, wrap_phase)
from aiphase.potentials import ZeroPotential, polynomial_potential
from aiphase.states import trap_ground_state

DESK = dict(mass=1.0, hbar=1.0)
SMALL = GridOptions(n_points=2**12, steps_per_segment=100, check_convergence=False)

pytestmark = pytest.mark.filterwarnings("ignore:validity numbers near threshold")


def cubic_z(lam):
    c = np.zeros((3, 3, 3))
    c[2, 2, 2] = 6 * lam
    return polynomial_potential({"cubic": c})


def desk_state(z0=0.0, omega=1.0):
    return trap_ground_state(omega, mass=1.0, hbar=1.0, mean_r=(0, 0, z0))


@settings(max_examples=20, deadline=None)
@given(T=st.floats(0.2, 2.0), g=st.floats(0.0, 5.0), z0=st.floats(-3, 3))
def test_classical_oracle_free_fall_reproduces_unperturbed_phase(T, g, z0):
    seq = build_mach_zehnder(T, 10.0, g=g, r0=(0, 0, z0), **DESK)
    res = classical_oracle(seq, ZeroPotential(), steps_per_segment=20)
    assert res.phase == pytest.approx(phi0(seq), rel=1e-12, abs=1e-12)
    assert res.diagnostics["error_estimate"] < 1e-12 * max(1.0, abs(res.phase))


def test_classical_oracle_cubic_matches_engine_point_particle():
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, r0=(0, 0, -5.0), **DESK)
    pot = cubic_z(1e-6)
    b = phase_total(seq, pot, None)
    res = classical_oracle(seq, pot, steps_per_segment=1000)
    resid = abs(res.phase - b.total)
    # the neglected third order is of size eps^2 |phi1|
    assert resid < 1e-3 * abs(b.phi1_classical)
    assert abs(res.phase - (b.phi0 + b.phi1_classical)) > resid


def test_classical_oracle_separation_phase_sign_on_open_sequence():
    kv = np.array([0, 0, 10.0])
    z = np.zeros(3)
    seq = PulseSequence(0.0, 2.1, (Pulse(0.0, kv, z), Pulse(1.0, -kv, kv), Pulse(2.1, z, -kv)),
                        mass=1.0, hbar=1.0)
    res = classical_oracle(seq, ZeroPotential(), steps_per_segment=50)
    sep = res.separation
    # the lower branch keeps rising 0.1 longer and ends one unit above the upper one
    assert sep["delta_r"][2] == pytest.approx(-1.0, rel=1e-12)
    assert sep["phi_s"] == pytest.approx(-np.dot(sep["p_bar"], sep["delta_r"]), rel=1e-12)
    q = quantum_oracle_1d(seq, ZeroPotential(), desk_state(), SMALL)
    assert wrap_phase(q.phase - res.phase) == pytest.approx(0.0, abs=1e-6)


def test_quantum_without_pulses_is_trivial():
    seq = PulseSequence(0.0, 1.0, (), mass=1.0, hbar=1.0)
    q = quantum_oracle_1d(seq, cubic_z(1e-3), desk_state(), SMALL)
    assert q.contrast == pytest.approx(1.0, abs=1e-12)
    assert q.phase == pytest.approx(0.0, abs=1e-12)


def test_quantum_free_mach_zehnder():
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, **DESK)
    q = quantum_oracle_1d(seq, ZeroPotential(), desk_state(), SMALL)
    assert wrap_phase(q.phase - phi0(seq)) == pytest.approx(0.0, abs=1e-6)
    assert q.contrast == pytest.approx(1.0, abs=1e-9)
    assert q.diagnostics["norm_deviation"] < 1e-10
    assert q.diagnostics["edge_probability"] < 1e-8


def test_quantum_and_classical_agree_for_quadratic_potential():
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, r0=(0, 0, -1.0), **DESK)
    pot = polynomial_potential({"quadratic": np.diag([0, 0, 1e-2])})
    q = quantum_oracle_1d(seq, pot, desk_state(-1.0), GridOptions(n_points=2**12,
                                                                 steps_per_segment=400,
                                                                 check_convergence=False))
    c = classical_oracle(seq, pot, steps_per_segment=400)
    assert wrap_phase(q.phase - c.phase) == pytest.approx(0.0, abs=1e-6)


def test_coarse_grid_and_edge_leakage_are_reported():
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, **DESK)
    with pytest.raises(OracleError, match="coarse"):
        quantum_oracle_1d(seq, ZeroPotential(), desk_state(), GridOptions(n_points=64))
    with pytest.raises(OracleError, match="edge"):
        quantum_oracle_1d(seq, ZeroPotential(), desk_state(),
                          GridOptions(n_points=2**12, steps_per_segment=50, padding=0.5,
                                      check_convergence=False))


def test_gaussian_wavefunction_requires_pure_marginal(tmp_path):
    z = np.linspace(-5, 5, 101)
    psi = gaussian_wavefunction(desk_state(), z)
    assert np.argmax(np.abs(psi)) == 50
    mixed = desk_state().widened(1.0)
    object.__setattr__(mixed, "cov", mixed.cov * 2)
    with pytest.raises(ValueError, match="pure"):
        gaussian_wavefunction(mixed, z)
    dump_wavefunction(tmp_path / "psi.txt", z, psi)
    back = np.loadtxt(tmp_path / "psi.txt")
    assert back.shape == (101, 3)
    assert np.allclose(back[:, 1] + 1j * back[:, 2], psi)


def test_verification_table_flags_disagreement():
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, r0=(0, 0, -5.0), **DESK)
    tol = Tolerances(phase_rel=1e-12, classical_steps_per_segment=200)
    table = verify_engine(seq, cubic_z(1e-4), desk_state(-5.0), tol, quantum=False)
    assert len(table.rows) == 1 and not table.passed
    assert "FAIL" in table.format()
    loose = verify_engine(seq, cubic_z(1e-4), desk_state(-5.0),
                          Tolerances(phase_rel=1e-3, classical_steps_per_segment=200), quantum=False)
    assert loose.passed
    missing = verify_engine(seq, cubic_z(1e-4), None, tol, classical=False)
    assert missing.errors and not missing.passed


def test_engine_and_oracles_track_each_other_over_strength():
    """Residuals shrink together with the perturbation strength."""
    seq = build_mach_zehnder(1.0, 10.0, g=0.0, r0=(0, 0, -5.0), **DESK)
    state = desk_state(-5.0, omega=4.0)
    opts = GridOptions(n_points=2**13, steps_per_segment=400, check_convergence=False)
    eng, qu = [], []
    for lam in np.geomspace(1e-6, 1e-4, 4):
        b = phase_total(seq, cubic_z(lam), state, EngineOptions(allow_invalid=True))
        q = quantum_oracle_1d(seq, cubic_z(lam), state, opts)
        eng.append(b.total - b.phi0)
        qu.append(wrap_phase(q.phase - b.phi0))
    assert np.corrcoef(eng, qu)[0, 1] > 0.99
    assert np.allclose(qu, eng, rtol=1e-3)

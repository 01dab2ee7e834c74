import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aiphase.acceptance import column_report, scale_columns
from aiphase.core import build_mach_zehnder, trajectories
from aiphase.potentials import FunctionPotential, ZeroPotential, polynomial_potential
from aiphase.states import trap_ground_state
from aiphase.validity import Scales, probe_scales, report_from_scales, validity_report

DESK = dict(mass=1.0, hbar=1.0)


def z_extent(seq):
    tr = trajectories(seq)
    t = np.linspace(seq.t_i, seq.t_d, 2001)
    z = np.concatenate([tr[b].position(t)[:, 2] for b in tr])
    return z.max() - z.min()


def test_sinusoidal_potential_gives_wavelength_scale():
    kappa, A = 40.0, 1e-3
    seq = build_mach_zehnder(1.0, 10.0, g=2.0, **DESK)  # falls ~4 length units
    pot = FunctionPotential(lambda r, t, b: A * np.sin(kappa * r[..., 2]), length_scale=1 / kappa,
                            static=True)
    s = probe_scales(seq, pot, n_samples=400)
    assert s.deltaV_extremal == pytest.approx(2 * A, rel=1e-6)
    assert s.xi == pytest.approx(2 / kappa, rel=1e-4)


def test_linear_potential_scale_is_the_covered_extent():
    c = 0.3
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, **DESK)
    s = probe_scales(seq, polynomial_potential({"linear": [0, 0, c]}))
    ext = z_extent(seq)
    assert s.deltaV_extremal == pytest.approx(c * ext, rel=1e-6)
    assert s.xi == pytest.approx(ext, rel=1e-6)
    assert s.grad_max == pytest.approx(c)


def test_constant_potential_has_unbounded_scale():
    seq = build_mach_zehnder(1.0, 10.0, **DESK)
    for pot in (ZeroPotential(), polynomial_potential({"constant": 2.0})):
        s = probe_scales(seq, pot)
        assert s.xi == float("inf") and s.deltaV_extremal == 0.0
        rep = validity_report(s, seq)
        assert rep.epsilon == 0.0 and rep.d_over_xi == 0.0
        assert not rep.warned
        assert rep.to_dict()["xi"] is None


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.1, 10.0))
def test_scales_are_linear_in_strength(s):
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, r0=(0, 0, -5.0), **DESK)
    c = np.zeros((3, 3, 3))
    c[2, 2, 2] = 6e-4
    pot = polynomial_potential({"cubic": c})
    a, b = probe_scales(seq, pot, 200), probe_scales(seq, s * pot, 200)
    assert b.deltaV_extremal == pytest.approx(s * a.deltaV_extremal, rel=1e-9)
    assert b.deltaV_branch == pytest.approx(s * a.deltaV_branch, rel=1e-9)
    assert b.xi == pytest.approx(a.xi, rel=1e-9)
    ra, rb = validity_report(a, seq), validity_report(b, seq)
    assert rb.epsilon == pytest.approx(s * ra.epsilon, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(q=st.floats(-1, 1), c=st.floats(-1, 1), z0=st.floats(-3, 3))
def test_branch_difference_bounded_by_extremal_range(q, c, z0):
    seq = build_mach_zehnder(1.0, 10.0, g=1.0, r0=(0, 0, z0), **DESK)
    cub = np.zeros((3, 3, 3))
    cub[2, 2, 2] = c
    pot = polynomial_potential({"quadratic": np.diag([0, 0, q]), "cubic": cub})
    s = probe_scales(seq, pot, 200)
    assert s.deltaV_branch <= s.deltaV_extremal * (1 + 1e-9) + 1e-15


def test_report_formulas_and_flags():
    s = Scales(deltaV_extremal=2.0, deltaV_branch=0.5, xi=4.0, grad_max=0.5)
    rep = report_from_scales(s, T=3.0, mass=1.5, hbar=0.5, d=0.2, warn=0.05, refuse=0.5)
    assert rep.epsilon == pytest.approx(2.0 * 9 / (16 * 1.5))
    assert rep.eta == pytest.approx(0.5 * 3 / 0.5)
    assert rep.d_over_xi == pytest.approx(0.05)
    assert rep.eta_d_over_xi == pytest.approx(3 * 0.05)
    assert rep.flags == {"epsilon": "refuse", "d_over_xi": "warn", "eta_d_over_xi": "warn"}
    assert rep.refused and rep.warned
    with pytest.raises(ValueError):
        report_from_scales(s, T=-1.0, mass=1.0, hbar=1.0)


def test_wave_packet_size_defaults_to_width_at_detection():
    seq = build_mach_zehnder(1.0, 10.0, **DESK)
    state = trap_ground_state(1.0, mass=1.0, hbar=1.0)
    s = Scales(1.0, 1.0, 10.0, 0.1)
    rep = validity_report(s, seq, state)
    assert rep.d == pytest.approx(np.sqrt(0.5 * (1 + 4)))
    assert validity_report(s, seq).d == 0.0
    assert validity_report(s, seq, state, d=0.3).d == 0.3


def test_scale_table_wave_packet_ratio_is_exact():
    for col in scale_columns():
        rep = column_report(col)
        assert rep.d_over_xi == pytest.approx(col["d_m"] / col["xi_m"], rel=1e-12)
        if col["exact_d_over_xi"]:
            assert rep.d_over_xi == pytest.approx(col["expected"]["d_over_xi"], rel=1e-12)

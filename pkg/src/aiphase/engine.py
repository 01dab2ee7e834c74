"""Perturbative phase and contrast from loop integrals over the time contour.

First order: the potential and its Hessian, evaluated on the unperturbed
branches, integrated around the loop.  Second order: the expectation value of
the nested commutator term of the Magnus series with the potential expanded to
the orders that survive for a Gaussian packet.  Contrast: the variance of the
gradient (leading operator-valued) part of the first-order phase operator.

All corrections are computed separately from the unperturbed phase and only
added at the end, since the two typically differ by many orders of magnitude.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .core import (PulseSequence, QuadOptions, contour_integrate, contour_integrate_nested,
                   phi0 as unperturbed_phase, require_closed, trajectories)
from .potentials import Potential
from .states import GaussianState, covariance_at, two_time_moment
from .validity import (DEFAULT_REFUSE, DEFAULT_WARN, ValidityError, ValidityReport,
                       probe_scales, validity_report)

MAX_MAGNUS_ORDER = 2


@dataclass(frozen=True)
class EngineOptions:
    orders: int = 2
    quad: QuadOptions = field(default_factory=QuadOptions)
    n_samples: int = 1000
    warn: float = DEFAULT_WARN
    refuse: float = DEFAULT_REFUSE
    allow_invalid: bool = False
    d: float | None = None  # overrides the wave-packet size used for validity


@dataclass(frozen=True)
class PhaseBreakdown:
    phi0: float
    phi1_classical: float
    phi1_wavepacket: float
    phi2: float
    contrast: float
    validity: ValidityReport | None = None

    @property
    def correction(self) -> float:
        """Everything beyond the unperturbed phase."""
        return self.phi1_classical + self.phi1_wavepacket + self.phi2

    @property
    def total(self) -> float:
        return self.phi0 + self.correction

    def to_dict(self) -> dict:
        out = {
            "phi0_rad": self.phi0,
            "phi1_classical_rad": self.phi1_classical,
            "phi1_wavepacket_rad": self.phi1_wavepacket,
            "phi2_rad": self.phi2,
            "correction_rad": self.correction,
            "total_rad": self.total,
            "contrast": self.contrast,
        }
        return out


class _OnContour:
    """Derivative tensors along the unperturbed branches for arbitrary time arrays."""

    def __init__(self, seq: PulseSequence, pot: Potential):
        self.tr = trajectories(seq)
        self.pot = pot

    def __call__(self, branch, t, order):
        t = np.asarray(t, dtype=float)
        return self.pot.derivatives(self.tr[branch].position(t), t, branch, order)


def phase_first_order(seq: PulseSequence, pot: Potential, state: GaussianState | None = None,
                      quad: QuadOptions | None = None) -> tuple[float, float]:
    """(classical, wave-packet) first-order phase.

    classical  = -(1/hbar) oint V dt
    wavepacket = -(1/2hbar) oint V_ij <rbar_i rbar_j> dt

    ``state=None`` is the point-particle limit: the wave-packet term vanishes.
    """
    require_closed(seq)
    on = _OnContour(seq, pot)
    hbar = seq.hbar
    cl = -contour_integrate(lambda b, t: on(b, t, 0)[0], seq, quad) / hbar
    if state is None:
        return float(cl), 0.0

    def wp(b, t):
        H = on(b, t, 2)[2]
        return np.einsum("...ij,...ij->...", H, covariance_at(state, t - seq.t_i))

    return float(cl), float(-contour_integrate(wp, seq, quad) / (2 * hbar))


def phase_second_order(seq: PulseSequence, pot: Potential, state: GaussianState | None = None,
                       quad: QuadOptions | None = None) -> float:
    """Expectation value of the second Magnus term.

    -(1/(2 hbar m)) oint dt oint^t dt' (t'-t) { V_i V'_i
        + 1/2 V'_i V_ijk <rbar_j rbar_k>          (both operators at t)
        + 1/2 V_i V'_ijk <rbar'_j rbar'_k>        (both operators at t')
        + V_ik V'_kj Re<rbar_i rbar'_j> }

    Terms linear in rbar drop out because its mean vanishes.
    """
    require_closed(seq)
    on = _OnContour(seq, pot)
    order = 3 if state is not None else 1
    t_i = seq.t_i

    def kernel(b, t, bp, tp):
        d = on(b, t, order)
        dp = on(bp, tp, order)
        val = np.einsum("...i,...i->...", d[1], dp[1])
        if state is not None:
            G_t = covariance_at(state, t - t_i)
            G_tp = covariance_at(state, tp - t_i)
            G_mix, _ = two_time_moment(state, t - t_i, tp - t_i)
            val = val + 0.5 * np.einsum("...i,...ijk,...jk->...", dp[1], d[3], G_t)
            val = val + 0.5 * np.einsum("...i,...ijk,...jk->...", d[1], dp[3], G_tp)
            val = val + np.einsum("...ik,...kj,...ij->...", d[2], dp[2], G_mix)
        return (tp - t) * val

    nested = contour_integrate_nested(kernel, seq, quad)
    return float(-nested / (2 * seq.hbar * seq.mass))


def phase_variance(seq: PulseSequence, pot: Potential, state: GaussianState | None,
                   quad: QuadOptions | None = None) -> float:
    """Variance of -(1/hbar) oint V_i rbar_i dt over the initial state.

    rbar(t) = dr + dp (t - t_i)/m, so the operator is a.dr + b.dp with
    a = oint V_i dt and b = oint V_i (t - t_i) dt / m, and the double loop
    integral of V_i V'_j G_ij(t, t') collapses to a quadratic form in the
    6x6 covariance.
    """
    if state is None:
        return 0.0
    on = _OnContour(seq, pot)

    def f(b, t):
        g = on(b, t, 1)[1]
        tau = (t - seq.t_i)[:, None] / seq.mass
        return np.concatenate([g, g * tau], axis=-1)

    u = contour_integrate(f, seq, quad)
    return float(u @ state.cov @ u) / seq.hbar**2


def contrast(seq: PulseSequence, pot: Potential, state: GaussianState | None = None,
             quad: QuadOptions | None = None) -> float:
    """C = exp(-Var/2) from the second cumulant of the gradient term."""
    require_closed(seq)
    return float(np.exp(-0.5 * phase_variance(seq, pot, state, quad)))


def check_validity(seq: PulseSequence, pot: Potential, state: GaussianState | None,
                   options: EngineOptions) -> ValidityReport:
    scales = probe_scales(seq, pot, options.n_samples)
    return validity_report(scales, seq, state, d=options.d, warn=options.warn,
                           refuse=options.refuse)


def phase_total(seq: PulseSequence, pot: Potential, state: GaussianState | None = None,
                options: EngineOptions | None = None) -> PhaseBreakdown:
    """Assemble phi0, the requested perturbative orders, contrast and validity."""
    options = options or EngineOptions()
    if options.orders > MAX_MAGNUS_ORDER:
        raise NotImplementedError(
            f"Magnus order {options.orders} is out of scope; at most {MAX_MAGNUS_ORDER} is implemented")
    if options.orders < 0:
        raise ValueError("orders must be non-negative")
    require_closed(seq)
    report = check_validity(seq, pot, state, options)
    p0 = unperturbed_phase(seq)
    cl = wp = p2 = 0.0
    if options.orders >= 1:
        cl, wp = phase_first_order(seq, pot, state, options.quad)
    if options.orders >= 2:
        p2 = phase_second_order(seq, pot, state, options.quad)
    C = contrast(seq, pot, state, options.quad)
    report = _with_wavepacket(report, abs(wp))
    if report.refused and not options.allow_invalid:
        raise ValidityError(report)
    if report.warned:
        flagged = [k for k, v in report.flags.items() if v != "ok"]
        warnings.warn(f"validity numbers near threshold: {', '.join(flagged)}", stacklevel=2)
    return PhaseBreakdown(p0, cl, wp, p2, C, report)


def _with_wavepacket(report: ValidityReport, value: float) -> ValidityReport:
    return replace(report, phi1_wavepacket_abs=value)


class MZCubicReference(NamedTuple):
    f_phi: float
    f_rr: float
    f_rp: float
    f_pp: float
    phase_shift: float  # phi - phi0 for the trap ground state with w_x = w_y = 2 w_z = w


def mz_cubic_reference(T: float, v_r: float, g: float, z_i: float, omega: float, R: float,
                       m: float, hbar: float) -> MZCubicReference:
    """Closed-form loop integrals of z0, z0 t, z0 t^2, z0^3 for the gravimeter.

    Valid for the upper branch kicked first, start at rest at height ``z_i``
    and pulses at 0, T, 2T.  ``phase_shift`` is the lowest-order cubic
    gravity-gradient correction including the wave-packet term.
    """
    f_rr = v_r * T**2
    f_rp = v_r * T**3
    f_pp = 7.0 / 6.0 * v_r * T**4
    f_phi = (31 * g**2 * v_r * T**6 / 20
             - v_r * g * T**4 * (14 * z_i + 9 * v_r * T) / 4
             + v_r * T**2 * (v_r**2 * T**2 + 3 * v_r * T * z_i + 3 * z_i**2))
    shift = -(g / R**2) * (m / hbar * f_phi
                           + v_r * T**2 / omega * (1.5 - 7.0 / 8.0 * (omega * T) ** 2))
    return MZCubicReference(f_phi, f_rr, f_rp, f_pp, shift)

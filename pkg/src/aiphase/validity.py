"""Scale analysis deciding whether the truncated expansion can be trusted.

Sampling the potential along both unperturbed branches yields the extremal
range dV, the largest branch difference deltaV and the variation length xi.
From them come the Magnus suppression factor eps = dV T^2 / (xi^2 m), the
leading phase scale eta = deltaV T / hbar, and the wave-packet ratios d/xi and
eta d/xi.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .core import LOWER, UPPER, PulseSequence, trajectories
from .potentials import Potential
from .states import GaussianState, max_width

DEFAULT_WARN = 1e-2
DEFAULT_REFUSE = 1e-1
GATED = ("epsilon", "d_over_xi", "eta_d_over_xi")


class ValidityError(RuntimeError):
    """Raised when a gated validity number exceeds the refusal threshold."""

    def __init__(self, report: "ValidityReport"):
        bad = [k for k, v in report.flags.items() if v == "refuse"]
        super().__init__(f"perturbative expansion not trustworthy: {', '.join(bad)}")
        self.report = report


@dataclass(frozen=True)
class Scales:
    deltaV_extremal: float
    deltaV_branch: float
    xi: float
    grad_max: float
    # xi^2 max|V_ij| / dV; near 1 when a single length scale describes the potential
    hessian_consistency: float = float("nan")


def _sample_times(seq: PulseSequence, n: int) -> np.ndarray:
    b = seq.breakpoints
    return np.unique(np.concatenate([np.linspace(a, c, n) for a, c in zip(b[:-1], b[1:])]))


def probe_scales(seq: PulseSequence, pot: Potential, n_samples: int = 1000) -> Scales:
    """Estimate dV, deltaV and xi from the potential along the unperturbed branches."""
    tr = trajectories(seq)
    t = _sample_times(seq, n_samples)

    def derivs(branch, tt, order=2):
        tt = np.atleast_1d(np.asarray(tt, dtype=float))
        return pot.derivatives(tr[branch].position(tt), tt, branch, order)

    du, dl = derivs(UPPER, t), derivs(LOWER, t)
    vals = np.concatenate([du[0], dl[0]])
    if not np.all(np.isfinite(vals)):
        raise ValueError("potential is not finite along the trajectories")

    def refine(fun, t_best):
        # one bounded pass between the neighbouring samples
        i = int(np.searchsorted(t, t_best))
        lo, hi = t[max(i - 1, 0)], t[min(i + 1, len(t) - 1)]
        if hi <= lo:
            return fun(t_best)
        res = minimize_scalar(lambda s: -fun(s), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10 * (hi - lo)})
        return max(fun(t_best), -res.fun)

    def branch_gap(s):
        return float(abs(derivs(UPPER, s, 0)[0][0] - derivs(LOWER, s, 0)[0][0]))

    gap = np.abs(du[0] - dl[0])
    dV_branch = refine(branch_gap, t[int(np.argmax(gap))])

    v_max = refine(lambda s: float(max(derivs(UPPER, s, 0)[0][0], derivs(LOWER, s, 0)[0][0])),
                   t[int(np.argmax(np.maximum(du[0], dl[0])))])
    v_min = -refine(lambda s: float(-min(derivs(UPPER, s, 0)[0][0], derivs(LOWER, s, 0)[0][0])),
                    t[int(np.argmin(np.minimum(du[0], dl[0])))])
    dV = max(v_max - v_min, 0.0)

    gnorm = np.maximum(np.linalg.norm(du[1], axis=-1), np.linalg.norm(dl[1], axis=-1))

    def grad_at(s):
        return float(max(np.linalg.norm(derivs(UPPER, s, 1)[1]), np.linalg.norm(derivs(LOWER, s, 1)[1])))

    gmax = refine(grad_at, t[int(np.argmax(gnorm))])
    hmax = float(max(np.max(np.linalg.norm(du[2], axis=(-2, -1), ord=2)),
                     np.max(np.linalg.norm(dl[2], axis=(-2, -1), ord=2))))

    if gmax > 0:
        xi = dV / gmax
    else:
        xi = float("inf")
    ratio = xi**2 * hmax / dV if dV > 0 and np.isfinite(xi) else float("nan")
    return Scales(dV, dV_branch, xi, gmax, ratio)


@dataclass(frozen=True)
class ValidityReport:
    deltaV_extremal: float
    deltaV_branch: float
    xi: float
    T: float
    d: float
    epsilon: float
    eta: float
    d_over_xi: float
    eta_d_over_xi: float
    flags: dict = field(default_factory=dict)
    warn_threshold: float = DEFAULT_WARN
    refuse_threshold: float = DEFAULT_REFUSE
    hessian_consistency: float = float("nan")
    phi1_wavepacket_abs: float | None = None

    @property
    def refused(self) -> bool:
        return any(v == "refuse" for v in self.flags.values())

    @property
    def warned(self) -> bool:
        return any(v != "ok" for v in self.flags.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not np.isfinite(v):
                out[k] = None  # unbounded or undefined
        return out


def _ratio(a: float, b: float) -> float:
    if a == 0:
        return 0.0
    return a / b if b != 0 else float("inf")


def validity_report(scales: Scales, seq: PulseSequence, state: GaussianState | None = None,
                    *, d: float | None = None, T: float | None = None,
                    warn: float = DEFAULT_WARN, refuse: float = DEFAULT_REFUSE) -> ValidityReport:
    """Form the dimensionless validity numbers and flag them against thresholds.

    The wave-packet size ``d`` defaults to the largest single-axis width of
    ``state`` at detection (zero for a point particle).
    """
    T = seq.T if T is None else T
    if d is None:
        d = 0.0 if state is None else max_width(state, seq.t_d - seq.t_i)
    return report_from_scales(scales, T=T, mass=seq.mass, hbar=seq.hbar, d=d,
                              warn=warn, refuse=refuse)


def report_from_scales(scales: Scales, *, T: float, mass: float, hbar: float, d: float = 0.0,
                       warn: float = DEFAULT_WARN, refuse: float = DEFAULT_REFUSE) -> ValidityReport:
    """Validity numbers from already known scales, e.g. estimates taken from the literature."""
    dV, dVb, xi = scales.deltaV_extremal, scales.deltaV_branch, scales.xi
    if any(x < 0 for x in (dV, dVb, xi, d, T)):
        raise ValueError("scale quantities must be non-negative")
    if not (mass > 0 and hbar > 0):
        raise ValueError("mass and hbar must be positive")
    eps = _ratio(dV * T**2, xi**2 * mass) if np.isfinite(xi) else 0.0
    eta = dVb * T / hbar
    d_xi = _ratio(d, xi) if np.isfinite(xi) else 0.0
    eta_d_xi = eta * d_xi
    values = {"epsilon": eps, "d_over_xi": d_xi, "eta_d_over_xi": eta_d_xi}
    flags = {}
    for k in GATED:
        v = values[k]
        flags[k] = "refuse" if v >= refuse else "warn" if v >= warn else "ok"
    return ValidityReport(dV, dVb, xi, T, d, eps, eta, d_xi, eta_d_xi, flags, warn, refuse,
                          scales.hessian_consistency)

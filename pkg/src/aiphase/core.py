"""Interferometer geometry, unperturbed trajectories and contour quadrature.

The unperturbed Hamiltonian is at most quadratic (kinetic energy, a uniform
gravitational field and instantaneous laser kicks), so branch trajectories are
stored exactly as piecewise quadratic polynomials.  Loop integrals run forward
along the upper branch and back along the lower one; both branches share the
same breakpoints, so a loop integral is evaluated as one ordinary integral of
the branch difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

HBAR = 1.054571817e-34  # J s
MASS_RB87 = 1.443160648e-25  # kg

UPPER = "upper"
LOWER = "lower"
BRANCHES = (UPPER, LOWER)


class ClosureError(ValueError):
    """The unperturbed interferometer does not close at detection."""


class EvaluationError(ValueError):
    """A contour integrand returned a non-finite value."""


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape == (1,):
        a = np.array([0.0, 0.0, a[0]])
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(x)}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector component in {a}")
    return a


@dataclass(frozen=True)
class Pulse:
    """Instantaneous laser pulse acting on both branches at ``time``.

    A branch that is not diffracted by this pulse carries the zero vector.
    """

    time: float
    k_upper: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k_lower: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phi_upper: float = 0.0
    phi_lower: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "k_upper", _vec3(self.k_upper))
        object.__setattr__(self, "k_lower", _vec3(self.k_lower))
        for name in ("time", "phi_upper", "phi_lower"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"pulse {name} must be finite")

    def k(self, branch: str) -> np.ndarray:
        return self.k_upper if branch == UPPER else self.k_lower

    def phi(self, branch: str) -> float:
        return self.phi_upper if branch == UPPER else self.phi_lower


@dataclass(frozen=True)
class PulseSequence:
    t_i: float
    t_d: float
    pulses: tuple[Pulse, ...]
    mass: float = MASS_RB87
    g_vec: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    r_mean0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_mean0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hbar: float = HBAR
    T_char: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        for name in ("g_vec", "r_mean0", "v_mean0"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        if not (self.mass > 0 and self.hbar > 0):
            raise ValueError("mass and hbar must be positive")
        if not self.t_d > self.t_i:
            raise ValueError("detection time must follow the initial time")
        times = [p.time for p in self.pulses]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("pulse times must be strictly increasing")
        if times and (times[0] < self.t_i or times[-1] > self.t_d):
            raise ValueError("pulses must lie inside [t_i, t_d]")

    @property
    def T(self) -> float:
        """Characteristic interferometer time, half the total time unless set."""
        if self.T_char is not None:
            return self.T_char
        return 0.5 * (self.t_d - self.t_i)

    @property
    def breakpoints(self) -> np.ndarray:
        """Segment boundaries shared by both branches."""
        pts = [self.t_i] + [p.time for p in self.pulses] + [self.t_d]
        return np.unique(np.asarray(pts, dtype=float))

    def recoil_velocity(self) -> float:
        """Largest single kick velocity hbar|k|/m over all pulses."""
        ks = [np.linalg.norm(p.k(b)) for p in self.pulses for b in BRANCHES]
        return self.hbar * max(ks, default=0.0) / self.mass


def build_mach_zehnder(T: float, k: float, mass: float = MASS_RB87, g: float = 9.81,
                       laser_phases: Sequence[float] = (0.0, 0.0, 0.0), *,
                       t_d: float | None = None, r0=(0.0, 0.0, 0.0),
                       v0=(0.0, 0.0, 0.0), hbar: float = HBAR,
                       axis=(0.0, 0.0, 1.0)) -> PulseSequence:
    """Three-pulse gravimeter with pulses at 0, T, 2T.

    The upper branch absorbs +k at 0 and emits it at T; the lower branch
    absorbs +k at T and emits it at 2T.  Each laser phase enters with the sign
    of the momentum transfer on the branch it acts on, so the phases combine
    as phi1 - 2 phi2 + phi3.
    """
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    n = _vec3(axis)
    n = n / np.linalg.norm(n)
    kv = k * n
    p1, p2, p3 = laser_phases
    zero = np.zeros(3)
    pulses = (
        Pulse(0.0, k_upper=kv, k_lower=zero, phi_upper=p1, phi_lower=0.0),
        Pulse(T, k_upper=-kv, k_lower=kv, phi_upper=-p2, phi_lower=p2),
        Pulse(2 * T, k_upper=zero, k_lower=-kv, phi_upper=0.0, phi_lower=-p3),
    )
    return PulseSequence(
        t_i=0.0, t_d=2 * T if t_d is None else t_d, pulses=pulses, mass=mass,
        g_vec=-g * n, r_mean0=np.asarray(r0, float), v_mean0=np.asarray(v0, float),
        hbar=hbar,
    )


@dataclass(frozen=True)
class BranchTrajectory:
    """Piecewise quadratic path r(t) = r_a + v_a (t - t_a) + a (t - t_a)^2 / 2.

    ``starts`` holds r_a and ``velocities`` v_a (just after any kick at t_a)
    for each segment ``[breaks[j], breaks[j+1]]``.
    """

    branch: str
    breaks: np.ndarray
    starts: np.ndarray
    velocities: np.ndarray
    accel: np.ndarray
    final_velocity: np.ndarray

    def _segment(self, t: np.ndarray) -> np.ndarray:
        j = np.searchsorted(self.breaks, t, side="right") - 1
        return np.clip(j, 0, len(self.breaks) - 2)

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        j = self._segment(t)
        dt = (t - self.breaks[j])[..., None]
        return self.starts[j] + self.velocities[j] * dt + 0.5 * self.accel * dt**2

    def velocity(self, t) -> np.ndarray:
        """Velocity, right-continuous at kicks (left limit at the final time)."""
        t = np.asarray(t, dtype=float)
        j = self._segment(t)
        dt = (t - self.breaks[j])[..., None]
        return self.velocities[j] + self.accel * dt

    @property
    def segments(self):
        """(interval, per-axis polynomial coefficients in powers of t - t_a)."""
        out = []
        for j in range(len(self.breaks) - 1):
            coeffs = np.stack([self.starts[j], self.velocities[j], 0.5 * self.accel], axis=1)
            out.append(((self.breaks[j], self.breaks[j + 1]), coeffs))
        return out


def unperturbed_trajectory(seq: PulseSequence, branch: str) -> BranchTrajectory:
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}")
    breaks = seq.breakpoints
    kicks = {p.time: seq.hbar * p.k(branch) / seq.mass for p in seq.pulses}
    a = seq.g_vec
    r = seq.r_mean0.copy()
    v = seq.v_mean0.copy()
    starts, vels = [], []
    for t0, t1 in zip(breaks[:-1], breaks[1:]):
        v = v + kicks.get(t0, 0.0)
        starts.append(r)
        vels.append(v)
        dt = t1 - t0
        r = r + v * dt + 0.5 * a * dt**2
        v = v + a * dt
    v = v + kicks.get(breaks[-1], 0.0)
    return BranchTrajectory(branch, breaks, np.array(starts), np.array(vels), a, v)


def trajectories(seq: PulseSequence) -> dict[str, BranchTrajectory]:
    return {b: unperturbed_trajectory(seq, b) for b in BRANCHES}


@dataclass(frozen=True)
class ClosureReport:
    delta_r: np.ndarray
    delta_v: np.ndarray
    closed: bool


def closure_check(seq: PulseSequence) -> ClosureReport:
    """Position and velocity gap between the branches at detection."""
    tr = trajectories(seq)
    up, lo = tr[UPPER], tr[LOWER]
    dr = up.position(seq.t_d) - lo.position(seq.t_d)
    dv = up.final_velocity - lo.final_velocity
    samples = np.linspace(seq.t_i, seq.t_d, 257)
    pos = np.concatenate([up.position(samples), lo.position(samples)])
    extent = float(np.max(np.ptp(pos, axis=0)))
    tol_r = 1e-12 * max(1.0, extent)
    tol_v = 1e-12 * max(1.0, seq.recoil_velocity())
    closed = bool(np.linalg.norm(dr) < tol_r and np.linalg.norm(dv) < tol_v)
    return ClosureReport(dr, dv, closed)


def require_closed(seq: PulseSequence) -> None:
    rep = closure_check(seq)
    if not rep.closed:
        raise ClosureError(
            f"unperturbed interferometer is open: dr={rep.delta_r}, dv={rep.delta_v}")


# -- quadrature -------------------------------------------------------------

@dataclass(frozen=True)
class QuadOptions:
    nodes: int = 32
    subdivisions: int = 1


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _nodes(breaks: np.ndarray, quad: QuadOptions):
    """Composite Gauss-Legendre nodes/weights with no panel straddling a break."""
    x, w = _gauss_legendre(quad.nodes)
    edges = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        edges.append(np.linspace(a, b, quad.subdivisions + 1))
    ts, ws = [], []
    for e in edges:
        for a, b in zip(e[:-1], e[1:]):
            half = 0.5 * (b - a)
            ts.append(0.5 * (a + b) + half * x)
            ws.append(half * w)
    return np.concatenate(ts), np.concatenate(ws)


def _checked(values, branch, t):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        where = t[tuple(idx[: np.ndim(t)])] if np.ndim(t) else t
        raise EvaluationError(f"non-finite integrand on the {branch} branch at t={where}")
    return values


def contour_integrate(f: Callable[[str, np.ndarray], np.ndarray], seq: PulseSequence,
                      quad: QuadOptions | None = None, *, full_output: bool = False):
    """Loop integral  int f_upper dt - int f_lower dt  over [t_i, t_d].

    ``f(branch, t)`` must accept an array of times and return an array whose
    leading axis matches ``t`` (trailing axes are integrated component-wise).
    With ``full_output`` the result is ``(value, error_estimate)`` where the
    estimate compares against the rule with half as many nodes per panel.
    """
    quad = quad or QuadOptions()
    t, w = _nodes(seq.breakpoints, quad)
    diff = _checked(f(UPPER, t), UPPER, t) - _checked(f(LOWER, t), LOWER, t)
    value = np.tensordot(w, diff, axes=(0, 0))
    if not full_output:
        return value
    coarse = replace(quad, nodes=max(1, quad.nodes // 2))
    tc, wc = _nodes(seq.breakpoints, coarse)
    dc = _checked(f(UPPER, tc), UPPER, tc) - _checked(f(LOWER, tc), LOWER, tc)
    err = np.abs(value - np.tensordot(wc, dc, axes=(0, 0)))
    return value, err


def contour_integrate_nested(h: Callable, seq: PulseSequence,
                             quad: QuadOptions | None = None) -> float:
    """Path-ordered double loop integral  oint dt oint^t dt' h(t, t').

    The inner integral covers every contour point preceding ``t``: the upper
    branch is traversed from t_i to t_d, then the lower branch from t_d back to
    t_i, and lower-branch points carry orientation -1.

    ``h(branch, t, branch_p, t_p)`` is called with broadcastable arrays.
    """
    quad = quad or QuadOptions()
    x, w = _gauss_legendre(quad.nodes)
    panels = []
    for a, b in zip(seq.breakpoints[:-1], seq.breakpoints[1:]):
        e = np.linspace(a, b, quad.subdivisions + 1)
        panels.extend(zip(e[:-1], e[1:]))
    # contour order: upper panels ascending, lower panels descending
    order = [(UPPER, a, b) for a, b in panels] + [(LOWER, a, b) for a, b in reversed(panels)]
    sign = {UPPER: 1.0, LOWER: -1.0}

    def panel_nodes(a, b):
        half = 0.5 * (b - a)
        return 0.5 * (a + b) + half * x, half * w

    total = 0.0
    for n, (br, a, b) in enumerate(order):
        t, wt = panel_nodes(a, b)
        tcol = t[:, None]
        acc = np.zeros_like(t)
        for br_p, ap, bp in order[:n]:
            tp, wp = panel_nodes(ap, bp)
            vals = _checked(h(br, tcol, br_p, tp[None, :]), br, t)
            acc += sign[br_p] * (vals @ wp)
        # partial panel: contour points between the panel entry and t
        if br == UPPER:
            lo, hi = np.full_like(t, a), t
        else:
            lo, hi = t, np.full_like(t, b)
        half = 0.5 * (hi - lo)
        tp = 0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]
        vals = _checked(h(br, tcol, br, tp), br, t)
        acc += sign[br] * np.sum(vals * w[None, :], axis=1) * half
        total += sign[br] * float(wt @ acc)
    return total


# -- unperturbed phase ------------------------------------------------------

def phi0(seq: PulseSequence, quad: QuadOptions | None = None) -> float:
    """Phase of the closed unperturbed interferometer.

    Action difference of the two branches under the uniform field plus the
    imprinted laser terms k.r(t_l) + phi_l on each branch.  The Lagrangian is a
    quadratic polynomial between pulses, so Gauss-Legendre is exact here.
    """
    require_closed(seq)
    m, g, hbar = seq.mass, seq.g_vec, seq.hbar
    t, w = _nodes(seq.breakpoints, quad or QuadOptions(nodes=4))

    # Each path is free fall plus recoil terms.  Branch differences are built
    # from the recoil parts alone: subtracting full velocities or positions
    # would cancel catastrophically for fast or distant atoms.
    def recoil(branch, times):
        vel = np.zeros(np.shape(times) + (3,))
        pos = np.zeros(np.shape(times) + (3,))
        for p in seq.pulses:
            on = (np.asarray(times) >= p.time)[..., None]
            u = hbar * p.k(branch) / m
            vel = vel + on * u
            pos = pos + on * u * (np.asarray(times) - p.time)[..., None]
        return vel, pos

    tau = (t - seq.t_i)[:, None]
    v_free = seq.v_mean0 + g * tau
    wu, ru = recoil(UPPER, t)
    wl, rl = recoil(LOWER, t)
    dL = 0.5 * m * np.sum((wu - wl) * (2 * v_free + wu + wl), axis=-1) + m * ((ru - rl) @ g)
    dS = float(w @ _checked(dL, "both", t))
    laser = 0.0
    for p in seq.pulses:
        dt = p.time - seq.t_i
        free = seq.v_mean0 * dt + 0.5 * g * dt**2  # start position drops out of a closed loop
        for b, s in ((UPPER, 1.0), (LOWER, -1.0)):
            laser += s * (p.k(b) @ (free + recoil(b, p.time)[1]) + p.phi(b))
    return float(dS / seq.hbar + laser)

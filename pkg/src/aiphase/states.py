"""Gaussian wave packets and the moments of the freely evolving offset operator.

The offset  rbar(t) = (r - <r>) + (p - <p>) t / m  is the same on both
branches, so every moment needed by the perturbative expansion follows from
the initial 6x6 phase-space covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import HBAR, MASS_RB87


@dataclass(frozen=True)
class GaussianState:
    """Phase-space mean and central covariance of the initial wave packet.

    ``cov`` is ordered (x, y, z, px, py, pz); its off-diagonal block
    ``cov[:3, 3:]`` holds the symmetrized correlation <{dr_i, dp_j}>/2.
    """

    mean_r: np.ndarray
    mean_p: np.ndarray
    cov: np.ndarray
    mass: float = MASS_RB87
    hbar: float = HBAR
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mean_r", np.asarray(self.mean_r, dtype=float).reshape(3))
        object.__setattr__(self, "mean_p", np.asarray(self.mean_p, dtype=float).reshape(3))
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (6, 6):
            raise ValueError(f"covariance must be 6x6, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))
        if self.mass <= 0 or self.hbar <= 0:
            raise ValueError("mass and hbar must be positive")
        if self.check:
            self._validate()

    def _validate(self):
        # scale each block to O(1) before testing positivity
        s = np.sqrt(np.maximum(np.diag(self.cov), 1e-300))
        eig = np.linalg.eigvalsh(self.cov / np.outer(s, s))
        if eig.min() < -1e-10:
            raise ValueError("covariance is not positive semidefinite")
        for j in range(3):
            det = self.sigma_rr[j, j] * self.sigma_pp[j, j] - self.sigma_rp[j, j] ** 2
            if det < 0.25 * self.hbar**2 * (1 - 1e-9):
                raise ValueError(f"axis {j} violates the uncertainty relation")

    @property
    def sigma_rr(self) -> np.ndarray:
        return self.cov[:3, :3]

    @property
    def sigma_rp(self) -> np.ndarray:
        return self.cov[:3, 3:]

    @property
    def sigma_pp(self) -> np.ndarray:
        return self.cov[3:, 3:]

    @classmethod
    def from_blocks(cls, mean_r, mean_p, sigma_rr, sigma_rp, sigma_pp, mass=MASS_RB87,
                    hbar=HBAR) -> "GaussianState":
        cov = np.block([[np.asarray(sigma_rr, float), np.asarray(sigma_rp, float)],
                        [np.asarray(sigma_rp, float).T, np.asarray(sigma_pp, float)]])
        return cls(mean_r, mean_p, cov, mass, hbar)

    def widened(self, factor: float) -> "GaussianState":
        """Scale position widths by ``factor`` and momentum widths by 1/factor."""
        d = np.concatenate([np.full(3, factor), np.full(3, 1.0 / factor)])
        return GaussianState(self.mean_r, self.mean_p, self.cov * np.outer(d, d),
                             self.mass, self.hbar)


def trap_ground_state(omega, mass: float = MASS_RB87, mean_r=(0.0, 0.0, 0.0),
                      mean_p=(0.0, 0.0, 0.0), hbar: float = HBAR) -> GaussianState:
    """Ground state of an anisotropic harmonic trap with angular frequencies ``omega``."""
    w = np.asarray(omega, dtype=float).reshape(-1)
    if w.shape == (1,):
        w = np.repeat(w, 3)
    if w.shape != (3,) or np.any(w <= 0):
        raise ValueError("trap frequencies must be three positive numbers")
    rr = np.diag(hbar / (2 * mass * w))
    pp = np.diag(hbar * mass * w / 2)
    return GaussianState.from_blocks(mean_r, mean_p, rr, np.zeros((3, 3)), pp, mass, hbar)


def covariance_at(state: GaussianState, t) -> np.ndarray:
    """<rbar_i(t) rbar_j(t)> for elapsed time(s) ``t`` since the initial time."""
    t = np.asarray(t, dtype=float)[..., None, None]
    m = state.mass
    rp = state.sigma_rp
    return state.sigma_rr + (rp + rp.T) * (t / m) + state.sigma_pp * (t / m) ** 2


def two_time_moment(state: GaussianState, t, tp):
    """Symmetric part G_ij and commutator coefficient of <rbar_i(t) rbar_j(t')>.

    <rbar_i(t) rbar_j(t')> = G_ij + i c delta_ij  with  c = hbar (t' - t) / (2 m).
    ``t`` and ``tp`` broadcast; G gains two trailing axes.
    """
    t = np.asarray(t, dtype=float)
    tp = np.asarray(tp, dtype=float)
    m = state.mass
    tt = t[..., None, None]
    tpp = tp[..., None, None]
    rp = state.sigma_rp
    G = (state.sigma_rr + tpp * rp / m + tt * rp.T / m + tt * tpp * state.sigma_pp / m**2)
    c = state.hbar * (tp - t) / (2 * m)
    return G, c


def max_width(state: GaussianState, t) -> float:
    """Largest single-axis standard deviation at elapsed time ``t``."""
    return float(np.sqrt(np.max(np.diagonal(covariance_at(state, t), axis1=-2, axis2=-1))))

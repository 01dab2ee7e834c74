"""Perturbation potentials with derivative tensors up to fourth order.

Every potential exposes ``derivatives(r, t, branch, order)`` returning the list
``[V, V_i, V_ij, ...]`` evaluated at points ``r`` of shape ``(..., 3)``.  The
tensor of order n has shape ``(..., 3, ..., 3)`` with n trailing axes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import NdBSpline, make_interp_spline

from .core import BRANCHES, LOWER, UPPER, BranchTrajectory

MAX_ORDER = 4
AXES = ("x", "y", "z")


class DomainError(ValueError):
    """Potential queried outside the region where it is defined."""


def symmetrize(tensor: np.ndarray) -> np.ndarray:
    """Average over all permutations of the (trailing) spatial indices."""
    tensor = np.asarray(tensor, dtype=float)
    n = tensor.ndim
    if n < 2:
        return tensor
    perms = list(itertools.permutations(range(n)))
    return sum(np.transpose(tensor, p) for p in perms) / len(perms)


def _expand(r: np.ndarray, ndim: int) -> np.ndarray:
    # r has shape (..., 3); insert axes so it contracts with the last axis of an
    # array of rank ndim whose leading axes match r's batch axes.
    extra = ndim - r.ndim
    return r.reshape(r.shape[:-1] + (1,) * extra + (3,))


class Potential:
    """Base class.  Subclasses implement ``_derivs``."""

    branch_dependent: bool = False
    static: bool = True  # False when the potential depends on time

    def derivatives(self, r, t, branch: str = UPPER, order: int = 2) -> list[np.ndarray]:
        if not 0 <= order <= MAX_ORDER:
            raise ValueError(f"derivative order {order} outside 0..{MAX_ORDER}")
        if branch not in BRANCHES:
            raise ValueError(f"unknown branch {branch!r}")
        r = np.asarray(r, dtype=float)
        if r.shape[-1] != 3:
            raise ValueError("points must have a trailing axis of length 3")
        t = np.broadcast_to(np.asarray(t, dtype=float), r.shape[:-1])
        return self._derivs(r, t, branch, order)

    def _derivs(self, r, t, branch, order):
        raise NotImplementedError

    def __call__(self, r, t=0.0, branch: str = UPPER) -> np.ndarray:
        return self.derivatives(r, t, branch, 0)[0]

    def gradient(self, r, t=0.0, branch: str = UPPER) -> np.ndarray:
        return self.derivatives(r, t, branch, 1)[1]

    def hessian(self, r, t=0.0, branch: str = UPPER) -> np.ndarray:
        return self.derivatives(r, t, branch, 2)[2]

    def __add__(self, other: "Potential") -> "Potential":
        return SumPotential((self, other))

    def __mul__(self, factor: float) -> "Potential":
        return ScaledPotential(self, float(factor))

    __rmul__ = __mul__


class ZeroPotential(Potential):
    def _derivs(self, r, t, branch, order):
        batch = r.shape[:-1]
        return [np.zeros(batch + (3,) * n) for n in range(order + 1)]


@dataclass(frozen=True)
class _Taylor:
    """Derivative tensors at the origin: V = sum_n C_n r^n / n!."""

    coeffs: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "_active", tuple(m for m, c in enumerate(self.coeffs) if np.any(c)))

    def derivs(self, r: np.ndarray, order: int) -> list[np.ndarray]:
        batch = r.shape[:-1]
        out = [np.zeros(batch + (3,) * n) for n in range(order + 1)]
        for m in self._active:
            # contract the rank-m tensor with r one index at a time, n = m .. 0
            cur = self.coeffs[m]
            if m <= order:
                out[m] = out[m] + cur
            for n in range(m - 1, -1, -1):
                if n == m - 1:
                    cur = np.tensordot(r, cur, axes=([-1], [-1]))
                else:
                    cur = np.einsum("...i,...i->...", cur, _expand(r, cur.ndim))
                if n <= order:
                    out[n] = out[n] + cur / math.factorial(m - n)
        return out


def _taylor_from_dict(coeffs: dict, tol: float = 1e-10) -> _Taylor:
    names = ("constant", "linear", "quadratic", "cubic", "quartic")
    unknown = set(coeffs) - set(names)
    if unknown:
        raise ValueError(f"unknown coefficient keys {sorted(unknown)}")
    tensors = []
    for n, name in enumerate(names):
        c = np.asarray(coeffs.get(name, np.zeros((3,) * n)), dtype=float)
        if n == 1 and c.shape == (1,):
            c = np.array([0.0, 0.0, c[0]])
        if c.shape != (3,) * n:
            raise ValueError(f"{name} coefficients must have shape {(3,) * n}, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError(f"non-finite {name} coefficients")
        s = symmetrize(c)
        scale = max(np.max(np.abs(c)), 1e-300)
        if np.max(np.abs(s - c)) > tol * scale:
            raise ValueError(f"{name} tensor is not symmetric")
        tensors.append(s)
    return _Taylor(tuple(tensors))


class PolynomialPotential(Potential):
    """Polynomial of degree <= 4 in Taylor form, optionally different per branch.

    Coefficient tensors are the derivatives at the origin, e.g. ``cubic[2,2,2]
    = 6c`` for V = c z^3.  An optional ``time_factor(t)`` multiplies the whole
    potential.
    """

    def __init__(self, upper: _Taylor, lower: _Taylor | None = None,
                 time_factor: Callable[[np.ndarray], np.ndarray] | None = None):
        self._upper = upper
        self._lower = lower if lower is not None else upper
        self.branch_dependent = lower is not None
        self.time_factor = time_factor
        self.static = time_factor is None

    @property
    def coefficients(self) -> dict[str, tuple[np.ndarray, ...]]:
        return {UPPER: self._upper.coeffs, LOWER: self._lower.coeffs}

    def _derivs(self, r, t, branch, order):
        taylor = self._upper if branch == UPPER else self._lower
        out = taylor.derivs(r, order)
        if self.time_factor is not None:
            f = np.asarray(self.time_factor(t), dtype=float)
            out = [d * f.reshape(f.shape + (1,) * (d.ndim - f.ndim)) for d in out]
        return out


def polynomial_potential(coeffs: dict, lower: dict | None = None,
                         time_factor=None) -> PolynomialPotential:
    """Build a polynomial potential from Taylor coefficient tensors.

    Keys: ``constant`` [J], ``linear`` [J/m], ``quadratic`` [J/m^2],
    ``cubic`` [J/m^3], ``quartic`` [J/m^4]; missing keys are zero.  Input
    tensors must be symmetric up to rounding; they are symmetrized exactly.
    """
    up = _taylor_from_dict(coeffs)
    lo = _taylor_from_dict(lower) if lower is not None else None
    return PolynomialPotential(up, lo, time_factor)


@dataclass(frozen=True)
class GravityTensors:
    gamma1: np.ndarray  # 1/s^2
    gamma2: np.ndarray  # 1/(m s^2)
    g: float
    R: float


def gravity_tensors(g: float, R: float) -> GravityTensors:
    if not (g > 0 and R > 0):
        raise ValueError("g and R must be positive")
    G1 = np.diag([g / R, g / R, -2 * g / R])
    G2 = np.zeros((3, 3, 3))
    x, y, z = 0, 1, 2
    for i, j, k in set(itertools.permutations((x, x, z))):
        G2[i, j, k] = -3 * g / R**2
    for i, j, k in set(itertools.permutations((y, y, z))):
        G2[i, j, k] = -3 * g / R**2
    G2[z, z, z] = 6 * g / R**2
    return GravityTensors(G1, G2, g, R)


def earth_taylor(g: float, R: float, mass: float, order: int = 3, *,
                 include_linear: bool = False, include_gamma1: bool = True,
                 include_gamma2: bool = True) -> tuple[PolynomialPotential, GravityTensors]:
    """Taylor polynomial of Earth's Newtonian potential about a surface point.

    The linear term m g z already lives in the unperturbed Hamiltonian and is
    excluded by default.
    """
    if order > 3:
        raise ValueError("Earth expansion is only supported up to third order")
    if order < 1:
        raise ValueError("order must be at least 1")
    gt = gravity_tensors(g, R)
    coeffs = {}
    if include_linear:
        coeffs["linear"] = mass * np.array([0.0, 0.0, g])
    if order >= 2 and include_gamma1:
        coeffs["quadratic"] = mass * gt.gamma1
    if order >= 3 and include_gamma2:
        coeffs["cubic"] = mass * gt.gamma2
    return polynomial_potential(coeffs), gt


# -- black-box potentials ---------------------------------------------------

_EPS = np.finfo(float).eps


def fd_step(order: int, length_scale: float) -> float:
    """Step for a Richardson-refined central difference of the given order.

    Balances the O(h^4) truncation left after one refinement against rounding
    amplified by 1/h^order.
    """
    return length_scale * _EPS ** (1.0 / (order + 4))


def _unique_multi_indices(order: int):
    return list(itertools.combinations_with_replacement(range(3), order))


def finite_difference_tensor(fn: Callable[[np.ndarray], np.ndarray], r: np.ndarray,
                             order: int, h: float) -> np.ndarray:
    """Derivative tensor of a scalar field via central differences + Richardson.

    ``fn`` maps points ``(..., 3)`` to values ``(...)``.
    """
    r = np.asarray(r, dtype=float)
    if order == 0:
        return np.asarray(fn(r), dtype=float)

    def central(step):
        out = np.zeros(r.shape[:-1] + (3,) * order)
        for idx in _unique_multi_indices(order):
            acc = np.zeros(r.shape[:-1])
            for signs in itertools.product((1.0, -1.0), repeat=order):
                shift = np.zeros(3)
                for s, i in zip(signs, idx):
                    shift[i] += s * step
                acc = acc + np.prod(signs) * fn(r + shift)
            val = acc / (2 * step) ** order
            for perm in set(itertools.permutations(idx)):
                out[(...,) + perm] = val
        return out

    coarse, fine = central(h), central(h / 2)
    return (4 * fine - coarse) / 3


class FunctionPotential(Potential):
    """Black-box scalar field ``fn(r, t, branch)``; derivatives by finite differences.

    ``length_scale`` sets the difference step (see ``fd_step``); pass the
    scale on which the potential varies.
    """

    def __init__(self, fn: Callable, length_scale: float = 1.0, branch_dependent: bool = False,
                 static: bool = False):
        self.fn = fn
        self.length_scale = float(length_scale)
        self.branch_dependent = branch_dependent
        self.static = static

    def _derivs(self, r, t, branch, order):
        def f(p):
            return np.asarray(self.fn(p, t, branch), dtype=float)

        out = [f(r)]
        for n in range(1, order + 1):
            out.append(finite_difference_tensor(f, r, n, fd_step(n, self.length_scale)))
        return out


class SumPotential(Potential):
    def __init__(self, terms):
        self.terms = tuple(terms)
        self.branch_dependent = any(p.branch_dependent for p in self.terms)
        self.static = all(p.static for p in self.terms)

    def _derivs(self, r, t, branch, order):
        parts = [p._derivs(r, t, branch, order) for p in self.terms]
        return [sum(ds) for ds in zip(*parts)]


class ScaledPotential(Potential):
    def __init__(self, base: Potential, factor: float):
        self.base = base
        self.factor = factor
        self.branch_dependent = base.branch_dependent
        self.static = base.static

    def _derivs(self, r, t, branch, order):
        return [self.factor * d for d in self.base._derivs(r, t, branch, order)]


class TimeOnlyPotential(Potential):
    """Spatially uniform, branch-independent f(t); shifts no loop integral."""

    static = False

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def _derivs(self, r, t, branch, order):
        batch = r.shape[:-1]
        out = [np.broadcast_to(np.asarray(self.fn(t), dtype=float), batch).copy()]
        out += [np.zeros(batch + (3,) * n) for n in range(1, order + 1)]
        return out


# -- tabulated potentials ---------------------------------------------------

class GridPotential(Potential):
    """Tensor-product spline through values on a rectilinear grid.

    ``axes`` maps a subset of ``"x", "y", "z"`` to strictly increasing
    coordinates; the potential is uniform along omitted axes.  Derivatives up
    to second order come from the spline, higher ones from central
    differences of the spline Hessian.
    """

    def __init__(self, axes: dict[str, np.ndarray], values: np.ndarray, degree: int = 3):
        if not axes or set(axes) - set(AXES):
            raise ValueError(f"axes must be a non-empty subset of {AXES}")
        self.axis_names = tuple(a for a in AXES if a in axes)
        self.axis_index = tuple(AXES.index(a) for a in self.axis_names)
        self.coords = tuple(np.asarray(axes[a], dtype=float) for a in self.axis_names)
        values = np.asarray(values, dtype=float)
        if values.shape != tuple(len(c) for c in self.coords):
            raise ValueError(f"values shape {values.shape} does not match the axes")
        for name, c in zip(self.axis_names, self.coords):
            if len(c) < degree + 1:
                raise ValueError(
                    f"axis {name} has {len(c)} points; degree {degree} needs {degree + 1}")
            if np.any(np.diff(c) <= 0):
                raise ValueError(f"axis {name} must be strictly increasing")
        self.degree = degree
        self.values = values
        coef = values
        knots = []
        for ax, c in enumerate(self.coords):
            spl = make_interp_spline(c, np.moveaxis(coef, ax, 0), k=degree)
            knots.append(spl.t)
            coef = np.moveaxis(spl.c, 0, ax)
        self._spline = NdBSpline(tuple(knots), coef, degree)
        self.lo = np.array([c[0] for c in self.coords])
        self.hi = np.array([c[-1] for c in self.coords])
        span = float(np.max(self.hi - self.lo))
        self._fd_h = 1e-3 * span

    def _local(self, r):
        return r[..., list(self.axis_index)]

    def _check(self, x):
        if np.any(x < self.lo) or np.any(x > self.hi):
            raise DomainError("grid potential queried outside its bounding box")

    def _eval(self, x, nu):
        flat = x.reshape(-1, x.shape[-1])
        return self._spline(flat, nu=nu).reshape(x.shape[:-1])

    def _hessian_local(self, x):
        d = len(self.axis_index)
        H = np.zeros(x.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(i, d):
                nu = [0] * d
                nu[i] += 1
                nu[j] += 1
                H[..., i, j] = H[..., j, i] = self._eval(x, tuple(nu))
        return H

    def _derivs(self, r, t, branch, order):
        x = self._local(r)
        self._check(x)
        d = len(self.axis_index)
        batch = r.shape[:-1]
        out = [self._eval(x, (0,) * d)]
        if order >= 1:
            g = np.zeros(batch + (3,))
            for i, ax in enumerate(self.axis_index):
                nu = [0] * d
                nu[i] = 1
                g[..., ax] = self._eval(x, tuple(nu))
            out.append(g)
        if order >= 2:
            H = np.zeros(batch + (3, 3))
            Hl = self._hessian_local(x)
            ix = np.ix_(self.axis_index, self.axis_index)
            H[(...,) + ix] = Hl
            out.append(H)
        if order >= 3:
            out.extend(self._higher(x, order))
        return out

    def _higher(self, x, order):
        # central differences of the spline Hessian; stay inside the box
        h = self._fd_h
        d = len(self.axis_index)
        batch = x.shape[:-1]
        self._check(x - h * (order - 2))
        self._check(x + h * (order - 2))
        res = []
        T3 = np.zeros(batch + (d, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            T3[..., k] = (self._hessian_local(x + e) - self._hessian_local(x - e)) / (2 * h)
        T3 = symmetrize_batch(T3, 3)
        res.append(self._embed(T3, 3))
        if order >= 4:
            T4 = np.zeros(batch + (d,) * 4)
            for k in range(d):
                for l in range(d):
                    ek = np.zeros(d)
                    el = np.zeros(d)
                    ek[k] = h
                    el[l] = h
                    T4[..., k, l] = (self._hessian_local(x + ek + el) - self._hessian_local(x + ek - el)
                                     - self._hessian_local(x - ek + el)
                                     + self._hessian_local(x - ek - el)) / (4 * h * h)
            res.append(self._embed(symmetrize_batch(T4, 4), 4))
        return res

    def _embed(self, local, n):
        out = np.zeros(local.shape[:-n] + (3,) * n)
        ix = np.ix_(*([self.axis_index] * n))
        out[(...,) + ix] = local
        return out


def symmetrize_batch(tensor: np.ndarray, n: int) -> np.ndarray:
    """Symmetrize the last ``n`` axes of a batched tensor."""
    lead = tensor.ndim - n
    perms = list(itertools.permutations(range(lead, lead + n)))
    base = list(range(lead))
    return sum(np.transpose(tensor, base + list(p)) for p in perms) / len(perms)


def grid_potential(axes: dict[str, np.ndarray], values: np.ndarray,
                   interpolation_order: int = 3) -> GridPotential:
    return GridPotential(axes, values, interpolation_order)


GRID_MAGIC = "aiphase-grid 1"


def write_grid(path, pot_axes: dict[str, np.ndarray], values: np.ndarray,
               binary: bool = False, value_unit: str = "J") -> None:
    """Write a grid file.

    Text layout (UTF-8, ``\\n`` line ends)::

        aiphase-grid 1
        axes <name> [<name> ...]
        axis <name> <n> <unit>
        <n coordinates, one per line, repr() floats>
        ... one ``axis`` block per axis, in the order of the axes line ...
        values <total count> <unit>
        <values in row-major (C) order, one per line>

    Binary layout: the same header lines up to and including the ``values``
    line, except that the line reads ``values <count> <unit> float64-le`` and
    the coordinates are omitted after each ``axis`` line; the coordinate
    arrays and then the values follow as little-endian IEEE-754 doubles.
    """
    names = [a for a in AXES if a in pot_axes]
    values = np.asarray(values, dtype=float)
    lines = [GRID_MAGIC, "axes " + " ".join(names)]
    blobs = []
    for a in names:
        c = np.asarray(pot_axes[a], dtype=float)
        lines.append(f"axis {a} {len(c)} m")
        if binary:
            blobs.append(c.astype("<f8").tobytes())
        else:
            lines.extend(repr(float(v)) for v in c)
    if binary:
        lines.append(f"values {values.size} {value_unit} float64-le")
        header = ("\n".join(lines) + "\n").encode()
        blobs.append(np.ascontiguousarray(values).astype("<f8").tobytes())
        Path(path).write_bytes(header + b"".join(blobs))
    else:
        lines.append(f"values {values.size} {value_unit}")
        lines.extend(repr(float(v)) for v in values.ravel(order="C"))
        Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path) -> tuple[dict[str, np.ndarray], np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def line():
        nonlocal pos
        end = data.index(b"\n", pos)
        s = data[pos:end].decode()
        pos = end + 1
        return s

    if line() != GRID_MAGIC:
        raise ValueError(f"{path}: not an aiphase grid file")
    head = line().split()
    if head[0] != "axes":
        raise ValueError(f"{path}: expected axes line")
    names = head[1:]
    sizes = {}
    coords = {}
    binary = None
    for a in names:
        parts = line().split()
        if parts[:2] != ["axis", a]:
            raise ValueError(f"{path}: expected axis block for {a}")
        sizes[a] = int(parts[2])
        # peek: text files list coordinates right after the axis line
        if binary is None:
            save = pos
            nxt = line()
            binary = nxt.startswith("axis ") or nxt.startswith("values ")
            pos = save
        if not binary:
            coords[a] = np.array([float(line()) for _ in range(sizes[a])])
    vparts = line().split()
    if vparts[0] != "values":
        raise ValueError(f"{path}: expected values line")
    count = int(vparts[1])
    shape = tuple(sizes[a] for a in names)
    if count != int(np.prod(shape)):
        raise ValueError(f"{path}: value count {count} does not match axes {shape}")
    if binary:
        for a in names:
            n = sizes[a]
            coords[a] = np.frombuffer(data, "<f8", n, pos).astype(float)
            pos += 8 * n
        values = np.frombuffer(data, "<f8", count, pos).astype(float)
    else:
        values = np.array([float(line()) for _ in range(count)])
    return coords, values.reshape(shape)


def load_grid_potential(path, interpolation_order: int = 3) -> GridPotential:
    axes, values = read_grid(path)
    return GridPotential(axes, values, interpolation_order)


# -- evaluation along the unperturbed paths ---------------------------------

def eval_on_contour(pot: Potential, trajs: dict[str, BranchTrajectory], t, order: int,
                    branch: str) -> list[np.ndarray]:
    """Derivative tensors of ``pot`` at the unperturbed position of ``branch``."""
    t = np.asarray(t, dtype=float)
    tr = trajs[branch]
    lo, hi = tr.breaks[0], tr.breaks[-1]
    if np.any(t < lo - 1e-12 * abs(hi - lo)) or np.any(t > hi + 1e-12 * abs(hi - lo)):
        raise ValueError(f"time outside the interferometer window [{lo}, {hi}]")
    return pot.derivatives(tr.position(t), t, branch, order)

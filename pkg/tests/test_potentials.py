import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aiphase.core import build_mach_zehnder, trajectories
from aiphase.potentials import (DomainError, FunctionPotential, GridPotential, TimeOnlyPotential,
                                ZeroPotential, earth_taylor, eval_on_contour,
                                finite_difference_tensor, fd_step, gravity_tensors,
                                load_grid_potential, polynomial_potential, read_grid, symmetrize,
                                write_grid)


def random_poly(rng, degree=4):
    names = ("constant", "linear", "quadratic", "cubic", "quartic")
    co = {"constant": float(rng.normal())}
    for n in range(1, degree + 1):
        co[names[n]] = symmetrize(rng.normal(size=(3,) * n))
    return co


def direct_value(co, r):
    v = co.get("constant", 0.0) + r @ co.get("linear", np.zeros(3))
    if "quadratic" in co:
        v = v + 0.5 * np.einsum("...i,ij,...j->...", r, co["quadratic"], r)
    if "cubic" in co:
        v = v + np.einsum("...i,...j,...k,ijk->...", r, r, r, co["cubic"]) / 6
    if "quartic" in co:
        v = v + np.einsum("...i,...j,...k,...l,ijkl->...", r, r, r, r, co["quartic"]) / 24
    return v


def test_polynomial_value_and_tensors():
    rng = np.random.default_rng(3)
    co = random_poly(rng)
    pot = polynomial_potential(co)
    r = rng.normal(size=(7, 3))
    d = pot.derivatives(r, 0.0, order=4)
    assert d[0] == pytest.approx(direct_value(co, r), rel=1e-12, abs=1e-12)
    assert np.allclose(d[4], co["quartic"])
    # gradient of the value by differences
    fd = finite_difference_tensor(lambda p: pot(p), r, 1, 1e-3)
    assert np.max(np.abs(fd - d[1])) < 1e-8 * np.max(np.abs(d[1]))
    for n in range(2, 5):
        assert np.allclose(d[n], np.swapaxes(d[n], -1, -2))


def test_taylor_convention_for_single_cubic_term():
    c = np.zeros((3, 3, 3))
    c[2, 2, 2] = 6 * 0.5  # V = 0.5 z^3
    pot = polynomial_potential({"cubic": c})
    assert pot([0.0, 0.0, 2.0]) == pytest.approx(4.0)
    assert pot.gradient([0.0, 0.0, 2.0])[2] == pytest.approx(6.0)


def test_asymmetric_coefficients_rejected():
    q = np.zeros((3, 3))
    q[0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        polynomial_potential({"quadratic": q})
    with pytest.raises(ValueError, match="unknown"):
        polynomial_potential({"sextic": 1.0})


def test_branch_dependent_polynomial():
    pot = polynomial_potential({"linear": [0, 0, 1.0]}, lower={"linear": [0, 0, 2.0]})
    assert pot.branch_dependent
    r = np.array([0, 0, 1.5])
    assert pot(r, branch="upper") == pytest.approx(1.5)
    assert pot(r, branch="lower") == pytest.approx(3.0)


def test_order_out_of_range():
    with pytest.raises(ValueError):
        ZeroPotential().derivatives(np.zeros(3), 0.0, order=5)


def test_earth_tensors():
    g, R = 9.81, 6.371e6
    gt = gravity_tensors(g, R)
    assert np.trace(gt.gamma1) == pytest.approx(0.0, abs=1e-20)
    assert gt.gamma1[2, 2] == pytest.approx(-2 * g / R)
    assert gt.gamma2[2, 2, 2] == pytest.approx(6 * g / R**2)
    assert gt.gamma2[0, 0, 2] == gt.gamma2[2, 0, 0] == pytest.approx(-3 * g / R**2)
    # Laplace: every trace of the third-derivative tensor vanishes
    assert np.allclose(np.einsum("iik->k", gt.gamma2), 0.0, atol=1e-25)
    pot, _ = earth_taylor(g, R, 1.0, include_gamma1=False)
    assert pot([0, 0, 1.0]) == pytest.approx(g / R**2)
    with pytest.raises(ValueError):
        earth_taylor(g, R, 1.0, order=4)


def test_earth_taylor_matches_newtonian_potential():
    g, R, m = 9.81, 6.371e6, 1.0
    pot, _ = earth_taylor(g, R, m, include_linear=True)

    def exact(z):
        # -GMm/(R+z) + GMm/R without the cancellation
        return m * g * R * z / (R + z)

    for z in (1.0, 10.0, 50.0):
        # the neglected fourth-order term is ~ g z^4 / R^3
        assert pot([0, 0, z]) == pytest.approx(exact(z), abs=5 * g * z**4 / R**3 + 1e-14 * g * z)


def test_function_potential_derivatives_by_differences():
    rng = np.random.default_rng(5)
    co = random_poly(rng, degree=3)
    poly = polynomial_potential(co)
    fp = FunctionPotential(lambda r, t, b: direct_value(co, r), length_scale=1.0, static=True)
    r = rng.normal(size=(4, 3))
    a = poly.derivatives(r, 0.0, order=3)
    f = fp.derivatives(r, 0.0, order=3)
    for n in range(4):
        scale = np.max(np.abs(a[n])) + 1e-300
        assert np.max(np.abs(a[n] - f[n])) / scale < 1e-6, n


def test_fd_step_scales_with_length():
    assert fd_step(2, 10.0) == pytest.approx(10 * fd_step(2, 1.0))
    assert fd_step(3, 1.0) > fd_step(1, 1.0)


def test_sum_scale_and_time_only():
    a = polynomial_potential({"linear": [1.0, 0, 0]})
    b = polynomial_potential({"quadratic": np.eye(3)})
    s = a + 2.0 * b
    r = np.array([1.0, 2.0, 3.0])
    assert s(r) == pytest.approx(1.0 + 14.0)
    assert s.static
    tp = TimeOnlyPotential(np.cos)
    assert not tp.static and not (a + tp).static
    d = tp.derivatives(np.zeros((5, 3)), np.linspace(0, 1, 5), order=2)
    assert d[0] == pytest.approx(np.cos(np.linspace(0, 1, 5)))
    assert not np.any(d[1]) and not np.any(d[2])


def _cubic_grid(n=41):
    x = np.linspace(-1, 1, n)
    z = np.linspace(-2, 2, n + 4)
    X, Z = np.meshgrid(x, z, indexing="ij")
    return {"x": x, "z": z}, 0.3 * Z**3 + X**2 * Z - 0.5 * X


def test_grid_potential_reproduces_polynomial():
    axes, vals = _cubic_grid()
    pot = GridPotential(axes, vals)
    r = np.array([[0.2, 5.0, -0.7], [-0.4, -3.0, 1.1]])  # y is ignored
    x, z = r[:, 0], r[:, 2]
    d = pot.derivatives(r, 0.0, order=3)
    assert d[0] == pytest.approx(0.3 * z**3 + x**2 * z - 0.5 * x, rel=1e-9, abs=1e-12)
    assert d[1][:, 2] == pytest.approx(0.9 * z**2 + x**2, rel=1e-8)
    assert d[1][:, 1] == pytest.approx([0.0, 0.0])
    assert d[2][:, 0, 2] == pytest.approx(2 * x, rel=1e-7)
    assert d[3][:, 2, 2, 2] == pytest.approx([1.8, 1.8], rel=1e-4)


def test_grid_potential_outside_box():
    axes, vals = _cubic_grid()
    with pytest.raises(DomainError):
        GridPotential(axes, vals)(np.array([0.0, 0.0, 5.0]))


def test_grid_potential_needs_enough_points():
    with pytest.raises(ValueError):
        GridPotential({"z": np.array([0.0, 1.0, 2.0])}, np.zeros(3))


@pytest.mark.parametrize("binary", [False, True])
def test_grid_file_round_trip(tmp_path, binary):
    axes, vals = _cubic_grid(9)
    path = tmp_path / ("g.bin" if binary else "g.txt")
    write_grid(path, axes, vals, binary=binary)
    back_axes, back_vals = read_grid(path)
    assert list(back_axes) == ["x", "z"]
    assert np.array_equal(back_axes["x"], axes["x"])
    assert np.array_equal(back_vals, vals)
    pot = load_grid_potential(path)
    assert pot(np.array([0.1, 0.0, 0.2])) == pytest.approx(GridPotential(axes, vals)(np.array([0.1, 0.0, 0.2])))


def test_grid_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("something else\n")
    with pytest.raises(ValueError):
        read_grid(p)


def test_eval_on_contour_window():
    seq = build_mach_zehnder(1.0, 10.0, mass=1.0, hbar=1.0, g=1.0)
    tr = trajectories(seq)
    pot = polynomial_potential({"linear": [0, 0, 1.0]})
    d = eval_on_contour(pot, tr, np.array([0.5, 1.5]), 1, "upper")
    assert d[0] == pytest.approx(tr["upper"].position(np.array([0.5, 1.5]))[:, 2])
    with pytest.raises(ValueError):
        eval_on_contour(pot, tr, np.array([3.0]), 0, "upper")


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(-10, 10), x=st.floats(-3, 3), z=st.floats(-3, 3))
def test_scaled_potential_is_linear(lam, x, z):
    base = polynomial_potential({"cubic": symmetrize(np.arange(27.0).reshape(3, 3, 3))})
    r = np.array([x, 0.3, z])
    assert (lam * base)(r) == pytest.approx(lam * base(r), rel=1e-12, abs=1e-9)

import math

import numpy as np
import pytest

from jacobi_entropy import perturbation as pt
from jacobi_entropy import solver as sv
from jacobi_entropy import volume as vm
from jacobi_entropy.errors import DomainError, ResonanceError
from jacobi_entropy.geometry import SystemSpec
from jacobi_entropy.potential import parse_potential

from conftest import flat, harmonic

BESSEL_J0_ZERO_SQ = 5.7832
# harmonic n=2, E=2: coefficient 3/8, so sin(k x1) with k^2 = 2 W c = 1.5 solves the equation
HELMHOLTZ_K = math.sqrt(1.5)
O2 = np.zeros(2)


def _saddle():
    return SystemSpec(2, 1.0, parse_potential("0.5*(x1^2 - x2^2)", 2))


def test_lattice_requirements():
    with pytest.raises(ValueError):
        sv.build_lattice(O2, 0.1, 0.1)
    lat = sv.build_lattice(O2, 1.0, 0.25)
    assert lat.K == 4
    assert np.all(np.linalg.norm(lat.coords, axis=1) < 1.0)
    assert lat.size == int(np.sum(np.linalg.norm(np.stack(np.meshgrid(*[np.arange(-4, 5)] * 2), -1), axis=-1)
                                  * 0.25 < 1.0 - 1e-12))


def test_coordinate_radius():
    assert sv.coordinate_radius(harmonic(2), vm.BallSpec(O2, 2.4)) == pytest.approx(1.2)


def test_massless_constant_data():
    spec = _saddle()
    assert pt.mass_coefficient(spec, O2) == 0.0
    sol = sv.solve_invariance(spec, vm.BallSpec(O2, 0.8), 2.5, h=0.04)
    assert sol.mass_used == 0.0
    assert np.max(np.abs(sol.values - 2.5)) <= 1e-8
    assert sol.residual_norm <= sol.solver_tol
    np.testing.assert_array_equal(sol.boundary_values, 2.5)


def test_massive_zero_data():
    sol = sv.solve_invariance(harmonic(3), vm.BallSpec(np.zeros(3), 0.5), 0.0, h=0.02)
    assert sol.mass_used == pytest.approx(0.5625)
    assert sol.max_abs() <= 1e-8


def test_large_mass_limit():
    # E close to Vc(P): the mass grows without bound and the solution vanishes
    spec = harmonic(2, 0.01)
    sol = sv.solve_invariance(spec, vm.BallSpec(O2, 0.05, cap=1.0), 0.0)
    assert sol.mass_used > 1e3
    assert sol.max_abs() <= sol.solver_tol


def test_maximum_principle():
    data = parse_potential("x1^2 - 0.5*x2 + sin(3*x1*x2)", 2)
    sol = sv.solve_invariance(_saddle(), vm.BallSpec(O2, 0.8), data, h=0.03)
    lo, hi = sol.boundary_values.min(), sol.boundary_values.max()
    assert lo - 1e-12 <= sol.values.min() and sol.values.max() <= hi + 1e-12
    np.testing.assert_array_equal(sol.boundary_values, data(sol.boundary_points))


def test_uniqueness_from_two_starts():
    spec = harmonic(2)
    ball = vm.BallSpec(O2, 1.0)
    data = parse_potential("cos(x1) + x2", 2)
    a = sv.solve_invariance(spec, ball, data, h=0.05, solver_tol=1e-9)
    b = sv.solve_invariance(spec, ball, data, h=0.05, solver_tol=1e-9, x0=37.0)
    assert np.max(np.abs(a.values - b.values)) <= 10 * 1e-9


@pytest.mark.parametrize("divisions", [(16, 32), (32, 64)])
def test_second_order_convergence(divisions):
    spec = harmonic(2)
    ball = vm.BallSpec(O2, 2.4, cap=10.0)
    f = lambda x: np.sin(HELMHOLTZ_K * x[:, 0])  # noqa: E731
    errs = []
    for d in divisions:
        sol = sv.solve_invariance(spec, ball, f, h=1.2 / d, solver_tol=1e-9)
        errs.append(np.max(np.abs(sol.values - f(sol.nodes))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_bessel_eigenvalue():
    spec = flat(2, 0.5)
    s = sv.operator_spectrum(spec, vm.BallSpec(O2, 1.0), h=0.02, k=3)
    assert -s.eigenvalues[0] == pytest.approx(BESSEL_J0_ZERO_SQ, rel=1e-2)
    assert np.all(s.eigenvalues < 0) and not s.contains_zero


def test_spectral_shift():
    spec = flat(2, 0.5)
    ball = vm.BallSpec(O2, 1.0)
    base = sv.operator_spectrum(spec, ball, h=0.05, k=4).eigenvalues
    moved = sv.operator_spectrum(spec, ball, h=0.05, k=4, shift=0.7).eigenvalues
    np.testing.assert_allclose(np.sort(moved), np.sort(base) + 0.7, atol=1e-9)


def test_zero_in_spectrum_detected():
    spec = flat(2, 0.5)
    ball = vm.BallSpec(O2, 1.0)
    mu = sv.operator_spectrum(spec, ball, h=0.1, k=1).eigenvalues[0]
    s = sv.operator_spectrum(spec, ball, h=0.1, k=2, shift=-mu)
    assert s.contains_zero


def test_resonance_error():
    spec = flat(2, 0.5)
    ball = vm.BallSpec(O2, 1.0)
    mu = sv.operator_spectrum(spec, ball, h=0.1, k=1).eigenvalues[0]
    with pytest.raises(ResonanceError) as info:
        sv.solve_invariance(spec, ball, 1.0, h=0.1, coefficient=-mu)
    assert abs(info.value.eigenvalue) < 1e-10


def test_exports(tmp_path):
    sol = sv.solve_invariance(harmonic(2), vm.BallSpec(O2, 1.0), parse_potential("x1", 2), h=0.1)
    sol.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("# schema=1 h=0.1 ")
    assert lines[1] == "x1,x2,value,kind"
    assert len(lines) == 2 + sol.values.size + sol.boundary_values.size
    sol.to_binary(tmp_path / "s.bin")
    data, meta = sv.read_binary(tmp_path / "s.bin")
    np.testing.assert_array_equal(np.isnan(data), np.isnan(sol.dense()))
    np.testing.assert_array_equal(data[~np.isnan(data)], sol.dense()[~np.isnan(data)])
    assert meta["h"] == 0.1 and meta["rho"] == sol.rho


def test_polynomial_fit_of_solution():
    spec = harmonic(2)
    f = lambda x: np.sin(HELMHOLTZ_K * x[:, 0])  # noqa: E731
    sol = sv.solve_invariance(spec, vm.BallSpec(O2, 1.2, cap=10.0), f, h=0.6 / 32, solver_tol=1e-9)
    Vt = sol.to_potential(6)
    pts = sol.nodes[::7]
    assert np.max(np.abs(Vt(pts) - f(pts))) <= 1e-4


def test_loglog_slope():
    lam = np.array([1e-2, 1e-3, 1e-4])
    assert sv.loglog_slope(lam, 3 * lam**2) == pytest.approx(2.0, rel=1e-12)
    assert math.isnan(sv.loglog_slope(lam, np.zeros(3)))


def test_zero_solution_leaves_entropy_unchanged():
    spec = harmonic(3)
    ball = vm.BallSpec(np.zeros(3), 0.3)
    sol = sv.solve_invariance(spec, ball, 0.0, h=0.15 / 4)
    table = sv.verify_entropy_invariance(spec, ball, sol, [1e-2, 1e-3], 8, seed=0, degree=2)
    np.testing.assert_array_equal(table.delta_S, 0.0)


def test_twin_runs_refuse_to_leave_the_grid():
    spec = harmonic(3)
    ball = vm.BallSpec(np.zeros(3), 0.3)
    with pytest.raises(DomainError):
        sv.entropy_shift_twin(spec, ball, parse_potential("1 + x1", 3), [1e-3], 4, seed=0, max_excursion=0.01)

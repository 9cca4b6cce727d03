import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jacobi_entropy import geometry as geo
from jacobi_entropy import perturbation as pt
from jacobi_entropy import volume as vm
from jacobi_entropy.errors import DegenerateCriticalPointError, DomainError, ValidityError
from jacobi_entropy.geometry import SystemSpec
from jacobi_entropy.potential import parse_potential

from conftest import harmonic_source, random_quadratic_source

P0 = np.zeros(3)
SIGMA_EXAMPLE = -2.5063e-3
HARMONIC_MASS = 0.5625
# harmonic n=3, E=2, Vt = c: delta_R / (lam c) under the oracle normalization
CONST_SHIFT_PER_LAM = -0.75
# oracle rhs coefficient at the special energy E = 6, harmonic n=3
ORACLE_RHS_AT_SPECIAL = -0.052083333333333336


def perturbed(src="1", lam=1e-3, n=3, E=2.0, Vc=None):
    Vc = parse_potential(Vc if Vc is not None else harmonic_source(n), n)
    return SystemSpec(n, E, Vc, lam, parse_potential(src, n))


def test_conformal_factor_example():
    spec = SystemSpec(2, 2.0, parse_potential("0", 2), 0.01, parse_potential("1", 2))
    sigma = pt.conformal_factor(spec, [0.3, 0.4])
    assert sigma == pytest.approx(0.5 * math.log(0.995), rel=1e-14)
    assert sigma == pytest.approx(SIGMA_EXAMPLE, rel=1e-4)


def test_conformal_factor_zero_lambda_and_domain():
    spec = perturbed("x1^2 + 3", lam=0.0)
    assert pt.conformal_factor(spec, [0.2, 0.1, 0.0]) == 0.0
    bad = SystemSpec(2, 2.0, parse_potential("0", 2), 1.0, parse_potential("2", 2))
    with pytest.raises(DomainError):
        pt.conformal_factor(bad, [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(-0.2, 0.2), x=st.lists(st.floats(-0.8, 0.8), min_size=3, max_size=3))
def test_conformal_factor_reproduces_perturbed_metric(lam, x):
    spec = perturbed("1 + x1*x2 - 0.5*x3^2", lam=lam)
    g0 = geo.jacobi_metric(spec.unperturbed(), x)[0]
    g1 = geo.jacobi_metric(spec, x)[0]
    np.testing.assert_allclose(math.exp(2 * pt.conformal_factor(spec, x)) * g0, g1, rtol=1e-12)


def test_zero_lambda_report():
    spec = perturbed("1 + x1^2", lam=0.0)
    assert pt.conformal_scalar_shift(spec, P0) == (0.0, 0.0)
    rep = pt.perturbation_report(spec, P0, 0.05)
    assert rep.sigma_P == 0 and rep.B_trace == 0 and rep.delta_R == 0 and rep.delta_S == 0
    assert rep.delta_S_exact == 0 and rep.delta_R_exact == 0
    assert rep.sigma_at([0.3, 0.1, 0.2]) == 0


def test_zeroth_order_equality_bit_for_bit():
    spec = perturbed("1 + sin(x1)*x2", lam=0.3)
    base = geo.scalar_curvature(spec.unperturbed(), P0)
    assert geo.scalar_curvature(spec.with_lambda(0.0), P0) == base
    assert pt.perturbation_report(spec.with_lambda(0.0), P0, 0.05).R_p == base
    assert geo.scalar_curvature(spec.with_lambda(0.0), P0, "literal") == geo.scalar_curvature(
        spec.unperturbed(), P0, "literal")


def test_constant_perturbation_shift():
    for c in (1.0, -2.0):
        for lam in (1e-2, 1e-3):
            B, dR = pt.conformal_scalar_shift(perturbed(repr(c), lam), P0)
            assert B == pytest.approx(-3 * lam * c / 32, rel=1e-13)
            assert dR == pytest.approx(CONST_SHIFT_PER_LAM * lam * c, rel=1e-13)


def test_exact_trace_reproduces_perturbed_scalar():
    for src in ("1", "1 + x1^2 - 0.3*x2*x3", "cos(x1) + x2"):
        for lam in (0.05, 1e-3):
            spec = perturbed(src, lam)
            assert pt.perturbed_scalar_exact(spec, P0) == pytest.approx(
                geo.ricci_scalar_oracle(spec, P0), rel=1e-12)


def test_first_order_shift_has_quadratic_residual():
    spec = perturbed("1 + x1^2 - 0.3*x2*x3 + 0.2*x1")
    R0 = geo.ricci_scalar_oracle(spec.unperturbed(), P0)
    scaled = []
    for lam in (1e-2, 1e-3, 1e-4):
        s = spec.with_lambda(lam)
        exact = R0 - geo.ricci_scalar_oracle(s, P0)
        _, linear = pt.conformal_scalar_shift(s, P0)
        assert abs(exact - linear) <= 10 * lam**2
        scaled.append((exact - linear) / lam**2)
    assert scaled[1] == pytest.approx(scaled[2], rel=0.05)


def test_trace_forms_agree_at_first_order():
    spec = perturbed("1 + x1^2 - 0.3*x2*x3 + 0.2*x1")
    w = spec.unperturbed().local(P0)[0]
    for lam in (1e-3, 1e-5):
        s = spec.with_lambda(lam)
        first = pt.b_trace_first_order(s, P0)
        assert pt.b_trace_exact(s, P0) == pytest.approx(first, rel=50 * lam)
        # the literal form carries an extra factor of E - Vc in its linear term
        assert pt.b_trace_display(s, P0) / first == pytest.approx(w, rel=50 * lam)


def test_requires_critical_point():
    with pytest.raises(DegenerateCriticalPointError):
        pt.conformal_scalar_shift(perturbed("1"), [0.1, 0.0, 0.0])


def test_entropy_shift_two_volume_oracle():
    spec = perturbed("1", 1e-3)
    r = 0.05
    R = pt.unperturbed_scalar(spec, P0)
    _, dR = pt.conformal_scalar_shift(spec, P0)
    shift = pt.entropy_shift_first_order(spec, r, R, dR)
    ball = vm.BallSpec(P0, r)
    direct = math.log(vm.ball_volume_expansion(spec, ball, R - dR)) - math.log(
        vm.ball_volume_expansion(spec, ball, R))
    assert shift.exact == pytest.approx(direct, rel=1e-9)
    assert abs(shift.linear - direct) <= abs(direct) ** 2 * 10
    # with the opposite sign inside the log the first-order term flips
    assert shift.literal == pytest.approx(-shift.linear, rel=1e-3)
    assert tuple(shift) == (shift.exact, shift.linear)


def test_entropy_shift_zero_and_validity():
    spec = perturbed("1")
    assert tuple(pt.entropy_shift_first_order(spec, 0.05, 0.75, 0.0)) == (0.0, 0.0)
    with pytest.raises(ValidityError):
        pt.entropy_shift_first_order(spec, 10.0, 1.0, 0.1)


def test_invariance_residual_examples():
    assert pt.invariance_condition_residual(perturbed("0"), [0.2, 0.1, 0.3], 0.75) == 0
    assert pt.invariance_condition_residual(perturbed("x1"), [0.2, 0.1, 0.3], 0.0) == 0
    R = 0.75
    k = math.sqrt(3 * R / (2 - 1))
    spec = SystemSpec(2, 2.0, parse_potential(harmonic_source(2), 2), 1e-3,
                      parse_potential(f"sin({k!r}*x1)", 2))
    for x in ([0.3, 0.0], [-0.7, 0.2], [1.1, 0.5]):
        assert abs(pt.invariance_condition_residual(spec, x, R)) <= 1e-10


def test_invariance_consistency():
    for src in ("1", "1 + x1^2 - x2*x3", "cos(x1)"):
        spec = perturbed(src)
        _, _, diff = pt.invariance_consistency(spec, P0, "literal")
        assert abs(diff) <= 1e-12
    _, _, diff = pt.invariance_consistency(perturbed("1"), P0, "oracle")
    assert diff == pytest.approx(-0.375, rel=1e-12)


def test_exact_invariance_coefficient_cancels_true_shift():
    spec = perturbed("1")
    kappa = pt.exact_invariance_coefficient(spec, P0)
    assert kappa == pytest.approx(3.0, rel=1e-14)
    s = SystemSpec(3, 2.0, spec.Vc, 1e-3, parse_potential(f"cos({math.sqrt(kappa)!r}*x1)", 3))
    _, dR = pt.conformal_scalar_shift(s, P0, "oracle")
    assert abs(dR) <= 1e-15
    _, dR_lit = pt.conformal_scalar_shift(s, P0, "literal")
    assert abs(dR_lit) > 1e-5


def test_mass_examples():
    spec = perturbed("1")
    assert pt.laplace_jacobi_vc(spec, P0) == pytest.approx(0.75, rel=1e-14)
    assert pt.effective_mass(spec, P0) == pytest.approx(HARMONIC_MASS, rel=1e-14)
    saddle = SystemSpec(2, 1.0, parse_potential("0.5*(x1^2 - x2^2)", 2))
    assert pt.effective_mass(saddle, np.zeros(2)) == 0.0
    maximum = SystemSpec(2, 1.0, parse_potential("-0.5*(x1^2 + x2^2)", 2))
    assert pt.mass_coefficient(maximum, np.zeros(2)) < 0 < pt.effective_mass(maximum, np.zeros(2))


def test_mass_positive_at_minima(rng):
    for n in (2, 3, 4):
        for _ in range(5):
            src, A, b, c = random_quadratic_source(rng, n)
            P = -np.linalg.solve(A, b)
            V = parse_potential(src, n)
            spec = SystemSpec(n, float(V(P)) + float(rng.uniform(0.5, 3.0)), V)
            assert pt.effective_mass(spec, P) > 0


def test_special_energy():
    assert pt.special_energy(perturbed("1"), P0) == 6.0
    shifted = SystemSpec(4, 5.0, parse_potential("0.5*(x1^2 + x2^2 + x3^2 + x4^2) + 0.25", 4))
    assert pt.special_energy(shifted, np.zeros(4)) == pytest.approx(3.25)
    with pytest.raises(DomainError):
        pt.special_energy(SystemSpec(2, 2.0, parse_potential("x1^2 + x2^2", 2)), np.zeros(2))


def test_conformal_laplacian_coefficient_at_special_energy():
    spec = perturbed("1", lam=0.0).with_energy(6.0)
    R_lit = geo.scalar_curvature(spec, P0, "literal")
    lhs, rhs = pt.conformal_laplacian_coefficient(spec, P0, R_lit)
    assert lhs == pytest.approx(R_lit / 8)
    assert abs(rhs) <= 1e-14
    # the true scalar does not make the coefficient vanish at this energy
    _, rhs_oracle = pt.conformal_laplacian_coefficient(spec, P0, geo.scalar_curvature(spec, P0))
    assert rhs_oracle == pytest.approx(ORACLE_RHS_AT_SPECIAL, rel=1e-12)


def test_report_fields():
    rep = pt.perturbation_report(perturbed("1 + x1^2"), P0, 0.05, normalization="literal")
    assert rep.normalization == "literal" and rep.R_p == pytest.approx(1.5)
    assert set(rep.key_values()) == set(pt.PerturbationReport.COLUMNS)
    assert rep.special_energy == 6.0
    assert rep.mass == pytest.approx(HARMONIC_MASS)
    with pytest.raises(ValueError):
        pt.perturbation_report(perturbed("1"), P0, 0.05, normalization="other")

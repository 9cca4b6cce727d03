"""First-order conformal perturbation ``V = Vc + lam * Vtilde`` of the Jacobi metric.

The perturbed metric is ``exp(2 sigma) g`` with
``sigma = 1/2 ln(1 - lam Vtilde / (E - Vc))``. Quantities below are evaluated
at a critical point ``P`` of ``Vc`` where the unperturbed Christoffel symbols
vanish.

Every function that contracts indices takes ``normalization``:

``"oracle"``
    ``g^kl`` is the Jacobi inverse metric and ``R_p`` the true scalar
    curvature. The first-order shift is then exact.
``"literal"``
    ``g^kl`` is the Euclidean delta and ``R_p`` the critical-point form
    ``(n-1) Lap Vc / (2(E - Vc))``. This is the normalization under which the
    invariance condition reduces to ``Lap Vt + 3 R_p/(n-1) Vt = 0`` and the
    special energy makes the shifted operator a conformal Laplacian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry as geo
from .errors import DegenerateCriticalPointError, DomainError, ValidityError
from .potential import PotentialExpr

GRAD_TOL = 1e-8


def _point_data(spec: geo.SystemSpec, x):
    """``W = E - Vc`` and the derivatives of ``Vc`` and ``Vtilde`` at ``x``."""
    base = spec.unperturbed()
    w, dvc, hvc = base.local(x)
    vt, dvt, hvt = spec.perturbation.derivs(np.asarray(x, dtype=float))
    return w, dvc, hvc, float(vt), dvt, hvt


def _require_critical(spec: geo.SystemSpec, P, grad_tol: float):
    g = PotentialExpr(spec.Vc.ast, spec.n).gradient(np.asarray(P, dtype=float))
    norm = float(np.linalg.norm(g))
    if norm > grad_tol:
        raise DegenerateCriticalPointError(
            f"P={np.asarray(P).tolist()} is not a critical point of Vc (|grad Vc| = {norm:.3e})"
        )


def conformal_factor(spec: geo.SystemSpec, x) -> float:
    """``sigma(x) = 1/2 ln(1 - lam Vtilde(x) / (E - Vc(x)))``."""
    x = np.asarray(x, dtype=float)
    w = spec.unperturbed().local(x)[0]
    if spec.lam == 0.0:
        return 0.0
    ratio = 1.0 - spec.lam * float(spec.perturbation(x)) / w
    if not ratio > 0:
        raise DomainError(
            f"conformal factor undefined at {x.tolist()}: lam*Vtilde >= E - Vc (ratio {ratio:.3e})"
        )
    return 0.5 * math.log(ratio)


def conformal_factor_field(spec: geo.SystemSpec) -> Callable:
    return lambda x: conformal_factor(spec, x)


def unperturbed_scalar(spec: geo.SystemSpec, P, normalization: str = "oracle") -> float:
    return geo.scalar_curvature(spec.unperturbed(), P, normalization)


def b_trace_first_order(spec: geo.SystemSpec, P, normalization: str = "oracle") -> float:
    """``-lam/(2W) [g^kl d_k d_l Vt + Vt/W g^kl d_k d_l Vc]``."""
    w, _, hvc, vt, _, hvt = _point_data(spec, P)
    ginv = geo.contraction_metric(spec.unperturbed(), P, normalization)
    bracket = np.sum(ginv * hvt) + vt / w * np.sum(ginv * hvc)
    return float(-spec.lam / (2.0 * w) * bracket)


def b_trace_exact(spec: geo.SystemSpec, P, normalization: str = "oracle") -> float:
    """All orders in ``lam`` at a critical point of ``Vc``.

    ``1/(4Wt) [lam^2 (n/2-1) |dVt|^2/Wt - 2 lam g.ddVt - 2 lam Vt g.ddVc / W
    - 2 lam^2 |dVt|^2 / Wt]`` with ``Wt = W - lam Vt`` and every contraction
    taken with ``g^kl``.
    """
    w, _, hvc, vt, dvt, hvt = _point_data(spec, P)
    lam, n = spec.lam, spec.n
    ginv = geo.contraction_metric(spec.unperturbed(), P, normalization)
    wt = w - lam * vt
    if not wt > 0:
        raise DomainError("perturbed kinetic energy is non-positive at P")
    grad2 = float(dvt @ ginv @ dvt)
    out = (lam**2 * (0.5 * n - 1.0) * grad2 / wt
           - 2.0 * lam * np.sum(ginv * hvt)
           - 2.0 * lam * vt * np.sum(ginv * hvc) / w
           - 2.0 * lam**2 * grad2 / wt)
    return float(out / (4.0 * wt))


def b_trace_display(spec: geo.SystemSpec, P, normalization: str = "oracle") -> float:
    """The un-expanded trace in its literal form.

    Its linear term is ``W`` times :func:`b_trace_first_order`, so it is kept
    only for comparison.
    """
    w, _, hvc, vt, dvt, hvt = _point_data(spec, P)
    lam, n = spec.lam, spec.n
    ginv = geo.contraction_metric(spec.unperturbed(), P, normalization)
    wt = w - lam * vt
    grad2 = float(dvt @ ginv @ dvt)
    out = (lam**2 * (0.5 * n - 1.0) * grad2
           - 2.0 * lam * wt * np.sum(ginv * hvt)
           - 2.0 * lam * vt * (1.0 - lam * vt / w) * np.sum(ginv * hvc)
           + 2.0 * lam**2 * grad2)
    return float(out / (4.0 * wt))


def perturbed_scalar_exact(spec: geo.SystemSpec, P) -> float:
    """``exp(-2 sigma) (R - 2(n-1) B)`` with the exact trace and true scalar."""
    R = unperturbed_scalar(spec, P, "oracle")
    B = b_trace_exact(spec, P, "oracle")
    return math.exp(-2.0 * conformal_factor(spec, P)) * (R - 2.0 * (spec.n - 1) * B)


def conformal_scalar_shift(spec: geo.SystemSpec, P, normalization: str = "oracle",
                           grad_tol: float = GRAD_TOL):
    """``(B_trace, delta_R)`` to first order, ``delta_R = R_p - Rt_p``."""
    P = np.asarray(P, dtype=float)
    _require_critical(spec, P, grad_tol)
    if spec.lam == 0.0:
        return 0.0, 0.0
    R_p = unperturbed_scalar(spec, P, normalization)
    w, _, _, vt, _, _ = _point_data(spec, P)
    B = b_trace_first_order(spec, P, normalization)
    delta_R = 2.0 * (spec.n - 1) * B - spec.lam * vt * R_p / w
    return B, float(delta_R)


def _expansion_coefficient(n: int, r: float, R_p: float) -> tuple[float, float]:
    a = r * r / (6.0 * (n + 2))
    denom = 1.0 - a * R_p
    if not denom > 0:
        raise ValidityError(
            f"1 - r^2 R_p / (6(n+2)) = {denom:.3e} <= 0 for r={r}, R_p={R_p}; use a smaller r"
        )
    return a, denom


@dataclass(frozen=True)
class EntropyShift:
    exact: float      # k_B ln(vol(Rt) / vol(R))
    linear: float     # first order in delta_R
    literal: float    # the log with the opposite sign inside

    def __iter__(self):
        return iter((self.exact, self.linear))


def entropy_shift_first_order(spec: geo.SystemSpec, r: float, R_p: float, delta_R: float,
                              k_B: float = 1.0) -> EntropyShift:
    """Entropy difference ``St - S`` of two second-order balls of radius ``r``.

    With ``a = r^2/(6(n+2))`` the exact value is
    ``k_B ln(1 + a delta_R / (1 - a R_p))``; ``linear`` keeps the first term
    of the logarithm.
    """
    a, denom = _expansion_coefficient(spec.n, r, R_p)
    x = a * delta_R / denom
    if not 1.0 + x > 0:
        raise ValidityError("perturbed second-order volume is non-positive")
    literal_arg = 1.0 - x
    literal = k_B * math.log(literal_arg) if literal_arg > 0 else math.nan
    return EntropyShift(exact=k_B * math.log1p(x), linear=k_B * x, literal=literal)


def invariance_condition_residual(spec: geo.SystemSpec, x, R_p: float) -> float:
    """``Lap Vt(x) + 3 R_p / (n-1) * Vt(x)`` with the coordinate Laplacian."""
    x = np.asarray(x, dtype=float)
    vt, _, hvt = spec.perturbation.derivs(x)
    return float(np.trace(hvt) + 3.0 * R_p / (spec.n - 1) * vt)


def invariance_bracket(spec: geo.SystemSpec, P, normalization: str = "oracle") -> float:
    """The unreduced first-order condition at ``P``.

    ``(n-1)/W [g^kl d_kd_l Vt + Vt/W g^kl d_kd_l Vc] + Vt R_p / W``;
    proportional to ``-delta_R / lam``.
    """
    w, _, hvc, vt, _, hvt = _point_data(spec, P)
    ginv = geo.contraction_metric(spec.unperturbed(), P, normalization)
    R_p = unperturbed_scalar(spec, P, normalization)
    n = spec.n
    return float((n - 1) / w * (np.sum(ginv * hvt) + vt / w * np.sum(ginv * hvc)) + vt * R_p / w)


def invariance_consistency(spec: geo.SystemSpec, P, normalization: str = "literal"):
    """Compare the unreduced bracket with ``(n-1)/W`` times the reduced residual.

    Returns ``(bracket, scaled_residual, difference)``; the two agree under
    the ``"literal"`` normalization.
    """
    w = spec.unperturbed().local(P)[0]
    R_p = unperturbed_scalar(spec, P, normalization)
    bracket = invariance_bracket(spec, P, normalization)
    scaled = (spec.n - 1) / w * invariance_condition_residual(spec, P, R_p)
    return bracket, scaled, bracket - scaled


def exact_invariance_coefficient(spec: geo.SystemSpec, P) -> float:
    """``kappa`` with ``Lap Vt + kappa Vt = 0`` cancelling the true first-order shift at ``P``."""
    w, _, hvc, _, _, _ = _point_data(spec, P)
    return float(2.0 * np.trace(hvc) / w)


def laplace_jacobi_vc(spec: geo.SystemSpec, P) -> float:
    return geo.laplace_jacobi(spec.unperturbed(), spec.Vc, P)


def mass_coefficient(spec: geo.SystemSpec, P) -> float:
    """Signed ``3 Lap_g Vc(P) / (2(E - Vc(P)))``."""
    w = spec.unperturbed().local(P)[0]
    return 3.0 * laplace_jacobi_vc(spec, P) / (2.0 * w)


def effective_mass(spec: geo.SystemSpec, P) -> float:
    return abs(mass_coefficient(spec, P))


def special_energy(spec: geo.SystemSpec, P) -> float:
    """``6/(n-2) + Vc(P)``; undefined for ``n = 2``."""
    if spec.n == 2:
        raise DomainError("special energy 6/(n-2) + Vc(P) has a pole at n = 2")
    vc = PotentialExpr(spec.Vc.ast, spec.n)
    return 6.0 / (spec.n - 2) + float(vc(np.asarray(P, dtype=float)))


def conformal_laplacian_coefficient(spec: geo.SystemSpec, P, R_p: float):
    """``(lhs, rhs)``: ``(n-2) R_p / (4(n-1))`` and ``lhs - 3 Lap_g Vc/(2(E-Vc))``."""
    n = spec.n
    lhs = (n - 2) * R_p / (4.0 * (n - 1))
    return lhs, lhs - mass_coefficient(spec, P)


@dataclass
class PerturbationReport:
    n: int
    E: float
    lam: float
    r: float
    normalization: str
    R_p: float
    sigma_P: float
    B_trace: float
    delta_R: float
    delta_R_exact: float
    delta_S: float
    delta_S_exact: float
    delta_S_literal: float
    mass: float
    mass_coefficient: float
    special_energy: float | None
    residual_coefficient: float
    invariance_residual: float
    sigma_at: Callable | None = None

    COLUMNS = ("n", "E", "lam", "r", "normalization", "R_p", "sigma_P", "B_trace", "delta_R",
               "delta_R_exact", "delta_S", "delta_S_exact", "delta_S_literal", "mass",
               "mass_coefficient", "special_energy", "residual_coefficient", "invariance_residual")

    def row(self):
        return [getattr(self, c) for c in self.COLUMNS]

    def key_values(self):
        return {c: getattr(self, c) for c in self.COLUMNS}


def perturbation_report(spec: geo.SystemSpec, P, r: float, normalization: str = "oracle",
                        k_B: float = 1.0, grad_tol: float = GRAD_TOL) -> PerturbationReport:
    geo.normalization_check(normalization)
    P = np.asarray(P, dtype=float)
    R_p = unperturbed_scalar(spec, P, normalization)
    B, delta_R = conformal_scalar_shift(spec, P, normalization, grad_tol)
    shift = entropy_shift_first_order(spec, r, R_p, delta_R, k_B)
    if spec.lam == 0.0:
        delta_R_exact = 0.0
    else:
        delta_R_exact = unperturbed_scalar(spec, P, "oracle") - perturbed_scalar_exact(spec, P)
    try:
        e_star = special_energy(spec, P)
    except DomainError:
        e_star = None
    _, rhs = conformal_laplacian_coefficient(spec, P, R_p)
    return PerturbationReport(
        n=spec.n, E=spec.E, lam=spec.lam, r=r, normalization=normalization, R_p=R_p,
        sigma_P=conformal_factor(spec, P), B_trace=B, delta_R=delta_R, delta_R_exact=delta_R_exact,
        delta_S=shift.linear, delta_S_exact=shift.exact, delta_S_literal=shift.literal,
        mass=effective_mass(spec, P), mass_coefficient=mass_coefficient(spec, P),
        special_energy=e_star, residual_coefficient=rhs,
        invariance_residual=invariance_condition_residual(spec, P, R_p),
        sigma_at=conformal_factor_field(spec),
    )

"""Jacobi metric g_ij = 2(E - V) delta_ij and its curvature.

Closed-form expressions (Christoffel symbols, Riemann and Ricci tensors,
scalar curvature) are evaluated term by term in closed form, next to a
generic-metric computation from :mod:`jacobi_entropy.generic`.

Scalar curvature comes in three flavours that differ by normalization:

``eq7``
    the closed general-point formula; equals the Euclidean trace
    ``delta^ij R_ij`` of the Ricci tensor, i.e. ``2(E - V)`` times the true
    scalar curvature.
``eq9``
    the closed critical-point formula ``(n-1) Lap V / (2(E-V))``; half of
    ``eq7`` at a critical point.
``oracle``
    the true scalar curvature ``g^ij R_ij`` of the Jacobi metric.

Downstream code chooses between ``"literal"`` (``eq9``, with Euclidean index
contractions) and ``"oracle"`` via ``normalization``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import generic
from .errors import DimensionError, DomainError, TurningPointError
from .potential import PotentialExpr

NORMALIZATIONS = ("literal", "oracle")


@dataclass(frozen=True)
class SystemSpec:
    """A mechanical system at fixed energy, optionally perturbed.

    ``V = Vc + lam * Vtilde``. ``turning_margin`` defaults to ``1e-6 * |E|``.
    """

    n: int
    E: float
    Vc: PotentialExpr
    lam: float = 0.0
    Vtilde: PotentialExpr | None = None
    turning_margin: float | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DimensionError(f"configuration space dimension must be >= 2, got {self.n}")
        for name, pot in (("Vc", self.Vc), ("Vtilde", self.Vtilde)):
            if pot is not None and pot.n > self.n:
                raise DimensionError(f"{name} has dimension {pot.n} > n={self.n}")
        if self.turning_margin is not None and self.turning_margin <= 0:
            raise ValueError("turning_margin must be positive")

    @property
    def margin(self) -> float:
        if self.turning_margin is not None:
            return self.turning_margin
        return 1e-6 * abs(self.E) if self.E != 0 else 1e-12

    @cached_property
    def potential(self) -> PotentialExpr:
        vc = self.Vc if self.Vc.n == self.n else PotentialExpr(self.Vc.ast, self.n)
        if self.lam == 0 or self.Vtilde is None:
            return vc
        return vc + self.lam * PotentialExpr(self.Vtilde.ast, self.n)

    @property
    def perturbation(self) -> PotentialExpr:
        if self.Vtilde is None:
            return PotentialExpr.constant(0.0, self.n)
        return PotentialExpr(self.Vtilde.ast, self.n)

    def unperturbed(self) -> "SystemSpec":
        return replace(self, lam=0.0)

    def with_lambda(self, lam: float) -> "SystemSpec":
        return replace(self, lam=float(lam))

    def with_energy(self, E: float) -> "SystemSpec":
        return replace(self, E=float(E))

    def kinetic(self, x, check: bool = True):
        """``E - V(x)``; raises ``TurningPointError`` within the margin."""
        x = np.asarray(x, dtype=float)
        w = self.E - self.potential(x, check=check)
        if check and np.any(w <= self.margin):
            raise TurningPointError(
                f"E - V = {np.min(w):.6g} <= turning margin {self.margin:.3g} at {x.tolist()}"
            )
        return w

    def local(self, x):
        """``(E - V, grad V, Hess V)`` at a single admissible point."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"expected a point with {self.n} coordinates, got shape {x.shape}")
        v, dv, hv = self.potential.derivs(x)
        w = float(self.E - v)
        if w <= self.margin:
            raise TurningPointError(f"E - V = {w:.6g} <= turning margin {self.margin:.3g} at {x.tolist()}")
        return w, dv, hv


def normalization_check(normalization: str) -> str:
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
    return normalization


def jacobi_metric(spec: SystemSpec, x):
    """``(g_ij, g^ij, det g)`` at ``x``."""
    w, _, _ = spec.local(x)
    eye = np.eye(spec.n)
    return 2.0 * w * eye, eye / (2.0 * w), (2.0 * w) ** spec.n


def metric_jet(spec: SystemSpec, x):
    """Metric with its first and second coordinate derivatives, for the generic path."""
    w, dv, hv = spec.local(x)
    eye = np.eye(spec.n)
    g = 2.0 * w * eye
    dg = -2.0 * dv[:, None, None] * eye
    ddg = -2.0 * hv[:, :, None, None] * eye
    return g, dg, ddg


def christoffel(spec: SystemSpec, x):
    """Closed form ``Gamma^i_jk = -(d^i_k V_j + d^i_j V_k - d_jk V_i) / (2(E-V))``."""
    w, dv, _ = spec.local(x)
    return christoffel_from_local(w, dv)


def christoffel_from_local(w, dv):
    d = np.eye(dv.shape[-1])
    return -(
        np.einsum("ik,j->ijk", d, dv) + np.einsum("ij,k->ijk", d, dv) - np.einsum("jk,i->ijk", d, dv)
    ) / (2.0 * w)


def christoffel_generic(spec: SystemSpec, x):
    g, dg, _ = metric_jet(spec, x)
    return generic.levi_civita(g, dg)


def riemann_raw(spec: SystemSpec, x):
    """Closed-form Riemann tensor in its raw index order.

    Returned array ``P[i, j, k, m]`` is antisymmetric in ``(j, k)``; all
    deltas are Euclidean and indices absent from ``{i, j, k, m}`` are summed.
    See :func:`riemann` for the conventional ordering.
    """
    w, a, H = spec.local(x)
    return _riemann_raw_local(w, a, H)


def _riemann_raw_local(w, a, H):
    d = np.eye(a.shape[-1])
    g2 = float(a @ a)

    e = np.einsum

    block1 = (
        e("ik,j,m->ijkm", d, a, a)
        - e("ij,k,m->ijkm", d, a, a)
        + e("il,jm,k,l->ijkm", d, d, a, a)
        - e("il,km,j,l->ijkm", d, d, a, a)
    ) / (2.0 * w**2)
    block2 = (
        e("ik,jm->ijkm", d, H)
        - e("ij,km->ijkm", d, H)
        + e("il,jm,kl->ijkm", d, d, H)
        - e("il,km,jl->ijkm", d, d, H)
    ) / (2.0 * w)
    # term-by-term transcription of the third block (14 terms)
    t = [
        +e("lm,ik,j,l->ijkm", d, d, a, a),          # d^l_m d^i_k V_j V_l
        -e("km,il,j,l->ijkm", d, d, a, a),          # d_km d^il V_j V_l
        +e("ij,k,m->ijkm", d, a, a),                # d^i_j V_k V_m
        +e("ik,m,j->ijkm", d, a, a),                # d^l_j d^i_k V_m V_j (dummy l)
        -e("il,jm,k,l->ijkm", d, d, a, a),          # d^il d^jm V_k V_l
        -e("ik,jm->ijkm", d, d) * g2,               # d^i_k d^rl d_jm V_l V_r
        +e("ir,jm,kl,l,r->ijkm", d, d, d, a, a),    # d^ir d_jm d^k_l V_l V_r
        -e("ij,lm,k,l->ijkm", d, d, a, a),          # d^i_j d^l_m V_k V_l
        +e("il,jm,k,l->ijkm", d, d, a, a),          # d^il d_jm V_k V_l
        -e("ik,j,m->ijkm", d, a, a),                # d^i_k V_j V_m
        -e("ij,lk,m,l->ijkm", d, d, a, a),          # d^i_j d^l_k V_m V_l
        +e("il,km,j,l->ijkm", d, d, a, a),          # d^il d_km V_j V_l
        +e("ij,km->ijkm", d, d) * g2,               # d^i_j d^rl d_km V_l V_r
        -e("in,lj,km,l,n->ijkm", d, d, d, a, a),    # d^in d^l_j d_km V_l V_n
    ]
    block3 = sum(t) / (4.0 * w**2)
    return block1 + block2 + block3


def riemann(spec: SystemSpec, x):
    """Closed-form Riemann tensor reordered to ``R^i_{jkm}``, antisymmetric in ``(k, m)``."""
    return np.einsum("imkj->ijkm", riemann_raw(spec, x))


def riemann_generic(spec: SystemSpec, x):
    g, dg, ddg = metric_jet(spec, x)
    return generic.curvature_from_jet(g, dg, ddg)["riemann"]


def ricci(spec: SystemSpec, x):
    """Closed-form Ricci tensor, with ``triangle^2 V`` read as the Laplacian."""
    w, a, H = spec.local(x)
    return _ricci_local(w, a, H)


def _ricci_local(w, a, H):
    n = a.shape[-1]
    d = np.eye(n)
    lap = np.trace(H)
    g2 = float(a @ a)
    return ((n - 2) * H + d * lap) / (2.0 * w) + (3 * (n - 2) * np.outer(a, a) - (n - 4) * d * g2) / (4.0 * w**2)


def ricci_scalar_general(spec: SystemSpec, x) -> float:
    """``(n-1) Lap V / (E-V) - (n-1)(n-6) |grad V|^2 / (4 (E-V)^2)``."""
    w, a, H = spec.local(x)
    n = spec.n
    return float((n - 1) * np.trace(H) / w - (n - 1) * (n - 6) * float(a @ a) / (4.0 * w**2))


def ricci_scalar_critical(spec: SystemSpec, x) -> float:
    """Critical-point form ``(n-1) Lap V / (2(E-V))``; the gradient is ignored."""
    w, _, H = spec.local(x)
    return float((spec.n - 1) * np.trace(H) / (2.0 * w))


def ricci_scalar_oracle(spec: SystemSpec, x) -> float:
    g, dg, ddg = metric_jet(spec, x)
    return generic.curvature_from_jet(g, dg, ddg)["scalar"]


def scalar_curvature(spec: SystemSpec, x, normalization: str = "oracle") -> float:
    normalization_check(normalization)
    if normalization == "oracle":
        return ricci_scalar_oracle(spec, x)
    return ricci_scalar_critical(spec, x)


def contraction_metric(spec: SystemSpec, x, normalization: str = "oracle"):
    """Inverse metric used for ``g^kl`` contractions under ``normalization``.

    ``"oracle"`` uses the Jacobi inverse metric; ``"literal"`` uses the
    Euclidean delta, which is what the closed-form chain of simplifications
    implicitly does.
    """
    normalization_check(normalization)
    if normalization == "literal":
        return np.eye(spec.n)
    return jacobi_metric(spec, x)[1]


@dataclass(frozen=True)
class CurvatureBundle:
    point: np.ndarray
    metric: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar_general: float
    scalar_eq9: float
    scalar_oracle: float
    christoffel_discrepancy: float
    riemann_discrepancy: float

    @property
    def scalar_eq7(self) -> float:
        return self.scalar_general


def curvature(spec: SystemSpec, x) -> CurvatureBundle:
    """Every curvature quantity at ``x``, closed forms next to the generic path."""
    x = np.asarray(x, dtype=float)
    g, dg, ddg = metric_jet(spec, x)
    oracle = generic.curvature_from_jet(g, dg, ddg)
    gam = christoffel(spec, x)
    rie = riemann(spec, x)
    return CurvatureBundle(
        point=x.copy(),
        metric=g,
        christoffel=gam,
        riemann=rie,
        ricci=ricci(spec, x),
        scalar_general=ricci_scalar_general(spec, x),
        scalar_eq9=ricci_scalar_critical(spec, x),
        scalar_oracle=oracle["scalar"],
        christoffel_discrepancy=float(np.max(np.abs(gam - oracle["christoffel"]))),
        riemann_discrepancy=float(np.max(np.abs(rie - oracle["riemann"]))),
    )


def sectional_curvature(spec: SystemSpec, x, Y, Z) -> float:
    g = jacobi_metric(spec, x)[0]
    low = generic.lower(g, riemann(spec, x))
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    den = (Y @ g @ Y) * (Z @ g @ Z) - (Y @ g @ Z) ** 2
    if abs(den) < 1e-14:
        raise DomainError("sectional curvature needs two linearly independent vectors")
    return float(np.einsum("ijkm,i,j,k,m->", low, Y, Z, Y, Z) / den)


def ricci_direction(spec: SystemSpec, x, Y) -> float:
    Y = np.asarray(Y, dtype=float)
    g = jacobi_metric(spec, x)[0]
    den = Y @ g @ Y
    if den <= 0:
        raise DomainError("Ricci curvature needs a nonzero direction")
    return float(Y @ ricci(spec, x) @ Y / den)


def laplace_jacobi(spec: SystemSpec, f: PotentialExpr, x) -> float:
    """Laplace-Beltrami operator of the Jacobi metric applied to ``f``.

    Evaluated as ``g^ij (d_i d_j f - Gamma^k_ij d_k f)``, which equals the
    divergence form ``g^{-1/2} d_i(g^ij g^{1/2} d_j f)``.
    """
    x = np.asarray(x, dtype=float)
    ginv = jacobi_metric(spec, x)[1]
    gam = christoffel(spec, x)
    _, df, hf = PotentialExpr(f.ast, spec.n).derivs(x)
    return float(np.einsum("ij,ij->", ginv, hf - np.einsum("kij,k->ij", gam, df)))

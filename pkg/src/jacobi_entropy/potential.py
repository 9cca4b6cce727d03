"""Analytic potentials V: R^n -> R with exact first and second derivatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from numbers import Real

import numpy as np

from . import expr as ex
from .errors import DimensionError, DomainError

log = logging.getLogger(__name__)

DEGENERACY_RTOL = 1e-8


class PotentialExpr:
    """An immutable parsed potential in ``n`` variables.

    Derivatives come from symbolic differentiation of the expression tree,
    compiled once to numpy code. Points may be a single vector of length
    ``n`` or a batch of shape ``(N, n)``.

    Supports ``+ - * /`` with other potentials and real scalars, which
    builds new trees (no numerical composition).
    """

    def __init__(self, ast: ex.Node, n: int, source: str | None = None):
        if n < 1:
            raise DimensionError(f"dimension must be a positive integer, got {n}")
        used = ex.variables(ast)
        if used and max(used) >= n:
            raise DimensionError(f"variable x{max(used) + 1} out of range for dimension n={n}")
        self.ast = ast
        self.n = int(n)
        self.source = source if source is not None else ex.to_source(ast)

    def __repr__(self):
        return f"PotentialExpr({self.source!r}, n={self.n})"

    def __eq__(self, other):
        return isinstance(other, PotentialExpr) and self.n == other.n and self.ast == other.ast

    def __hash__(self):
        return hash((self.ast, self.n))

    @classmethod
    def constant(cls, value: float, n: int) -> "PotentialExpr":
        return cls(ex.const(value), n)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.ast, ex.Const)

    # -- trees ------------------------------------------------------------

    @cached_property
    def gradient_trees(self) -> tuple:
        return tuple(ex.diff(self.ast, i) for i in range(self.n))

    @cached_property
    def hessian_trees(self) -> tuple:
        g = self.gradient_trees
        return tuple(tuple(ex.diff(g[i], j) for j in range(self.n)) for i in range(self.n))

    def partial(self, i: int) -> "PotentialExpr":
        """d/dx_{i+1} as a new potential (0-based ``i``)."""
        return PotentialExpr(self.gradient_trees[i], self.n)

    def laplacian(self) -> "PotentialExpr":
        node = ex.ZERO
        for i in range(self.n):
            node = ex.add(node, self.hessian_trees[i][i])
        return PotentialExpr(node, self.n)

    # -- compiled evaluation ----------------------------------------------

    @cached_property
    def _f0(self):
        return ex.compile_nodes([self.ast])

    @cached_property
    def _f1(self):
        return ex.compile_nodes(self.gradient_trees)

    @cached_property
    def _f2(self):
        # upper triangle only; symmetric by construction
        return ex.compile_nodes([self.hessian_trees[i][j] for i in range(self.n) for j in range(i, self.n)])

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"point has {x.shape[-1]} coordinates, potential expects {self.n}")
        return x, np.moveaxis(x, -1, 0)

    def derivs(self, x, order: int = 2, check: bool = True):
        """Value, gradient and Hessian at ``x``.

        Returns ``(value, gradient, hessian)`` with entries ``None`` above
        ``order``. With ``check`` a non-finite result raises ``DomainError``.
        """
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        x, xt = self._prepare(x)
        batch = x.shape[:-1]
        with np.errstate(all="ignore"):
            value = np.broadcast_to(np.asarray(self._f0(xt)[0], dtype=float), batch).copy()
            grad = hess = None
            if order >= 1:
                parts = self._f1(xt)
                grad = np.empty(batch + (self.n,))
                for i, p in enumerate(parts):
                    grad[..., i] = p
            if order >= 2:
                parts = self._f2(xt)
                hess = np.empty(batch + (self.n, self.n))
                k = 0
                for i in range(self.n):
                    for j in range(i, self.n):
                        hess[..., i, j] = parts[k]
                        hess[..., j, i] = parts[k]
                        k += 1
        if check:
            for name, arr in (("value", value), ("gradient", grad), ("Hessian", hess)):
                if arr is not None and not np.all(np.isfinite(arr)):
                    raise DomainError(f"potential {self.source!r} has non-finite {name} at {x.tolist()}")
        return value, grad, hess

    def __call__(self, x, check: bool = True):
        return self.derivs(x, order=0, check=check)[0]

    def gradient(self, x):
        return self.derivs(x, order=1)[1]

    def hessian(self, x):
        return self.derivs(x, order=2)[2]

    # -- algebra ----------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, PotentialExpr):
            return other.ast, max(self.n, other.n)
        if isinstance(other, Real):
            return ex.const(other), self.n
        return None, None

    def _binary(self, other, op, reflected=False):
        node, n = self._coerce(other)
        if node is None:
            return NotImplemented
        a, b = (node, self.ast) if reflected else (self.ast, node)
        return PotentialExpr(op(a, b), n)

    def __add__(self, other):
        return self._binary(other, ex.add)

    def __radd__(self, other):
        return self._binary(other, ex.add, reflected=True)

    def __sub__(self, other):
        return self._binary(other, ex.sub)

    def __rsub__(self, other):
        return self._binary(other, ex.sub, reflected=True)

    def __mul__(self, other):
        return self._binary(other, ex.mul)

    def __rmul__(self, other):
        return self._binary(other, ex.mul, reflected=True)

    def __truediv__(self, other):
        return self._binary(other, ex.div)

    def __rtruediv__(self, other):
        return self._binary(other, ex.div, reflected=True)

    def __neg__(self):
        return PotentialExpr(ex.neg(self.ast), self.n)

    def apply(self, name: str) -> "PotentialExpr":
        """Wrap in one of the DSL functions, e.g. ``V.apply("ln")``."""
        return PotentialExpr(ex.call(name, self.ast), self.n)


def parse_potential(source: str, n: int) -> PotentialExpr:
    """Parse DSL text into a potential of dimension ``n``.

    Raises ``ParseError`` (with character position) for malformed text and
    ``DimensionError`` when a variable index exceeds ``n``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise DimensionError(f"dimension must be a positive integer, got {n!r}")
    return PotentialExpr(ex.parse(source), int(n), source=source)


def eval_derivs(V: PotentialExpr, x, order: int = 2):
    return V.derivs(x, order=order)


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    hessian: np.ndarray
    eigenvalues: np.ndarray
    index: int
    degenerate: bool
    gradient_norm: float

    @property
    def is_minimum(self) -> bool:
        return self.index == 0 and not self.degenerate

    def near_zero_eigenvalue(self) -> float:
        return float(self.eigenvalues[np.argmin(np.abs(self.eigenvalues))])


@dataclass
class SeedOutcome:
    seed: np.ndarray
    converged: bool
    iterations: int
    location: np.ndarray | None = None
    message: str = ""


@dataclass
class CriticalPointSearch:
    points: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    @property
    def failures(self):
        return [s for s in self.seeds if not s.converged]


def classify(V: PotentialExpr, x, rtol: float = DEGENERACY_RTOL, grad_tol: float | None = None) -> CriticalPoint:
    """Hessian index and degeneracy at ``x``.

    An eigenvalue counts as zero below ``rtol * max|eig|``. With ``grad_tol``
    the threshold is raised to ``10 sqrt(grad_tol * max|eig|)``, the size a
    zero eigenvalue can appear to have at a point located only to that
    gradient tolerance.
    """
    _, grad, hess = V.derivs(x)
    hess = 0.5 * (hess + hess.T)
    eig = np.linalg.eigvalsh(hess)
    scale = np.max(np.abs(eig))
    threshold = rtol * scale
    if grad_tol is not None:
        threshold = max(threshold, 10.0 * np.sqrt(grad_tol * scale))
    degenerate = bool(scale == 0.0 or np.any(np.abs(eig) < threshold))
    return CriticalPoint(
        location=np.array(x, dtype=float),
        hessian=hess,
        eigenvalues=eig,
        index=int(np.sum(eig < 0)),
        degenerate=degenerate,
        gradient_norm=float(np.linalg.norm(grad)),
    )


def _newton(V, x0, grad_tol, max_iter, max_step):
    x = np.array(x0, dtype=float)
    for it in range(max_iter + 1):
        _, g, H = V.derivs(x)
        gnorm = np.linalg.norm(g)
        if gnorm <= grad_tol:
            return x, it, ""
        if it == max_iter:
            break
        eig = np.abs(np.linalg.eigvalsh(H))
        if eig.max() == 0.0:
            return None, it, "Hessian vanishes identically"
        if eig.min() < 1e-12 * eig.max():
            step = -np.linalg.pinv(H, rcond=1e-12) @ g
        else:
            step = -np.linalg.solve(H, g)
        snorm = np.linalg.norm(step)
        if snorm == 0.0:
            return None, it, "Newton step vanished before gradient did"
        if snorm > max_step:
            step *= max_step / snorm
        x = x + step
    return None, max_iter, f"no convergence in {max_iter} iterations (|grad V|={gnorm:.3e})"


def search_critical_points(V: PotentialExpr, seeds, grad_tol: float = 1e-10,
                           max_iter: int = 100, max_step: float = 1.0) -> CriticalPointSearch:
    """Newton iteration on grad V from every seed, with per-seed outcomes."""
    seeds = [np.asarray(s, dtype=float) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    if grad_tol <= 0:
        raise ValueError("grad_tol must be positive")
    out = CriticalPointSearch()
    for seed in seeds:
        try:
            x, iters, msg = _newton(V, seed, grad_tol, max_iter, max_step)
        except DomainError as err:
            x, iters, msg = None, 0, str(err)
        if x is None:
            out.seeds.append(SeedOutcome(seed, False, iters, None, msg))
            log.info("seed %s did not converge: %s", seed.tolist(), msg)
            continue
        out.seeds.append(SeedOutcome(seed, True, iters, x))
        if any(np.linalg.norm(x - cp.location) <= 10 * grad_tol for cp in out.points):
            continue
        out.points.append(classify(V, x, grad_tol=grad_tol))
    return out


def find_critical_points(V: PotentialExpr, seeds, grad_tol: float = 1e-10, max_iter: int = 100):
    return search_critical_points(V, seeds, grad_tol, max_iter).points


def axis_grid(center, half_width, per_axis: int = 3):
    """Seeds on an axis-aligned lattice around ``center``."""
    center = np.asarray(center, dtype=float)
    axes = [np.linspace(c - half_width, c + half_width, per_axis) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)

"""Dirichlet problems for the frozen-coefficient invariance operator on a ball.

At a critical point ``P`` the Laplace-Beltrami operator of the Jacobi
metric is ``Lap / (2 W_P)`` with ``W_P = E - Vc(P)``, so the equation

    Lap_g Vt + c Vt = 0,   c = 3 Lap_g Vc(P) / (2 W_P)   (signed)

is a constant-coefficient Helmholtz problem. The geodesic radius ``r`` maps
to the coordinate radius ``rho = r / sqrt(2 W_P)``.

Discretisation: Cartesian lattice centred at ``P``. Interior nodes use the
standard 2n+1 point stencil; where an arm of the stencil leaves the ball it
is shortened to end on the sphere and the Dirichlet value is taken there
(Shortley-Weller), which keeps the scheme second-order.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import expr as ex
from . import geometry as geo
from . import perturbation as pt
from . import volume as vol
from .errors import ConvergenceError, DomainError, ResonanceError
from .potential import PotentialExpr
from .records import atomic_write_bytes, atomic_write_text

log = logging.getLogger(__name__)

RESONANCE_TOL = 1e-10
DEFAULT_TOL = 1e-8
# default h is the ball radius over this
DEFAULT_DIVISIONS = 32


# -- lattice ------------------------------------------------------------------


@dataclass
class Lattice:
    center: np.ndarray
    h: float
    rho: float
    K: int
    index: np.ndarray          # (N, n) integer offsets of interior nodes
    node_id: np.ndarray        # full (2K+1)^n array, -1 outside

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def coords(self) -> np.ndarray:
        return self.center + self.h * self.index

    @property
    def size(self) -> int:
        return self.index.shape[0]


def build_lattice(center, rho: float, h: float) -> Lattice:
    center = np.asarray(center, dtype=float)
    n = center.shape[0]
    if not (rho > 0 and h > 0):
        raise ValueError("radius and spacing must be positive")
    if h >= rho:
        raise ValueError(f"spacing h={h} leaves fewer than 3 interior nodes per axis (rho={rho:.4g})")
    K = int(math.ceil(rho / h))
    axis = np.arange(-K, K + 1)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=-1)
    dist = h * np.linalg.norm(offsets, axis=1)
    # nodes lying (numerically) on the sphere are treated as boundary
    inside = dist < rho - 1e-9 * h
    node_id = np.full(offsets.shape[0], -1, dtype=np.int64)
    node_id[inside] = np.arange(int(inside.sum()))
    return Lattice(center=center, h=h, rho=rho, K=K, index=offsets[inside],
                   node_id=node_id.reshape((2 * K + 1,) * n))


def _arm_to_sphere(d, axis, sign, rho):
    """Distance along ``sign * e_axis`` from offsets ``d`` to the sphere."""
    di = sign * d[:, axis]
    rest = np.sum(d * d, axis=1) - rho * rho
    return -di + np.sqrt(np.maximum(di * di - rest, 0.0))


@dataclass
class Discretisation:
    lattice: Lattice
    matrix: sps.csc_matrix      # unscaled discrete Laplacian on interior nodes
    boundary_coeff: sps.csr_matrix  # maps boundary-point values into the rhs
    boundary_points: np.ndarray


def discretise(lattice: Lattice) -> Discretisation:
    n, h, rho, K = lattice.n, lattice.h, lattice.rho, lattice.K
    idx = lattice.index
    N = lattice.size
    d = h * idx.astype(float)
    rows, cols, vals = [], [], []
    b_rows, b_cols, b_vals = [], [], []
    points = []
    diag = np.zeros(N)
    n_bpts = 0
    ids = np.arange(N)
    for axis in range(n):
        arms = {}
        for sign in (1, -1):
            nb = idx.copy()
            nb[:, axis] += sign
            in_box = np.all(np.abs(nb) <= K, axis=1)
            nb_id = np.full(N, -1, dtype=np.int64)
            nb_id[in_box] = lattice.node_id[tuple(nb[in_box].T + K)]
            length = np.full(N, h)
            out = nb_id < 0
            length[out] = np.minimum(_arm_to_sphere(d[out], axis, sign, rho), h)
            arms[sign] = (nb_id, length, out)
        (id_r, hr, out_r), (id_l, hl, out_l) = arms[1], arms[-1]
        coef_r = 2.0 / (hr * (hl + hr))
        coef_l = 2.0 / (hl * (hl + hr))
        diag -= 2.0 / (hl * hr)
        for nb_id, coef, out, length, sign in ((id_r, coef_r, out_r, hr, 1), (id_l, coef_l, out_l, hl, -1)):
            inner = ~out
            rows.append(ids[inner])
            cols.append(nb_id[inner])
            vals.append(coef[inner])
            if np.any(out):
                pts = d[out].copy()
                pts[:, axis] += sign * length[out]
                m = pts.shape[0]
                points.append(pts)
                b_rows.append(ids[out])
                b_cols.append(np.arange(n_bpts, n_bpts + m))
                b_vals.append(coef[out])
                n_bpts += m
    rows.append(ids)
    cols.append(ids)
    vals.append(diag)
    A = sps.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    if n_bpts:
        Bm = sps.csr_matrix((np.concatenate(b_vals), (np.concatenate(b_rows), np.concatenate(b_cols))),
                            shape=(N, n_bpts))
        bpts = lattice.center + np.concatenate(points)
    else:
        Bm = sps.csr_matrix((N, 0))
        bpts = np.zeros((0, n))
    return Discretisation(lattice=lattice, matrix=A, boundary_coeff=Bm, boundary_points=bpts)


# -- boundary data ------------------------------------------------------------


def boundary_function(data) -> Callable:
    """Normalise Dirichlet data: a constant, a potential, or a callable on ``(N, n)`` points."""
    if isinstance(data, PotentialExpr):
        return lambda x: np.asarray(data(x), dtype=float)
    if callable(data):
        return lambda x: np.asarray(data(x), dtype=float)
    value = float(data)
    return lambda x: np.full(np.asarray(x).shape[0], value)


# -- solution -----------------------------------------------------------------


@dataclass
class GridSolution:
    center: np.ndarray
    h: float
    r: float
    rho: float
    nodes: np.ndarray            # interior node coordinates
    values: np.ndarray
    boundary_points: np.ndarray
    boundary_values: np.ndarray
    mass_used: float
    coefficient: float           # signed zero-order coefficient of the operator
    residual_norm: float
    iterations: int
    solver_tol: float
    lattice: Lattice = field(repr=False)
    smallest_eigenvalue: float | None = None

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def dense(self) -> np.ndarray:
        """Values on the full ``(2K+1)^n`` lattice, NaN outside the ball."""
        lat = self.lattice
        out = np.full(lat.node_id.shape, np.nan)
        out[tuple(lat.index.T + lat.K)] = self.values
        return out

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def to_csv(self, path):
        header = [f"# schema=1 h={float(self.h)!r} r={float(self.r)!r} rho={float(self.rho)!r} M={float(self.mass_used)!r}"]
        cols = [f"x{i + 1}" for i in range(self.n)] + ["value", "kind"]
        lines = header + [",".join(cols)]
        for x, v in zip(self.nodes, self.values):
            lines.append(",".join([repr(float(c)) for c in x] + [repr(float(v)), "interior"]))
        for x, v in zip(self.boundary_points, self.boundary_values):
            lines.append(",".join([repr(float(c)) for c in x] + [repr(float(v)), "boundary"]))
        atomic_write_text(path, "\n".join(lines) + "\n")

    def to_binary(self, path):
        """One text header line then little-endian float64 lattice values (C order)."""
        dense = self.dense()
        dims = "x".join(str(s) for s in dense.shape)
        header = f"dims={dims} h={float(self.h)!r} r={float(self.r)!r} rho={float(self.rho)!r} M={float(self.mass_used)!r}\n"
        atomic_write_bytes(path, header.encode("ascii") + dense.astype("<f8").tobytes(order="C"))

    def to_potential(self, degree: int = 6) -> PotentialExpr:
        """Least-squares polynomial in ``(x - P)/rho`` through interior and boundary values."""
        pts = np.concatenate([self.nodes, self.boundary_points])
        vals = np.concatenate([self.values, self.boundary_values])
        return fit_polynomial(pts, vals, self.center, self.rho, degree)


def read_binary(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        meta = dict(item.split("=", 1) for item in header)
        dims = tuple(int(s) for s in meta.pop("dims").split("x"))
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(dims)
    return data, {k: float(v) for k, v in meta.items()}


def _monomials(n: int, degree: int):
    return [a for d in range(degree + 1) for a in itertools.product(range(d + 1), repeat=n) if sum(a) == d]


def fit_polynomial(points, values, center, scale, degree) -> PotentialExpr:
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    s = (points - center) / scale
    exps = _monomials(n, degree)
    design = np.stack([np.prod(s ** np.array(a), axis=1) for a in exps], axis=1)
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    node = ex.ZERO
    for c, a in zip(coef, exps):
        if c == 0.0:
            continue
        term = ex.const(float(c))
        for i, p in enumerate(a):
            if p:
                u = ex.div(ex.sub(ex.Var(i), ex.const(float(center[i]))), ex.const(float(scale)))
                term = ex.mul(term, ex.power(u, p))
        node = ex.add(node, term)
    return PotentialExpr(node, n)


# -- solve --------------------------------------------------------------------


def coordinate_radius(spec: geo.SystemSpec, ball: vol.BallSpec) -> float:
    w = spec.unperturbed().local(ball.center)[0]
    return ball.radius / math.sqrt(2.0 * w)


def _factor(A):
    try:
        return spla.splu(sps.csc_matrix(A))
    except RuntimeError as err:
        raise ResonanceError(f"discrete operator is singular ({err}); eigenvalue 0", eigenvalue=0.0) from err


def smallest_eigenvalue(A, lu=None) -> float:
    """Eigenvalue of smallest magnitude, by shift-invert about zero."""
    N = A.shape[0]
    lu = _factor(A) if lu is None else lu
    if N <= 2:
        ev = np.linalg.eigvals(A.toarray())
        return float(np.real(ev[np.argmin(np.abs(ev))]))
    op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    v0 = np.ones(N) / math.sqrt(N)
    mu = spla.eigs(op, k=1, which="LM", v0=v0, return_eigenvectors=False, tol=1e-12)
    return float(np.real(1.0 / mu[0]))


def solve_invariance(spec: geo.SystemSpec, ball: vol.BallSpec, boundary=0.0, h: float | None = None,
                     solver_tol: float = DEFAULT_TOL, x0=None, max_iter: int = 50,
                     coefficient: float | None = None, check_resonance: bool = True) -> GridSolution:
    """Solve ``Lap_g Vt + c Vt = 0`` in the ball with Dirichlet ``boundary`` data.

    ``c`` defaults to the signed mass coefficient at the ball centre.
    """
    P = ball.center
    w = spec.unperturbed().local(P)[0]
    rho = coordinate_radius(spec, ball)
    h = ball.radius / DEFAULT_DIVISIONS if h is None else float(h)
    if solver_tol <= 0:
        raise ValueError("solver_tol must be positive")
    c = pt.mass_coefficient(spec, P) if coefficient is None else float(coefficient)
    disc = discretise(build_lattice(P, rho, h))
    lat = disc.lattice
    A = sps.csc_matrix(disc.matrix / (2.0 * w) + c * sps.identity(lat.size, format="csc"))
    bvals = boundary_function(boundary)(disc.boundary_points) if disc.boundary_points.size else np.zeros(0)
    rhs = -(disc.boundary_coeff @ bvals) / (2.0 * w)

    lu = _factor(A)
    lam_min = None
    if check_resonance:
        lam_min = smallest_eigenvalue(A, lu)
        if abs(lam_min) < RESONANCE_TOL:
            raise ResonanceError(
                f"operator is resonant: smallest eigenvalue {lam_min:.3e} (|.| < {RESONANCE_TOL:g})",
                eigenvalue=lam_min,
            )
    u = np.zeros(lat.size) if x0 is None else np.array(np.broadcast_to(x0, (lat.size,)), dtype=float)
    iterations = 0
    res = rhs - A @ u
    res_norm = float(np.max(np.abs(res))) if res.size else 0.0
    while res_norm > solver_tol:
        if iterations >= max_iter:
            raise ConvergenceError(f"residual {res_norm:.3e} above tolerance after {iterations} sweeps")
        u = u + lu.solve(res)
        iterations += 1
        res = rhs - A @ u
        new_norm = float(np.max(np.abs(res)))
        if not np.isfinite(new_norm):
            raise ConvergenceError("solution diverged")
        res_norm = new_norm
    return GridSolution(
        center=P.copy(), h=h, r=ball.radius, rho=rho, nodes=lat.coords, values=u,
        boundary_points=disc.boundary_points, boundary_values=bvals,
        mass_used=abs(c), coefficient=c, residual_norm=res_norm, iterations=iterations,
        solver_tol=solver_tol, lattice=lat, smallest_eigenvalue=lam_min,
    )


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    zero_tol: float
    contains_zero: bool


def operator_spectrum(spec: geo.SystemSpec, ball: vol.BallSpec, h: float, k: int = 6,
                      normalization: str = "oracle", shift: float = 0.0,
                      zero_tol: float = 1e-8) -> Spectrum:
    """``k`` smallest-magnitude Dirichlet eigenvalues of ``Lap_g + (n-2) R_p/(4(n-1)) + shift``."""
    P = ball.center
    n = spec.n
    w = spec.unperturbed().local(P)[0]
    R_p = geo.scalar_curvature(spec.unperturbed(), P, normalization)
    disc = discretise(build_lattice(P, coordinate_radius(spec, ball), h))
    N = disc.lattice.size
    c = (n - 2) * R_p / (4.0 * (n - 1)) + shift
    A = sps.csc_matrix(disc.matrix / (2.0 * w) + c * sps.identity(N, format="csc"))
    if k >= N - 1:
        ev = np.linalg.eigvals(A.toarray())
    else:
        # a tiny offset keeps the shift-invert factorisation regular on exact resonance
        sigma = 1e-9 * max(1.0, float(abs(A.diagonal()).max()))
        try:
            ev = spla.eigs(A, k=k, sigma=sigma, which="LM", return_eigenvectors=False,
                           v0=np.ones(N) / math.sqrt(N), tol=1e-12)
        except spla.ArpackNoConvergence as err:
            raise ConvergenceError(f"eigenvalue iteration did not converge: {err}") from err
    ev = ev[np.argsort(np.abs(ev))][:k]
    if np.max(np.abs(np.imag(ev))) > 1e-8 * max(1.0, float(np.max(np.abs(ev)))):
        log.warning("discrete spectrum has complex pairs; reporting real parts")
    ev = np.real(ev)
    ev = ev[np.argsort(np.abs(ev), kind="stable")]
    return Spectrum(eigenvalues=ev, zero_tol=zero_tol, contains_zero=bool(np.min(np.abs(ev)) < zero_tol))


# -- entropy verification -----------------------------------------------------


@dataclass
class InvarianceTable:
    lambdas: np.ndarray
    delta_S: np.ndarray
    volumes: np.ndarray
    std_errors: np.ndarray
    base_volume: float
    slope: float
    aborted: int
    samples: int
    seed: int

    COLUMNS = ("lambda", "delta_S", "vol", "vol_stderr", "vol0", "slope")

    def rows(self):
        return [[lam, ds, v, se, self.base_volume, self.slope]
                for lam, ds, v, se in zip(self.lambdas, self.delta_S, self.volumes, self.std_errors)]


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def entropy_shift_twin(spec: geo.SystemSpec, ball: vol.BallSpec, Vtilde: PotentialExpr, lambdas,
                       samples: int, seed: int, rtol: float = 1e-12, antithetic: bool = True,
                       k_B: float = 1.0, workers: int = 1, max_excursion: float | None = None):
    """``St - S`` from volume runs that share every sampled direction."""
    lambdas = np.asarray(lambdas, dtype=float)
    base = spec.unperturbed()
    dirs = vol.sample_directions(spec.n, samples, seed, antithetic)
    est0 = vol.ball_volume_numeric(base, ball, samples, seed, rtol=rtol, antithetic=antithetic,
                                   directions=dirs, workers=workers)
    volumes, errs, dS = [], [], []
    aborted = est0.aborted_turning + est0.failed
    for lam in lambdas:
        sp = geo.SystemSpec(spec.n, spec.E, spec.Vc, float(lam), Vtilde, spec.turning_margin)
        est = vol.ball_volume_numeric(sp, ball, samples, seed, rtol=rtol, antithetic=antithetic,
                                      directions=dirs, workers=workers, check_cap=False)
        if max_excursion is not None and est.max_excursion > max_excursion:
            raise DomainError(
                f"geodesics reach {est.max_excursion:.4g} from P, outside the solution grid ({max_excursion:.4g})"
            )
        aborted += est.aborted_turning + est.failed
        volumes.append(est.volume)
        errs.append(est.std_error)
        dS.append(k_B * (math.log(est.volume) - math.log(est0.volume)))
    return InvarianceTable(
        lambdas=lambdas, delta_S=np.array(dS), volumes=np.array(volumes), std_errors=np.array(errs),
        base_volume=est0.volume, slope=loglog_slope(lambdas, dS), aborted=aborted,
        samples=samples, seed=seed,
    )


def verify_entropy_invariance(spec: geo.SystemSpec, ball: vol.BallSpec, solution: GridSolution,
                              lambdas, samples: int, seed: int, degree: int = 6,
                              rtol: float = 1e-12, workers: int = 1) -> InvarianceTable:
    """Twin Monte-Carlo entropy shifts for the perturbation given by ``solution``.

    The grid solution is turned into a smooth polynomial so that geodesics
    can see its second derivatives; antithetic direction pairs are used.
    """
    Vt = solution.to_potential(degree)
    box = (solution.lattice.K + 1) * solution.h
    return entropy_shift_twin(spec, ball, Vt, lambdas, samples, seed, rtol=rtol, antithetic=True,
                              workers=workers, max_excursion=box)

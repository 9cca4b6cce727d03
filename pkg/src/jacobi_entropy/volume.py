"""Geodesic-ball volumes and Boltzmann entropy under the Jacobi metric.

Two routes to ``vol B(P, r)``:

* the second-order expansion ``omega_n r^n (1 - R_p r^2 / (6(n+2)))``;
* Monte-Carlo over unit directions at ``P``. Each direction is shot along a
  geodesic together with ``n - 1`` transversal Jacobi fields
  (``J(0) = 0``, ``DJ(0) = e_i``); the radial element
  ``sqrt(det g(J_a, J_b))`` is accumulated along arclength up to ``r``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize
from scipy.special import gammaln

from . import geometry as geo
from .errors import DomainError, ValidityError
from .integrate import ABORTED, DONE, FAILED, integrate_rows

log = logging.getLogger(__name__)

CHUNK = 4096


def unit_ball_volume(n: int) -> float:
    """``omega_n = pi^(n/2) / Gamma(n/2 + 1)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.exp(0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0))


def unit_sphere_area(n: int) -> float:
    """Area ``alpha_{n-1} = n omega_n`` of the unit sphere bounding the n-ball."""
    return n * unit_ball_volume(n)


@dataclass(frozen=True)
class BallSpec:
    """Geodesic ball of radius ``radius`` (Jacobi arclength) about ``center``.

    ``cap`` bounds the admissible radius; ``None`` means the default
    ``0.25 * distance to the nearest turning point along coordinate axes``,
    applied by :func:`validate_ball`.
    """

    center: np.ndarray
    radius: float
    cap: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @property
    def n(self) -> int:
        return self.center.shape[0]


def _turning_distance_along(spec, P, direction, s_max):
    w = lambda s: spec.E - spec.potential(P + s * direction, check=False) - spec.margin  # noqa: E731
    if not w(0.0) > 0:
        return 0.0
    # march outward geometrically until the sign changes
    lo, hi = 0.0, 1e-3 * max(1.0, float(np.linalg.norm(P)))
    while hi < s_max:
        val = w(hi)
        if not np.isfinite(val) or val <= 0:
            break
        lo, hi = hi, hi * 1.5
    else:
        return math.inf
    if not np.isfinite(w(hi)):
        # domain edge of the potential: bisect on finiteness
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.isfinite(w(mid)) and w(mid) > 0:
                lo = mid
            else:
                hi = mid
        s_star = lo
    else:
        s_star = optimize.brentq(w, lo, hi, xtol=1e-14, rtol=1e-12)
    length, _ = sp_integrate.quad(
        lambda s: math.sqrt(max(2.0 * (spec.E - spec.potential(P + s * direction, check=False)), 0.0)),
        0.0, s_star, limit=200,
    )
    return length


def turning_point_distance(spec: geo.SystemSpec, P, s_max: float = 1e3) -> float:
    """Jacobi arclength from ``P`` to the nearest turning point along the +-coordinate axes."""
    P = np.asarray(P, dtype=float)
    best = math.inf
    for i in range(spec.n):
        for sign in (1.0, -1.0):
            e = np.zeros(spec.n)
            e[i] = sign
            best = min(best, _turning_distance_along(spec, P, e, s_max * (1 + np.linalg.norm(P))))
    return best


def default_radius_cap(spec: geo.SystemSpec, P) -> float:
    return 0.25 * turning_point_distance(spec, P)


def validate_ball(spec: geo.SystemSpec, ball: BallSpec) -> float:
    """Check the radius against its cap; returns the cap that was applied."""
    if ball.n != spec.n:
        raise ValueError(f"ball centre has {ball.n} coordinates, system has n={spec.n}")
    spec.local(ball.center)
    cap = ball.cap if ball.cap is not None else default_radius_cap(spec, ball.center)
    if ball.radius > cap:
        raise ValidityError(f"radius {ball.radius} exceeds the admissible cap {cap:.6g}; use a smaller r")
    return cap


def ball_volume_expansion(spec: geo.SystemSpec, ball: BallSpec, R_p: float) -> float:
    n, r = spec.n, ball.radius
    omega = unit_ball_volume(n)
    vol = omega * r**n - omega * r ** (n + 2) * R_p / (6.0 * (n + 2))
    if not vol > 0:
        raise ValidityError(
            f"second-order volume is non-positive ({vol:.3e}) for r={r}, R_p={R_p}; use a smaller r"
        )
    return vol


def entropy(volume: float, k_B: float = 1.0) -> float:
    if not volume > 0:
        raise DomainError(f"entropy needs a positive volume, got {volume}")
    return k_B * math.log(volume)


# -- geodesics with Jacobi fields -------------------------------------------


def complement_basis(u):
    """Orthonormal bases of the complements of unit rows ``u``: shape ``(N, n-1, n)``.

    Built from the Householder reflection that maps ``e_1`` to ``-sign(u_1) u``.
    """
    u = np.asarray(u, dtype=float)
    N, n = u.shape
    s = np.where(u[:, 0] >= 0, 1.0, -1.0)
    w = u.copy()
    w[:, 0] += s
    wn = np.sum(w * w, axis=1)
    H = np.eye(n)[None] - 2.0 * w[:, :, None] * w[:, None, :] / wn[:, None, None]
    return np.ascontiguousarray(np.transpose(H[:, :, 1:], (0, 2, 1)))


class GeodesicSystem:
    """Right-hand side for a geodesic with ``n - 1`` co-moving Jacobi fields.

    State layout per row: ``x (n) | v (n) | J (m*n) | DJ/dt coordinates (m*n) | q``
    with ``m = n - 1`` and ``q`` the accumulated radial volume.
    """

    def __init__(self, spec: geo.SystemSpec):
        self.spec = spec
        self.n = spec.n
        self.m = spec.n - 1
        self.dim = 2 * self.n + 2 * self.m * self.n + 1

    def split(self, y):
        n, m = self.n, self.m
        N = y.shape[0]
        x = y[:, :n]
        v = y[:, n:2 * n]
        J = y[:, 2 * n:2 * n + m * n].reshape(N, m, n)
        Jp = y[:, 2 * n + m * n:2 * n + 2 * m * n].reshape(N, m, n)
        return x, v, J, Jp, y[:, -1]

    def kinetic(self, x):
        return self.spec.E - self.spec.potential(x, check=False)

    def __call__(self, y):
        x, v, J, Jp, _ = self.split(y)
        N = y.shape[0]
        val, dV, HV = self.spec.potential.derivs(x, check=False)
        W = self.spec.E - val
        phi = -dV / (2.0 * W)[:, None]
        Phi = -HV / (2.0 * W)[:, None, None] - dV[:, :, None] * dV[:, None, :] / (2.0 * W * W)[:, None, None]

        pv = np.sum(phi * v, axis=1)
        vv = np.sum(v * v, axis=1)
        acc = -(2.0 * v * pv[:, None] - vv[:, None] * phi)

        PhiJ = np.sum(Phi[:, None, :, :] * J[:, :, None, :], axis=3)       # (N, m, n)
        vPhiJ = np.sum(PhiJ * v[:, None, :], axis=2)                        # (N, m)
        dgam_J = 2.0 * v[:, None, :] * vPhiJ[:, :, None] - vv[:, None, None] * PhiJ
        pJp = np.sum(Jp * phi[:, None, :], axis=2)
        vJp = np.sum(Jp * v[:, None, :], axis=2)
        gam_vJp = (v[:, None, :] * pJp[:, :, None] + Jp * pv[:, None, None]
                   - vJp[:, :, None] * phi[:, None, :])
        Jpp = -(dgam_J + 2.0 * gam_vJp)

        gram = np.sum(J[:, :, None, :] * J[:, None, :, :], axis=3)
        det = np.linalg.det(gram) if self.m > 1 else gram[:, 0, 0]
        dq = (2.0 * W) ** (0.5 * self.m) * np.sqrt(np.maximum(det, 0.0))

        out = np.empty_like(y)
        out[:, :self.n] = v
        out[:, self.n:2 * self.n] = acc
        out[:, 2 * self.n:2 * self.n + self.m * self.n] = Jp.reshape(N, -1)
        out[:, 2 * self.n + self.m * self.n:-1] = Jpp.reshape(N, -1)
        out[:, -1] = dq
        return out

    def initial_state(self, P, u):
        """Rows of Euclidean-unit directions ``u`` mapped to Jacobi-unit data at ``P``."""
        u = np.asarray(u, dtype=float)
        N = u.shape[0]
        w0 = self.spec.local(P)[0]
        c = 1.0 / math.sqrt(2.0 * w0)
        y = np.zeros((N, self.dim))
        y[:, :self.n] = P
        y[:, self.n:2 * self.n] = u * c
        y[:, 2 * self.n + self.m * self.n:-1] = (complement_basis(u) * c).reshape(N, -1)
        return y

    def reference_scales(self, P, t_end):
        w0 = self.spec.local(P)[0]
        c = 1.0 / math.sqrt(2.0 * w0)
        ref = np.empty(self.dim)
        ref[:self.n] = t_end * c
        ref[self.n:2 * self.n] = c
        ref[2 * self.n:2 * self.n + self.m * self.n] = t_end * c
        ref[2 * self.n + self.m * self.n:-1] = c
        ref[-1] = t_end**self.n
        return ref


@dataclass
class GeodesicBundle:
    """Final states of a batch of geodesics shot from ``P``."""

    x: np.ndarray
    v: np.ndarray
    J: np.ndarray
    Jdot: np.ndarray
    radial_volume: np.ndarray
    status: np.ndarray
    excursion: np.ndarray


def sample_directions(n: int, samples: int, seed: int, antithetic: bool = False):
    """Uniform unit vectors; row ``i`` depends only on ``(seed, i)``.

    With ``antithetic`` rows come in pairs ``(u, -u)``.
    """
    if samples <= 0:
        raise ValueError(f"invalid sample count {samples}")
    rng = np.random.default_rng(seed)
    if antithetic:
        if samples % 2:
            raise ValueError("antithetic sampling needs an even sample count")
        g = rng.standard_normal((samples // 2, n))
        g = np.repeat(g, 2, axis=0)
        g[1::2] *= -1.0
    else:
        g = rng.standard_normal((samples, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def shoot(spec: geo.SystemSpec, P, directions, t_end: float, rtol: float = 1e-9,
          chunk: int = CHUNK, workers: int = 1) -> GeodesicBundle:
    """Integrate geodesics and Jacobi fields from ``P`` to arclength ``t_end``."""
    P = np.asarray(P, dtype=float)
    system = GeodesicSystem(spec)
    atol = rtol * system.reference_scales(P, t_end)
    margin = spec.margin

    def abort(y):
        return system.kinetic(y[:, :spec.n]) <= margin

    def monitor(y):
        return np.max(np.abs(y[:, :spec.n] - P), axis=1)

    directions = np.asarray(directions, dtype=float)
    pieces = [directions[i:i + chunk] for i in range(0, directions.shape[0], chunk)]

    def run(u):
        y0 = system.initial_state(P, u)
        return integrate_rows(system, y0, t_end, rtol, atol, h0=t_end / 8.0, abort=abort, monitor=monitor)

    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pieces))
    else:
        results = [run(u) for u in pieces]

    y = np.concatenate([r.y for r in results])
    status = np.concatenate([r.status for r in results])
    exc = np.concatenate([r.excursion for r in results])
    x, v, J, Jp, q = system.split(y)
    return GeodesicBundle(x=x.copy(), v=v.copy(), J=J.copy(), Jdot=Jp.copy(), radial_volume=q.copy(),
                          status=status, excursion=exc)


@dataclass
class VolumeEstimate:
    volume: float
    std_error: float
    samples: int
    used: int
    aborted_turning: int
    failed: int
    seed: int
    antithetic: bool
    rtol: float
    per_sample: np.ndarray = field(repr=False)
    max_excursion: float = 0.0

    def __iter__(self):
        # unpacks as (volume, std_error)
        return iter((self.volume, self.std_error))

    @property
    def integration_floor(self) -> float:
        """Absolute error scale of the ODE integration, independent of sampling."""
        return 10.0 * self.rtol * abs(self.volume)


def ball_volume_numeric(spec: geo.SystemSpec, ball: BallSpec, samples: int, seed: int,
                        rtol: float = 1e-9, antithetic: bool = False, chunk: int = CHUNK,
                        workers: int = 1, directions=None, check_cap: bool = True) -> VolumeEstimate:
    """Monte-Carlo estimate of the Riemannian volume of ``B(P, r)``.

    Samples whose geodesic reaches the turning-point margin, or whose
    integration fails, are dropped from the average and counted.
    """
    if samples <= 0:
        raise ValueError(f"invalid sample count {samples}")
    if check_cap:
        validate_ball(spec, ball)
    if directions is None:
        directions = sample_directions(spec.n, samples, seed, antithetic)
    bundle = shoot(spec, ball.center, directions, ball.radius, rtol=rtol, chunk=chunk, workers=workers)
    alpha = unit_sphere_area(spec.n)
    vals = alpha * bundle.radial_volume
    ok = bundle.status == DONE
    n_turn = int(np.sum(bundle.status == ABORTED))
    n_fail = int(np.sum(bundle.status == FAILED))
    if n_turn or n_fail:
        log.warning("%d samples hit the turning-point margin, %d failed to integrate", n_turn, n_fail)
    per_sample = np.where(ok, vals, np.nan)
    if not np.any(ok):
        raise DomainError("every geodesic sample was aborted; reduce the radius")
    if antithetic and not (n_turn or n_fail):
        pairs = 0.5 * (vals[0::2] + vals[1::2])
        volume = float(np.mean(pairs))
        se = float(np.std(pairs, ddof=1) / math.sqrt(pairs.size)) if pairs.size > 1 else 0.0
    else:
        good = vals[ok]
        volume = float(np.mean(good))
        se = float(np.std(good, ddof=1) / math.sqrt(good.size)) if good.size > 1 else 0.0
    return VolumeEstimate(
        volume=volume, std_error=se, samples=samples, used=int(np.sum(ok)),
        aborted_turning=n_turn, failed=n_fail, seed=seed, antithetic=antithetic, rtol=rtol,
        per_sample=per_sample, max_excursion=float(np.max(bundle.excursion)),
    )


def sphere_average_identity_check(spec: geo.SystemSpec, P, samples: int, seed: int,
                                  normalization: str = "oracle"):
    """Monte-Carlo ``int_S rho(X) dS`` against ``R_p omega_n``.

    ``rho`` is the directional Ricci curvature ``R_ij X^i X^j / g(X, X)``;
    ``R_p`` follows ``normalization``. Returns ``(lhs, rhs, rel_err)``.
    """
    P = np.asarray(P, dtype=float)
    u = sample_directions(spec.n, samples, seed)
    ric = geo.ricci(spec, P)
    g = geo.jacobi_metric(spec, P)[0]
    rho = np.einsum("si,ij,sj->s", u, ric, u) / np.einsum("si,ij,sj->s", u, g, u)
    lhs = float(unit_sphere_area(spec.n) * np.mean(rho))
    rhs = float(geo.scalar_curvature(spec, P, normalization) * unit_ball_volume(spec.n))
    if rhs == 0.0:
        rel = 0.0 if lhs == 0.0 else math.inf
    else:
        rel = abs(lhs - rhs) / abs(rhs)
    return lhs, rhs, rel


def coordinate_moment_check(n: int, samples: int, seed: int):
    """``int_S (X^i)^2 dS`` for each axis, to compare with ``omega_n``."""
    u = sample_directions(n, samples, seed)
    return unit_sphere_area(n) * np.mean(u * u, axis=0)


@dataclass
class BallReport:
    n: int
    E: float
    r: float
    R_p: float
    R_p_source: str
    vol_exp: float
    vol_mc: float
    vol_mc_stderr: float
    S_exp: float
    S_mc: float
    samples: int
    seed: int
    k_B: float = 1.0
    aborted: int = 0

    COLUMNS = ("n", "E", "r", "R_p", "R_p_source", "vol_exp", "vol_mc", "vol_mc_stderr",
               "S_exp", "S_mc", "samples", "seed")

    def row(self):
        return [getattr(self, c) for c in self.COLUMNS]

    def key_values(self):
        out = {c: getattr(self, c) for c in self.COLUMNS}
        out["k_B"] = self.k_B
        out["aborted"] = self.aborted
        return out


def ball_report(spec: geo.SystemSpec, ball: BallSpec, samples: int, seed: int,
                normalization: str = "oracle", k_B: float = 1.0, rtol: float = 1e-9,
                workers: int = 1) -> BallReport:
    R_p = geo.scalar_curvature(spec, ball.center, normalization)
    source = "oracle" if normalization == "oracle" else "literal_critical"
    v_exp = ball_volume_expansion(spec, ball, R_p)
    est = ball_volume_numeric(spec, ball, samples, seed, rtol=rtol, workers=workers)
    return BallReport(
        n=spec.n, E=spec.E, r=ball.radius, R_p=R_p, R_p_source=source,
        vol_exp=v_exp, vol_mc=est.volume, vol_mc_stderr=est.std_error,
        S_exp=entropy(v_exp, k_B), S_mc=entropy(est.volume, k_B),
        samples=samples, seed=seed, k_B=k_B, aborted=est.aborted_turning + est.failed,
    )

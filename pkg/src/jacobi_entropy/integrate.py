"""Vectorised adaptive Dormand-Prince 8(5,3) integration over independent rows.

Every row of the state carries its own time and step size, so the result
for a row is bit-identical however the rows are batched. The Butcher
tableau and the error estimator are the ones scipy's ``DOP853`` uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import DOP853

_A = DOP853.A
_B = DOP853.B
_E3 = DOP853.E3
_E5 = DOP853.E5
_STAGES = DOP853.n_stages
_EXPONENT = -1.0 / 8.0

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

RUNNING, DONE, ABORTED, FAILED = 0, 1, 2, 3


@dataclass
class BatchResult:
    y: np.ndarray
    status: np.ndarray
    steps: np.ndarray
    excursion: np.ndarray  # row-wise max of ``monitor`` over accepted states


def _combine(coeffs, K, upto):
    acc = None
    for q in range(upto):
        c = coeffs[q]
        if c == 0.0:
            continue
        term = c * K[q]
        acc = term if acc is None else acc + term
    return acc if acc is not None else np.zeros_like(K[0])


def _error_norm(K, h, scale):
    err5 = _combine(_E5, K, len(_E5)) / scale
    err3 = _combine(_E3, K, len(_E3)) / scale
    e5 = np.sum(err5 * err5, axis=1)
    e3 = np.sum(err3 * err3, axis=1)
    denom = e5 + 0.01 * e3
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.abs(h) * e5 / np.sqrt(denom * scale.shape[1])
    norm[denom == 0.0] = 0.0
    return norm


def integrate_rows(fun, y0, t_end, rtol, atol, h0=None, max_steps=100_000,
                   abort=None, monitor=None) -> BatchResult:
    """Integrate ``y' = fun(y)`` from ``t = 0`` to ``t_end`` for every row.

    ``fun`` maps an ``(N, d)`` state to its ``(N, d)`` derivative and must
    act row by row. ``atol`` may be a scalar or a length-``d`` array.
    ``abort(y)`` flags rows to stop (status ``ABORTED``) after an accepted
    step; ``monitor(y)`` gives a per-row scalar whose running maximum is
    returned as ``excursion``.
    """
    y = np.array(y0, dtype=float)
    N, d = y.shape
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (d,))
    t = np.zeros(N)
    h = np.full(N, t_end / 8.0 if h0 is None else h0)
    status = np.zeros(N, dtype=np.int8)
    steps = np.zeros(N, dtype=np.int64)
    rejected = np.zeros(N, dtype=bool)
    excursion = np.zeros(N) if monitor is None else np.asarray(monitor(y), dtype=float).copy()
    f = fun(y)
    min_step = 16 * np.finfo(float).eps * abs(t_end)

    while True:
        act = np.flatnonzero(status == RUNNING)
        if act.size == 0:
            break
        ya, fa, ta = y[act], f[act], t[act]
        remaining = t_end - ta
        ha = np.minimum(h[act], remaining)
        last = ha >= remaining
        hc = ha[:, None]

        K = [fa]
        for s in range(1, _STAGES):
            K.append(fun(ya + hc * _combine(_A[s], K, s)))
        y_new = ya + hc * _combine(_B, K, _STAGES)
        f_new = fun(y_new)
        K.append(f_new)

        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
        err = _error_norm(K, ha, scale)
        finite = np.isfinite(err) & np.all(np.isfinite(y_new), axis=1)
        accept = finite & (err < 1.0)

        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(err == 0.0, MAX_FACTOR, SAFETY * err**_EXPONENT)
        factor = np.where(accept, np.minimum(MAX_FACTOR, factor), np.maximum(MIN_FACTOR, factor))
        factor = np.where(finite, factor, MIN_FACTOR)
        factor = np.where(accept & rejected[act], np.minimum(1.0, factor), factor)

        acc_idx = act[accept]
        y[acc_idx] = y_new[accept]
        f[acc_idx] = f_new[accept]
        t[acc_idx] = np.where(last[accept], t_end, ta[accept] + ha[accept])
        steps[act] += 1
        rejected[act] = ~accept
        h[act] = ha * factor

        if acc_idx.size:
            done = acc_idx[t[acc_idx] >= t_end]
            status[done] = DONE
            if monitor is not None:
                excursion[acc_idx] = np.maximum(excursion[acc_idx], monitor(y[acc_idx]))
            if abort is not None:
                bad = acc_idx[np.asarray(abort(y[acc_idx]), dtype=bool)]
                status[bad] = ABORTED
        stuck = act[(h[act] < min_step) | (steps[act] >= max_steps)]
        status[stuck[status[stuck] == RUNNING]] = FAILED

    return BatchResult(y=y, status=status, steps=steps, excursion=excursion)

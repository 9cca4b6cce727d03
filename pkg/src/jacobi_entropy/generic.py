"""Curvature of an arbitrary metric from its 2-jet.

Used as the independent check on the closed-form Jacobi-metric formulas:
nothing here knows the metric is conformally flat.

Index conventions: ``dg[k, i, j] = d_k g_ij``, ``ddg[k, l, i, j] =
d_k d_l g_ij``; ``gamma[i, j, k] = Gamma^i_{jk}``; ``riemann[i, j, k, m] =
R^i_{jkm}`` with ``R(d_k, d_m) d_j = R^i_{jkm} d_i``, so it is
antisymmetric in ``(k, m)`` and ``ricci[j, m] = R^k_{jkm}``.
"""

import numpy as np


def levi_civita(g, dg, ginv=None):
    ginv = np.linalg.inv(g) if ginv is None else ginv
    s = np.einsum("jmk->mjk", dg) + np.einsum("kjm->mjk", dg) - dg
    return 0.5 * np.einsum("im,mjk->ijk", ginv, s)


def christoffel_derivative(g, dg, ddg, ginv=None):
    """``dgamma[l, i, j, k] = d_l Gamma^i_{jk}``."""
    ginv = np.linalg.inv(g) if ginv is None else ginv
    s = np.einsum("jmk->mjk", dg) + np.einsum("kjm->mjk", dg) - dg
    ds = np.einsum("ljmk->lmjk", ddg) + np.einsum("lkjm->lmjk", ddg) - ddg
    dginv = -np.einsum("ia,lab,bm->lim", ginv, dg, ginv)
    return 0.5 * (np.einsum("lim,mjk->lijk", dginv, s) + np.einsum("im,lmjk->lijk", ginv, ds))


def riemann_from_connection(gamma, dgamma):
    return (
        np.einsum("kimj->ijkm", dgamma)
        - np.einsum("mikj->ijkm", dgamma)
        + np.einsum("ikl,lmj->ijkm", gamma, gamma)
        - np.einsum("iml,lkj->ijkm", gamma, gamma)
    )


def curvature_from_jet(g, dg, ddg):
    """Christoffel symbols, Riemann and Ricci tensors and scalar curvature."""
    g = np.asarray(g, dtype=float)
    ginv = np.linalg.inv(g)
    gamma = levi_civita(g, dg, ginv)
    dgamma = christoffel_derivative(g, dg, ddg, ginv)
    riemann = riemann_from_connection(gamma, dgamma)
    ricci = np.einsum("kjkm->jm", riemann)
    scalar = float(np.einsum("jm,jm->", ginv, ricci))
    return {"christoffel": gamma, "riemann": riemann, "ricci": ricci, "scalar": scalar}


def lower(g, riemann):
    """``R_{ijkm} = g_{il} R^l_{jkm}``."""
    return np.einsum("il,ljkm->ijkm", g, riemann)

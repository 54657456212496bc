"""Panel quadrature on [0, 1] resolving near-singular peaks of width w."""

import numpy as np
from scipy import optimize

GL_ORDER = 10
SCAN_POINTS = 513


def gauss_legendre(order=GL_ORDER):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def panel_rule(breaks, order=GL_ORDER):
    """Composite Gauss-Legendre nodes/weights over sorted ``breaks``."""
    gx, gw = gauss_legendre(order)
    left = breaks[:-1]
    h = np.diff(breaks)
    nodes = (left[:, None] + h[:, None] * gx[None, :]).ravel()
    weights = (h[:, None] * gw[None, :]).ravel()
    return nodes, weights


def dyadic_breaks(center, width, lo=0.0, hi=1.0):
    """Breakpoints ``center +- (width/4) 2^k`` clipped to ``[lo, hi]``.

    The central panel has half-width ``width/4`` so that a complex
    singularity at distance ``~width`` is well outside its Bernstein ellipse.
    """
    width = max(float(width), 1e-15)
    pts = [center]
    d = 0.25 * width
    while center - d > lo or center + d < hi:
        pts.append(center - d)
        pts.append(center + d)
        d *= 2.0
    pts = np.asarray(pts)
    return pts[(pts > lo) & (pts < hi)]


def closest_approaches(target, curve, scan=SCAN_POINTS, lo=0.0, hi=1.0):
    """Local minima ``(t*, dist)`` of ``|target - curve(t)|`` over ``[lo, hi]``.

    A uniform scan brackets each local minimum, then a bounded scalar
    minimisation polishes it. Endpoint minima are kept.
    """
    t = np.linspace(lo, hi, scan)
    d = np.linalg.norm(curve(t) - target, axis=-1)
    out = []
    idx = [k for k in range(1, scan - 1) if d[k] <= d[k - 1] and d[k] <= d[k + 1]]
    for k in idx:
        res = optimize.minimize_scalar(
            lambda x: float(np.linalg.norm(curve(np.array([x]))[0] - target)),
            bounds=(t[k - 1], t[k + 1]),
            method="bounded",
            options={"xatol": 1e-13 * max(hi - lo, 1.0)},
        )
        out.append((float(res.x), float(res.fun)))
    if d[0] < d[1]:
        out.append((lo, float(d[0])))
    if d[-1] < d[-2]:
        out.append((hi, float(d[-1])))
    return out


def graded_breaks(mesh_nodes, peaks, lo=0.0, hi=1.0):
    """Union of mesh nodes and dyadic refinements around each ``(center, width)`` peak."""
    parts = [np.asarray(mesh_nodes, dtype=float)]
    for center, width in peaks:
        parts.append(dyadic_breaks(center, width, lo, hi))
    b = np.unique(np.concatenate(parts + [np.array([lo, hi])]))
    b = b[(b >= lo) & (b <= hi)]
    # drop slivers that add cost without accuracy
    keep = np.concatenate([[True], np.diff(b) > 1e-15])
    return b[keep]


def hat_weights(mesh_nodes, t):
    """Interval index and linear weight of each point for hat-function interpolation."""
    k = np.clip(np.searchsorted(mesh_nodes, t, side="right") - 1, 0, len(mesh_nodes) - 2)
    lam = (t - mesh_nodes[k]) / (mesh_nodes[k + 1] - mesh_nodes[k])
    return k, lam


def hat_integrals(mesh_nodes, t, values, n=None):
    """``int values * phi_j`` for every hat function ``phi_j`` given samples times weights."""
    n = len(mesh_nodes) if n is None else n
    k, lam = hat_weights(mesh_nodes, t)
    out = np.bincount(k, weights=(1.0 - lam) * values, minlength=n)
    out += np.bincount(k + 1, weights=lam * values, minlength=n)
    return out

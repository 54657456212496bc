"""Neumann Green's function, the theta-averaged kernel and the S_N operator.

The integral over ``t in [-1, 1]`` is folded onto ``[0, 1]``: the ``t < 0``
half is the mirror image of the centerline, so every row integrates over two
source curves, the direct one ``X(phi^{-1}(t))`` and its image.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._accel import worker_count
from .geometry import MIRROR, GeometryError
from .quadrature import closest_approaches, graded_breaks, hat_integrals, hat_weights, panel_rule

FOUR_PI = 4.0 * np.pi
DEFAULT_THETA = 64
THETA_TOL = 1e-11
SELF_CHECK_TOL = 1e-9


class SingularEvaluationError(ValueError):
    pass


class InsideVesselError(GeometryError):
    def __init__(self, message):
        super().__init__("inside-vessel", message)


class AssemblyError(RuntimeError):
    pass


def green_neumann(x, y):
    """``(1/4pi)(1/|x-y| + 1/|x-y*|)`` with ``y*`` the mirror of ``y`` across z=0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.linalg.norm(x - y, axis=-1)
    if np.any(d == 0):
        raise SingularEvaluationError("green_neumann evaluated at x == y")
    return (1.0 / d + 1.0 / np.linalg.norm(x - y * MIRROR, axis=-1)) / FOUR_PI


def _mesh_nodes(mesh):
    return np.asarray(getattr(mesh, "s", mesh), dtype=float)


def theta_nodes(order):
    theta = 2.0 * np.pi * np.arange(order) / order
    return np.cos(theta), np.sin(theta)


def _ring(geom, s):
    center, e1, e2, r = geom.ring(np.array([s]))
    return center[0], e1[0], e2[0], float(r[0])


def ring_mean(geom, s, src, theta_order=DEFAULT_THETA):
    """mean_theta 1/|X(s) + eps a(s) e_r(theta) - src| for an array of sources."""
    center, e1, e2, r = _ring(geom, s)
    cos_t, sin_t = theta_nodes(theta_order)
    return _kernels.ring_mean_inv_dist(center, e1, e2, r, np.atleast_2d(src), cos_t, sin_t)


def kernel_K_eps(geom, s, t, eta=1.0, theta_order=DEFAULT_THETA):
    """K_eps(s, t) for t in [-1, 1] by the periodic trapezoid rule in theta."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    src = geom.reflected.Y(geom.stretch.phi_inv(t))
    return eta / FOUR_PI * ring_mean(geom, float(s), src, theta_order)


def select_theta_order(geom, mesh, start=DEFAULT_THETA, tol=THETA_TOL, max_order=4096):
    """Smallest ``start * 2^k`` whose values on a probe set change by < ``tol`` on doubling.

    Probes sit at the worst case for the ring average: sources on the
    centerline at offsets comparable to the local radius.
    """
    nodes = _mesh_nodes(mesh)
    probe_s = nodes[np.linspace(0, len(nodes) - 2, 9).astype(int)]
    order = int(start)
    prev = None
    while True:
        vals = []
        for s in probe_s:
            r = float(geom.eps * geom.radius.a(s))
            t0 = float(geom.stretch.phi(s))
            offsets = np.array([0.0, 0.5, 1.0, 2.0, 4.0]) * max(r, 1e-6)
            t = np.clip(np.concatenate([t0 + offsets, t0 - offsets, -t0 - offsets]), -1.0, 1.0)
            vals.append(kernel_K_eps(geom, s, t, 1.0, order))
        vals = np.concatenate(vals)
        if prev is not None and np.max(np.abs(vals - prev) / np.abs(vals)) < tol:
            return order // 2
        if order >= max_order:
            return order
        prev = vals
        order *= 2


def row_quadrature(geom, s, mesh_nodes):
    """Quadrature nodes/weights on [0,1] for the direct and image halves of row ``s``."""
    center = geom.centerline.position(np.array([s]))[0]
    r = float(geom.eps * geom.radius.a(s))
    rules = []
    for source in (geom.direct_source, geom.image_source):
        peaks = [(t, np.hypot(d, r)) for t, d in closest_approaches(center, source)]
        if source is geom.direct_source:
            t_self = float(np.clip(geom.stretch.phi(s), 0.0, 1.0))
            d_self = float(np.linalg.norm(source(np.array([t_self]))[0] - center))
            peaks.append((t_self, np.hypot(d_self, r)))
        rules.append(panel_rule(graded_breaks(mesh_nodes, peaks)))
    return rules


def _assemble_rows(geom, mesh_nodes, rows, theta_order):
    return assemble_rows_at(geom, mesh_nodes, mesh_nodes[list(rows)], theta_order)


def assemble_rows_at(geom, mesh_nodes, s_values, theta_order=DEFAULT_THETA):
    """Kernel rows ``int K(s, t) phi_j(t) dt`` (eta = 1) at arbitrary ``s`` values."""
    cos_t, sin_t = theta_nodes(theta_order)
    n = len(mesh_nodes)
    out = np.empty((len(s_values), n))
    for k, s in enumerate(s_values):
        s = float(s)
        center, e1, e2, r = _ring(geom, s)
        acc = np.zeros(n)
        for (t, w), source in zip(row_quadrature(geom, s, mesh_nodes), (geom.direct_source, geom.image_source)):
            vals = _kernels.ring_mean_inv_dist(center, e1, e2, r, source(t), cos_t, sin_t)
            acc += hat_integrals(mesh_nodes, t, w * vals, n)
        out[k] = acc / FOUR_PI
    return out


def _assemble_unfolded_rows(geom, mesh_nodes, rows, theta_order):
    """Rows on the symmetric mesh of [-1, 1], evaluated through the reflected curve."""
    cos_t, sin_t = theta_nodes(theta_order)
    full = np.concatenate([-mesh_nodes[:0:-1], mesh_nodes])
    n = len(full)
    out = np.empty((len(rows), n))
    for k, i in enumerate(rows):
        s = mesh_nodes[i]
        center, e1, e2, r = _ring(geom, s)
        (tp, wp), (tm, wm) = row_quadrature(geom, s, mesh_nodes)
        t = np.concatenate([-tm, tp])
        w = np.concatenate([wm, wp])
        src = geom.reflected.Y(geom.stretch.phi_inv(t))
        vals = _kernels.ring_mean_inv_dist(center, e1, e2, r, src, cos_t, sin_t)
        out[k] = hat_integrals(full, t, w * vals, n) / FOUR_PI
    return out


def fold(unfolded):
    """Map a [-1,1] operator onto even densities on [0,1]."""
    n = (unfolded.shape[-1] + 1) // 2
    folded = unfolded[..., n - 1:].copy()
    folded[..., 1:] += unfolded[..., n - 2::-1]
    return folded


@dataclass(frozen=True)
class KernelMatrix:
    """Folded product-integration matrix for ``f -> int_{-1}^{1} K_eps(s_i, t) f*(t) dt``.

    ``unit`` holds the matrix for eta = 1; the kernel is linear in eta.
    Column j integrates against the hat function centred at node j.
    """

    nodes: np.ndarray
    unit: np.ndarray
    eta: float
    theta_order: int
    self_check: float

    @property
    def K(self):
        return self.eta * self.unit

    @property
    def quad_weights(self):
        """Integrals of the hat functions (the plain trapezoid weights of the mesh)."""
        h = np.diff(self.nodes)
        w = np.zeros_like(self.nodes)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w

    def with_eta(self, eta):
        return KernelMatrix(self.nodes, self.unit, float(eta), self.theta_order, self.self_check)

    def apply(self, f):
        return self.K @ f

    def row_sums(self):
        return self.K.sum(axis=1)


def _chunks(n, parts):
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [list(range(a, b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def assemble_kernel_matrix(geom, mesh, eta=1.0, theta_order=None, workers=None, check_rows=3):
    """Dense folded kernel matrix on the mesh nodes.

    Rows are independent; with ``workers > 1`` they are split across
    processes. Each entry is summed in a fixed order, so the result does not
    depend on the worker count. A few rows are recomputed on the unfolded
    [-1, 1] quadrature as a self-check.
    """
    nodes = _mesh_nodes(mesh)
    if theta_order is None:
        theta_order = select_theta_order(geom, nodes)
    workers = worker_count() if workers is None else max(1, int(workers))
    n = len(nodes)
    if workers == 1:
        unit = _assemble_rows(geom, nodes, range(n), theta_order)
    else:
        chunks = _chunks(n, workers * 4)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_assemble_rows, [geom] * len(chunks), [nodes] * len(chunks), chunks,
                             [theta_order] * len(chunks))
            unit = np.vstack(list(parts))

    check = np.unique(np.linspace(0, n - 1, check_rows).astype(int)) if check_rows else np.array([], int)
    mismatch = 0.0
    if check.size:
        folded = fold(_assemble_unfolded_rows(geom, nodes, check, theta_order))
        mismatch = float(np.max(np.abs(folded - unit[check])) / np.max(np.abs(unit[check])))
        if not np.all(np.isfinite(unit)) or mismatch > SELF_CHECK_TOL:
            raise AssemblyError(f"folded/unfolded assembly mismatch {mismatch:.3e}")
    return KernelMatrix(nodes, unit, float(eta), int(theta_order), mismatch)


def assemble_unfolded(geom, mesh, theta_order=DEFAULT_THETA, rows=None):
    """Unfolded rows on the symmetric mesh of [-1, 1] (for tests of the folding identity)."""
    nodes = _mesh_nodes(mesh)
    rows = range(len(nodes)) if rows is None else rows
    return _assemble_unfolded_rows(geom, nodes, list(rows), theta_order)


def symmetrized_quadratic_form(kmat, f):
    """``int_0^1 int_{-1}^1 K(s,t) f*(t) f(s) dt ds`` with trapezoid weights in s."""
    f = np.asarray(f, dtype=float)
    return float(np.dot(kmat.quad_weights * f, kmat.K @ f))


def near_positivity(kmat, a_nodes, s_max=None):
    """Extreme Rayleigh quotients of the form against ``||a^{-1/2} f||^2``.

    The quadratic form ``f^T W Kq f`` is symmetrised and divided by the
    weighted mass ``sum w_i f_i^2 / a_i``. The tip node (a = 0) is excluded,
    and with ``s_max`` only nodes with ``s <= s_max`` are kept.
    Returns ``(min, max)`` generalised eigenvalues.
    """
    from scipy import linalg

    w = kmat.quad_weights
    M = w[:, None] * kmat.K
    S = 0.5 * (M + M.T)
    keep = np.asarray(a_nodes) > 0
    if s_max is not None:
        keep &= kmat.nodes <= s_max
    idx = np.flatnonzero(keep)
    b = np.sqrt(w[idx] / np.asarray(a_nodes)[idx])
    ev = linalg.eigvalsh(S[np.ix_(idx, idx)] / b[:, None] / b[None, :])
    return float(ev[0]), float(ev[-1])


# ---------------------------------------------------------------------------
# S_N at field points
# ---------------------------------------------------------------------------


def clearance(geom, x):
    """min_s (|x - X(s)| - eps a(s)) sampled on the geometry table."""
    c = geom.centerline
    d = np.linalg.norm(np.asarray(x, dtype=float)[..., None, :] - c.X, axis=-1)
    return np.min(d - geom.eps * geom.radius.a(c.s), axis=-1)


def field_quadrature(geom, x, mesh_nodes):
    """Direct and image quadrature rules adapted to the field point ``x``."""
    rules = []
    for source in (geom.direct_source, geom.image_source):
        peaks = [(t, max(d, 1e-12)) for t, d in closest_approaches(x, source)]
        rules.append(panel_rule(graded_breaks(mesh_nodes, peaks)))
    return rules


def _interp_hat(mesh_nodes, f, t):
    k, lam = hat_weights(mesh_nodes, t)
    return (1.0 - lam) * f[k] + lam * f[k + 1]


def sources_for(geom, mesh_nodes, f, rules):
    """Source points and weights ``w_q f(t_q) / 4pi`` for both halves."""
    pts, wts = [], []
    for (t, w), source in zip(rules, (geom.direct_source, geom.image_source)):
        pts.append(source(t))
        wts.append(w * _interp_hat(mesh_nodes, f, t) / FOUR_PI)
    return np.vstack(pts), np.concatenate(wts)


def s_n_evaluate(geom, f, x, mesh, check_inside=True, gradient=False):
    """S_N[f](x) = int_0^1 G_N(x, X(phi^{-1}(t))) f(t) dt with ``f`` at mesh nodes.

    ``x`` may be a single point or an array of points. With ``gradient`` the
    analytic x-gradient is returned too.
    """
    nodes = _mesh_nodes(mesh)
    f = np.asarray(f, dtype=float)
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    if check_inside:
        inside = clearance(geom, xs) < 0
        if np.any(inside):
            raise InsideVesselError(f"{int(inside.sum())} field point(s) inside the vessel")
    pot = np.empty(len(xs))
    grad = np.empty((len(xs), 3))
    for k, p in enumerate(xs):
        src, w = sources_for(geom, nodes, f, field_quadrature(geom, p, nodes))
        if gradient:
            v, g = _kernels.potential_and_gradient(p[None, :], src, w)
            pot[k], grad[k] = v[0], g[0]
        else:
            pot[k] = _kernels.potential(p[None, :], src, w)[0]
    single = np.ndim(x) == 1
    if gradient:
        return (pot[0], grad[0]) if single else (pot, grad)
    return pot[0] if single else pot


def s_n_reflected(geom, f, x, mesh):
    """Same operator written over [-1, 1] with the reflected curve and f*."""
    nodes = _mesh_nodes(mesh)
    x = np.asarray(x, dtype=float)
    (tp, wp), (tm, wm) = field_quadrature(geom, x, nodes)
    t = np.concatenate([-tm, tp])
    w = np.concatenate([wm, wp])
    fstar = _interp_hat(nodes, np.asarray(f, dtype=float), np.abs(t))
    src = geom.reflected.Y(geom.stretch.phi_inv(t))
    return float(np.sum(w * fstar / np.linalg.norm(x - src, axis=1)) / FOUR_PI)

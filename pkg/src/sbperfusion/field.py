"""Exterior pressure field and the boundary coupling residuals.

Field points passed to the public functions are in physical coordinates of
the scene (length ``L``); internally everything runs in the unit frame.
Surface quantities are reported in the unit frame.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import jacobian
from .kernel import clearance, row_quadrature, s_n_evaluate, sources_for
from .solver1d import AccuracyError

SURFACE_THETA = 64
SURFACE_RTOL = 1e-6


class DegenerateSliceError(ValueError):
    pass


def _unit(scene, x):
    return np.asarray(x, dtype=float) / scene.length


def q_sb(scene, sol, x, gradient=False):
    """Exterior pressure ``eta S_N[(a^4 p_s)_s](x)`` at physical point(s) ``x``.

    With ``gradient`` the physical gradient is returned as well.
    """
    out = s_n_evaluate(scene.geometry, sol.source, _unit(scene, x), sol.mesh, gradient=gradient)
    if gradient:
        pot, grad = out
        return scene.eta_unit * pot, scene.eta_unit * np.asarray(grad) / scene.length
    return scene.eta_unit * out


def total_flux_constant(scene, sol):
    """Far-field limit of ``|x| q(x)``: source and image merge into ``(eta/2pi) int f``."""
    w = np.zeros_like(sol.s)
    h = sol.mesh.h
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return scene.eta_unit * scene.length * float(np.dot(w, sol.source)) / (2.0 * np.pi)


@dataclass
class FieldSlice:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    U: np.ndarray
    V: np.ndarray
    points: np.ndarray
    q: np.ndarray
    mask: np.ndarray
    clearance_factor: float
    meta: dict = field(default_factory=dict)

    def rows(self):
        """Flat ``(x, y, z, q, masked)`` rows in grid order."""
        pts = self.points.reshape(-1, 3)
        return np.column_stack([pts, self.q.ravel(), self.mask.ravel().astype(float)])


def _nearest_clearance(geom, xu):
    c = geom.centerline
    d = np.linalg.norm(xu[:, None, :] - c.X[None, :, :], axis=-1)
    k = np.argmin(d, axis=1)
    return d[np.arange(len(xu)), k], geom.eps * geom.radius.a(c.s[k])


def slice_grid(scene, sol, origin, u, v, extent, resolution, clearance_factor=2.0):
    """q on a planar grid ``origin + U u + V v``; points near the vessel are masked.

    ``extent`` is ``(u_min, u_max, v_min, v_max)`` in physical length and
    ``resolution`` is ``(n_u, n_v)``. A point is masked when it lies below the
    wall or within ``clearance_factor * eps a`` of the nearest centerline point.
    """
    origin = np.asarray(origin, dtype=float)
    u = np.asarray(u, dtype=float) / np.linalg.norm(u)
    v = np.asarray(v, dtype=float) / np.linalg.norm(v)
    nu, nv = (int(r) for r in resolution)
    U, V = np.meshgrid(np.linspace(extent[0], extent[1], nu), np.linspace(extent[2], extent[3], nv), indexing="ij")
    pts = origin + U[..., None] * u + V[..., None] * v
    flat = pts.reshape(-1, 3)
    xu = flat / scene.length
    dist, rad = _nearest_clearance(scene.geometry, xu)
    mask = (flat[:, 2] < 0) | (dist < clearance_factor * rad) | (clearance(scene.geometry, xu) <= 0)
    if np.all(mask):
        raise DegenerateSliceError("every slice point is masked")
    q = np.full(len(flat), np.nan)
    q[~mask] = scene.eta_unit * s_n_evaluate(scene.geometry, sol.source, xu[~mask], sol.mesh, check_inside=False)
    return FieldSlice(origin, u, v, U, V, pts, q.reshape(nu, nv), mask.reshape(nu, nv), float(clearance_factor))


# ---------------------------------------------------------------------------
# Surface evaluation
# ---------------------------------------------------------------------------


def _theta(n):
    return 2.0 * np.pi * np.arange(n) / n


def surface_fields(scene, sol, s_values, theta_order=SURFACE_THETA):
    """q and its gradient at surface rings ``X(s) + eps a(s) e_r(theta)`` (unit frame)."""
    geom = scene.geometry
    c = geom.centerline
    nodes = sol.mesh.s
    theta = _theta(theta_order)
    ns = len(s_values)
    q = np.empty((ns, theta_order))
    grad = np.empty((ns, theta_order, 3))
    for i, s in enumerate(s_values):
        center, e1, e2, r = geom.ring(np.array([s]))
        ring = center[0] + r[0] * (np.cos(theta)[:, None] * e1[0] + np.sin(theta)[:, None] * e2[0])
        src, w = sources_for(geom, nodes, sol.source, row_quadrature(geom, float(s), nodes))
        pot, g = _kernels.potential_and_gradient(ring, src, w)
        q[i] = scene.eta_unit * pot
        grad[i] = scene.eta_unit * g
    return theta, q, grad


def theta_variation(scene, sol, s, theta_order=SURFACE_THETA):
    """max over theta of |q - mean_theta q| on the surface ring at ``s``."""
    _, q, _ = surface_fields(scene, sol, np.atleast_1d(float(s)), theta_order)
    return float(np.max(np.abs(q[0] - q[0].mean())))


@dataclass
class ResidualReport:
    s: np.ndarray
    theta: np.ndarray
    flux_residual: np.ndarray
    flux_residual_robin: np.ndarray
    pointwise: np.ndarray
    dq_dn: np.ndarray
    q_surface: np.ndarray
    tip_band: np.ndarray
    eps: float
    consistency: float
    summary: dict = field(default_factory=dict)


def _summaries(s, theta, rbar, R, keep):
    w = np.zeros_like(s)
    h = np.diff(s)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    w = w * keep
    dtheta = 2.0 * np.pi / len(theta)
    return {
        "flux_sup": float(np.max(np.abs(rbar[keep]))),
        "flux_L2": float(np.sqrt(np.sum(w * rbar**2))),
        "pointwise_sup": float(np.max(np.abs(R[keep]))),
        "pointwise_L2": float(np.sqrt(np.sum(w[:, None] * dtheta * R**2))),
    }


def boundary_residuals(scene, sol, theta_order=SURFACE_THETA):
    """Robin and flux residuals of (q, p) on the surface grid (unit frame).

    The grid is every mesh node except s=1; nodes in the tip band
    ``[1 - ell, 1]`` are flagged and left out of the summaries.
    """
    geom = scene.geometry
    c, rad, eps = geom.centerline, geom.radius, geom.eps
    mesh = sol.mesh
    s = mesh.s[:-1]
    theta, q, grad = surface_fields(scene, sol, s, theta_order)
    e_t, e1, e2 = c.frame(s)
    k1, k2 = c.curvatures(s)
    ct, st = np.cos(theta)[None, :], np.sin(theta)[None, :]
    e_r = ct[..., None] * e1[:, None, :] + st[..., None] * e2[:, None, :]
    khat = k1[:, None] * ct + k2[:, None] * st
    ea = (eps * rad.a(s))[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        eda = (eps * rad.da(s))[:, None]
    stretch = 1.0 - ea * khat
    dq_dr = np.einsum("stk,stk->st", grad, e_r)
    dq_dt = np.einsum("stk,sk->st", grad, e_t)
    # exact unit normal pointing into the vessel
    dq_dn = (-stretch * dq_dr + eda * dq_dt) / np.sqrt(stretch**2 + eda**2)

    omega_e = scene.omega_unit / eps
    p = sol.p[:-1, None]
    R = dq_dn - omega_e * (p - q)
    J = jacobian(c, rad, eps, s[:, None], theta[None, :])
    dtheta = 2.0 * np.pi / theta_order
    flux_in = np.sum(dq_dn * J, axis=1) * dtheta
    eta_f = scene.eta_unit * sol.source[:-1]
    rbar = flux_in - eta_f
    # theta-integral of R J plus the weight correction between J / eps and a,
    # which the 1D equation drops; equals rbar wherever the 1D equation holds
    a_s = rad.a(s)
    weight_gap = J / eps - a_s[:, None]
    correction = scene.omega_unit * np.sum((p - q) * weight_gap, axis=1) * dtheta
    rbar_robin = np.sum(R * J, axis=1) * dtheta + correction
    # solver equation vs surface quadrature: eta f = a omega (2 pi p - int q dtheta)
    rhs = a_s * scene.omega_unit * (2.0 * np.pi * sol.p[:-1] - q.sum(axis=1) * dtheta)
    # node 0 carries the Dirichlet row, where the equation is not imposed
    scale = max(float(np.max(np.abs(eta_f[1:]))), 1e-300)
    consistency = float(np.max(np.abs(rhs[1:] - eta_f[1:])) / scale)

    ell = geom.stretch.ell
    tip = s >= 1.0 - ell
    keep = ~tip
    # the periodic trapezoid rule should agree with its own half-order subsample
    if theta_order % 2 == 0:
        half = np.sum((dq_dn * J)[:, ::2], axis=1) * 2.0 * dtheta
        gap = float(np.max(np.abs(half - flux_in)[keep]) / max(float(np.max(np.abs(flux_in[keep]))), 1e-300))
        if gap > SURFACE_RTOL:
            raise AccuracyError(f"surface theta quadrature not converged: relative gap {gap:.2e} at {theta_order} points")
    rep = ResidualReport(s, theta, rbar, rbar_robin, R, dq_dn, q, tip, float(eps), consistency)
    rep.summary = _summaries(s, theta, rbar, R, keep)
    rep.summary["flux_robin_sup"] = float(np.max(np.abs(rbar_robin[keep])))
    interior = keep.copy()
    interior[0] = False
    rep.summary["two_way_gap"] = float(np.max(np.abs(rbar - rbar_robin)[interior]) / scale)
    rep.summary["weight_correction_sup"] = float(np.max(np.abs(correction[keep])))
    rep.summary["consistency"] = consistency
    rep.summary["tip_band_nodes"] = int(tip.sum())
    with np.errstate(divide="ignore"):
        bound = np.minimum(1.0 / a_s, 1.0 / eps)
    rep.summary["pointwise_over_bound_sup"] = float(np.max(np.abs(R[keep]) / bound[keep, None]))
    return rep

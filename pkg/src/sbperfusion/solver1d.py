"""Graded-mesh discretisation and dense solve of the interior pressure equation.

Unknown ``v = p - p0`` on nodes ``0 = s_0 < ... < s_N = 1`` solves

    (a^4 v_s)_s - alpha v + alpha * int K [(a^4 v_t)_t]* dt = alpha p0,  v(0) = 0,

with ``alpha = 2 pi a omega / eta``. The flux form uses a conservative
finite-volume stencil; the flux vanishes at the tip where ``a(1) = 0``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

COND_WARN = 1e12


class SolverError(RuntimeError):
    pass


class AccuracyError(SolverError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Mesh1D:
    s: np.ndarray
    gamma: float
    a: np.ndarray
    da: np.ndarray
    a_mid: np.ndarray
    alpha: np.ndarray

    @property
    def N(self):
        return len(self.s) - 1

    @property
    def h(self):
        return np.diff(self.s)

    @property
    def mid(self):
        return 0.5 * (self.s[1:] + self.s[:-1])

    @property
    def control(self):
        """Control-volume lengths; the first and last are half cells."""
        h = self.h
        c = np.empty(len(self.s))
        c[0] = 0.5 * h[0]
        c[1:-1] = 0.5 * (h[1:] + h[:-1])
        c[-1] = 0.5 * h[-1]
        return c


def graded_nodes(N, gamma=2.0, base_refine=0.0):
    """``s_i = 1 - (1 - w(i/N))^gamma`` with ``w(u) = u - beta sin(2 pi u) / (2 pi)``.

    ``beta = base_refine`` in [0, 1) shrinks the spacing at s=0 by ``1 - beta``;
    beta=0 is the plain tip-graded mesh. Meshes with N and 2N nodes are nested.
    """
    if not 0.0 <= base_refine < 1.0:
        raise ValueError("base_refine must lie in [0, 1)")
    u = np.arange(N + 1) / N
    if base_refine:
        u = u - base_refine * np.sin(2.0 * np.pi * u) / (2.0 * np.pi)
    s = 1.0 - (1.0 - u) ** gamma
    s[0], s[-1] = 0.0, 1.0
    return s


def make_mesh(radius, N, gamma=2.0, omega_over_eta=1.0, base_refine=0.0):
    s = graded_nodes(int(N), gamma, base_refine)
    mid = 0.5 * (s[1:] + s[:-1])
    a = radius.a(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = radius.da(s)
    alpha = 2.0 * np.pi * a * omega_over_eta
    # tip half cell: alpha ~ a vanishes at the node, so use its cell average
    x, w = np.polynomial.legendre.leggauss(10)
    lo = s[-1] - 0.5 * (s[-1] - s[-2])
    pts = lo + 0.5 * (s[-1] - lo) * (x + 1.0)
    alpha[-1] = 2.0 * np.pi * omega_over_eta * 0.5 * float(np.dot(w, radius.a(pts)))
    return Mesh1D(s, float(gamma), a, da, radius.a(mid), alpha)


def build_mesh(scene, N=None, gamma=None, base_refine=None):
    """Graded mesh ``s_i = 1 - (1 - i/N)^gamma`` carrying ``a`` and ``alpha``."""
    N = scene.nodes if N is None else N
    gamma = scene.gamma if gamma is None else gamma
    base_refine = scene.base_refine if base_refine is None else base_refine
    if N < 4:
        raise ValueError("N must be >= 4")
    return make_mesh(scene.geometry.radius, N, gamma, scene.omega_unit / scene.eta_unit, base_refine)


def discretize_local(mesh):
    """Dense matrix of the flux operator ``v -> (a^4 v_s)_s`` at every node.

    Row 0 is extrapolated quadratically from rows 1..3 since the operator is
    needed at s=0 inside the integral term.
    """
    s, h = mesh.s, mesh.h
    n = len(s)
    k = mesh.a_mid**4 / h
    D = np.zeros((n, n))
    vol = mesh.control
    for i in range(1, n):
        D[i, i - 1] += k[i - 1]
        D[i, i] -= k[i - 1]
        if i < n - 1:
            D[i, i + 1] += k[i]
            D[i, i] -= k[i]
        D[i] /= vol[i]
    x = s[1:4]
    L = [np.prod([(0.0 - x[m]) / (x[j] - x[m]) for m in range(3) if m != j]) for j in range(3)]
    D[0] = L[0] * D[1] + L[1] * D[2] + L[2] * D[3]
    return D


def local_system(mesh):
    """``D - diag(alpha)`` with the Dirichlet row at s=0.

    The Dirichlet row is ``-v_0 = 0`` so that ``-A`` is an M-matrix.
    """
    A = discretize_local(mesh) - np.diag(mesh.alpha)
    A[0] = 0.0
    A[0, 0] = -1.0
    return A


def is_m_matrix(A, tol=1e-12):
    """Sign pattern and weak diagonal dominance of ``-A`` (the M-matrix test)."""
    M = -A
    diag = np.diag(M)
    off = M - np.diag(diag)
    scale = np.max(np.abs(M))
    signs = bool(np.all(off <= tol * scale)) and bool(np.all(diag > 0))
    dominance = bool(np.all(diag + tol * scale >= np.sum(np.abs(off), axis=1)))
    return signs and dominance


def solve_local(mesh, f):
    """Solve ``(a^4 v_s)_s - alpha v = alpha f`` with ``v(0) = 0``."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise SolverError("forcing must be finite")
    A = local_system(mesh)
    rhs = mesh.alpha * f
    rhs[0] = 0.0
    try:
        lu = linalg.lu_factor(A, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolverError(str(exc)) from exc
    if np.any(np.diag(lu[0]) == 0):
        raise SolverError("singular local system")
    v = linalg.lu_solve(lu, rhs)
    v[0] = 0.0
    return v


def _condition(A, lu):
    anorm = np.linalg.norm(A, 1)
    (gecon,) = linalg.get_lapack_funcs(("gecon",), (lu[0],))
    rcond, info = gecon(lu[0], anorm, norm="1")
    return np.inf if rcond == 0 else 1.0 / rcond


def system_matrix(mesh, kmat, D=None):
    """``D - diag(alpha) + diag(alpha) Kq D`` with the Dirichlet row."""
    D = discretize_local(mesh) if D is None else D
    A = D - np.diag(mesh.alpha) + mesh.alpha[:, None] * (kmat.K @ D)
    A[0] = 0.0
    A[0, 0] = 1.0
    return A


@dataclass(frozen=True)
class Solution:
    """Interior pressure and derived fluxes on a mesh.

    ``flux`` is ``a^4 p_s`` at midpoints, ``source`` is ``(a^4 p_s)_s`` at
    nodes (the line source density of the exterior field).
    """

    mesh: Mesh1D
    p: np.ndarray
    flux: np.ndarray
    source: np.ndarray
    p0: float
    norms: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def s(self):
        return self.mesh.s

    @property
    def v(self):
        return self.p - self.p0


def solve_psb(scene, mesh, kernel, p0=None):
    """Dense LU solve of the full integrodifferential system.

    ``kernel`` is a :class:`KernelMatrix` on the same nodes; its eta is set
    from the scene.
    """
    p0 = scene.p0 if p0 is None else float(p0)
    if not np.array_equal(kernel.nodes, mesh.s):
        raise ValueError("kernel matrix and mesh nodes differ")
    kmat = kernel.with_eta(scene.eta_unit)
    D = discretize_local(mesh)
    A = system_matrix(mesh, kmat, D)
    rhs = mesh.alpha * p0
    rhs[0] = 0.0
    if not np.all(np.isfinite(A)):
        raise SolverError("non-finite system matrix")
    # row equilibration: the flux rows scale like 1/h^2 near the tip
    scale = 1.0 / np.max(np.abs(A), axis=1)
    A = scale[:, None] * A
    rhs = scale * rhs
    lu = linalg.lu_factor(A)
    if np.any(np.diag(lu[0]) == 0):
        raise SolverError("singular system matrix")
    v = linalg.lu_solve(lu, rhs)
    v = v + linalg.lu_solve(lu, rhs - A @ v)
    cond = float(_condition(A, lu))
    if cond > COND_WARN:
        warnings.warn(f"system condition estimate {cond:.3e}", ConditioningWarning, stacklevel=2)
    if not np.all(np.isfinite(v)):
        raise SolverError("non-finite solution")
    v[0] = 0.0
    return _make_solution(mesh, v, p0, D, {"condition": cond, "theta_order": kernel.theta_order,
                                           "residual": float(np.max(np.abs(A @ v - rhs)))})


def _make_solution(mesh, v, p0, D, meta):
    p = v + p0
    flux = mesh.a_mid**4 * np.diff(v) / mesh.h
    source = D @ v
    norms = weighted_norms_arrays(mesh, p, flux, source)
    return Solution(mesh, p, flux, source, float(p0), norms, dict(meta))


def solve_mesh_family(scene, Ns, assemble):
    """Solutions for each N; ``assemble(mesh)`` returns the kernel matrix."""
    out = []
    for N in Ns:
        mesh = build_mesh(scene, N)
        out.append(solve_psb(scene, mesh, assemble(mesh)))
    return out


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def _mid_l2(h, values):
    return float(np.sqrt(np.sum(h * values**2)))


def weighted_norms_arrays(mesh, p, flux, source):
    """Weighted norms by midpoint quadrature.

    Nodal quantities are averaged to midpoints; ``(a^4 p_s)_{ss}`` is the
    difference quotient of the nodal source.
    """
    h = mesh.h
    am = mesh.a_mid
    p_mid = 0.5 * (p[1:] + p[:-1])
    ps = np.diff(p) / h
    src_mid = 0.5 * (source[1:] + source[:-1])
    src_s = np.diff(source) / h
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_a = np.where(mesh.a > 0, 1.0 / mesh.a, 0.0)
    return {
        "p_L2": _mid_l2(h, p_mid),
        "a2ps_L2": _mid_l2(h, am**2 * ps),
        "p_Ha": _mid_l2(h, p_mid) + _mid_l2(h, am**2 * ps),
        "p_inf": float(np.max(np.abs(p))),
        "a_ps_inf": float(np.max(np.abs(am * ps))),
        "am12_src_L2": _mid_l2(h, src_mid / np.sqrt(am)),
        "am1_src_inf": float(np.max(np.abs(source[:-1] * inv_a[:-1]))),
        "a32_src_s_L2": _mid_l2(h, am**1.5 * src_s),
        "tip_flux": float(abs(flux[-1])),
    }


def weighted_norms(sol, mesh=None):
    mesh = sol.mesh if mesh is None else mesh
    return weighted_norms_arrays(mesh, sol.p, sol.flux, sol.source)


def h_a_norm(mesh, u):
    """``||u||_{L2} + ||a^2 u_s||_{L2}`` with midpoint quadrature."""
    h = mesh.h
    return _mid_l2(h, 0.5 * (u[1:] + u[:-1])) + _mid_l2(h, mesh.a_mid**2 * np.diff(u) / h)


def coercivity_form(mesh, kmat, v):
    """Discrete ``B(v, v)`` for the full operator (v(0) = 0 is enforced)."""
    v = np.array(v, dtype=float)
    v[0] = 0.0
    D = discretize_local(mesh)
    g = D @ v
    w = mesh.control
    h = mesh.h
    interior = mesh.alpha > 0
    local = float(np.sum(w[interior] * g[interior] ** 2 / mesh.alpha[interior]))
    grad = float(np.sum(h * mesh.a_mid**4 * (np.diff(v) / h) ** 2))
    nonlocal_ = float(np.dot(w * g, kmat.K @ g))
    return local + grad + nonlocal_


def richardson_order(coarse, mid, fine):
    """Observed order from three nested solutions sampled on the coarse nodes."""
    e1 = np.max(np.abs(coarse - mid))
    e2 = np.max(np.abs(mid - fine))
    return float(np.log2(e1 / e2))

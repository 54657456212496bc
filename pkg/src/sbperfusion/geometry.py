"""Vessel geometry: centerline with Bishop frame, radius profile, reflection.

All quantities live in the unit-length, arclength-parameterised frame
``s in [0, 1]``. Dimensional scenes are scaled into this frame by
:mod:`sbperfusion.scene` before anything here is called.
"""

from dataclasses import dataclass, field
from functools import cached_property, partial

import numpy as np
from scipy import integrate, interpolate

E_X = np.array([1.0, 0.0, 0.0])
E_Z = np.array([0.0, 0.0, 1.0])
MIRROR = np.array([1.0, 1.0, -1.0])

DEFAULT_SAMPLES = 2049
ORTHO_TOL = 1e-10
SPEED_TOL = 1e-8


class GeometryError(ValueError):
    """Invalid geometry. ``code`` names the failed condition."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


class ReparameterizationError(GeometryError):
    def __init__(self, message):
        super().__init__("reparameterization-failure", message)


class EpsilonTooLargeError(GeometryError):
    def __init__(self, message):
        super().__init__("eps-too-large", message)


def _gauss_legendre_01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _hermite(s, h, values, derivs):
    """Cubic Hermite interpolation of tabulated ``values`` on a uniform grid of step ``h``."""
    s = np.asarray(s, dtype=float)
    n = values.shape[0]
    u = np.clip(s, 0.0, 1.0) / h
    i = np.minimum(np.floor(u).astype(int), n - 2)
    x = (u - i)[..., None] if values.ndim > 1 else u - i
    h00 = 2 * x**3 - 3 * x**2 + 1
    h10 = x**3 - 2 * x**2 + x
    h01 = -2 * x**3 + 3 * x**2
    h11 = x**3 - x**2
    return h00 * values[i] + h10 * h * derivs[i] + h01 * values[i + 1] + h11 * h * derivs[i + 1]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Curve families. Each returns (X, X_s, X_ss) on a unit-speed grid s in [0, 1].
# ---------------------------------------------------------------------------


def _straight_samples(s, params):
    X = np.outer(s, E_Z)
    return X, np.tile(E_Z, (s.size, 1)), np.zeros((s.size, 3))


def _arc_samples(s, params):
    R = float(params["radius"])
    c, sn = np.cos(s / R), np.sin(s / R)
    zeros = np.zeros_like(s)
    X = np.stack([R * (1 - c), zeros, R * sn], axis=1)
    Xs = np.stack([sn, zeros, c], axis=1)
    Xss = np.stack([c / R, zeros, -sn / R], axis=1)
    return X, Xs, Xss


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (35 - 84 * u + 70 * u**2 - 20 * u**3)


def _smoothstep_deriv(u):
    inside = (u > 0) & (u < 1)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 140 * u**3 * (1 - u) ** 3, 0.0)


def _turning_samples(s, params):
    """Planar curve in the x-z plane defined by a smooth turning angle.

    The tangent is ``(-sin psi, 0, cos psi)`` with ``psi`` rising smoothly from
    0 to ``turn`` between ``start`` and ``end``.
    """
    total = float(params["turn"])
    s0, s1 = float(params["start"]), float(params["end"])
    width = s1 - s0

    def psi(x):
        return total * _smoothstep((x - s0) / width)

    def tangent(x):
        p = psi(x)
        return np.stack([-np.sin(p), np.zeros_like(p), np.cos(p)], axis=-1)

    X = _integrate_tangent(s, tangent)
    Xs = tangent(s)
    dpsi = total * _smoothstep_deriv((s - s0) / width) / width
    p = psi(s)
    Xss = dpsi[:, None] * np.stack([-np.cos(p), np.zeros_like(p), -np.sin(p)], axis=1)
    return X, Xs, Xss


def _integrate_tangent(s, tangent):
    gx, gw = _gauss_legendre_01(10)
    left, h = s[:-1], np.diff(s)
    pts = left[:, None] + h[:, None] * gx[None, :]
    increments = np.einsum("ij,ijk->ik", h[:, None] * gw[None, :], tangent(pts))
    return np.vstack([np.zeros(3), np.cumsum(increments, axis=0)])


def _angles_samples(s, params):
    """Unit-speed 3D curve with tangent given by polar/azimuth polynomials.

    ``e_t = (sin psi cos chi, sin psi sin chi, cos psi)`` where ``psi`` and
    ``chi`` are polynomials in s (coefficients lowest order first). ``psi``
    must vanish at s=0 so the base tangent is e_z.
    """
    psi_c = np.asarray(params["psi"], dtype=float)
    chi_c = np.asarray(params.get("chi", [0.0]), dtype=float)
    if psi_c[0] != 0.0:
        raise GeometryError("base-tangent", "psi(0) must be 0")
    P, C = np.polynomial.Polynomial(psi_c), np.polynomial.Polynomial(chi_c)
    dP, dC = P.deriv(), C.deriv()

    def tangent(x):
        p, c = P(x), C(x)
        return np.stack([np.sin(p) * np.cos(c), np.sin(p) * np.sin(c), np.cos(p)], axis=-1)

    p, c, dp, dc = P(s), C(s), dP(s), dC(s)
    Xss = np.stack(
        [
            dp * np.cos(p) * np.cos(c) - dc * np.sin(p) * np.sin(c),
            dp * np.cos(p) * np.sin(c) + dc * np.sin(p) * np.cos(c),
            -dp * np.sin(p),
        ],
        axis=1,
    )
    return _integrate_tangent(s, tangent), tangent(s), Xss


def _spline_samples(s, params):
    """Clamped cubic spline through control points, reparameterised by arclength.

    The first control point must lie on z=0; the start tangent is clamped to e_z.
    """
    P = np.asarray(params["points"], dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 3:
        raise GeometryError("bad-spec", "spline needs at least three 3D control points")
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    sigma_end = chord[-1]
    spline = interpolate.CubicSpline(chord, P, bc_type=((1, E_Z), "natural"))
    d1, d2 = spline.derivative(1), spline.derivative(2)

    def speed(x):
        return np.linalg.norm(d1(x), axis=-1)

    # cumulative arclength at the knots, then Newton polish of sigma(s) per sample
    gx, gw = _gauss_legendre_01(20)
    pieces = []
    for a, b in zip(chord[:-1], chord[1:]):
        val, err = integrate.quad(lambda x: float(np.linalg.norm(d1(x))), a, b, epsabs=1e-13, epsrel=1e-13, limit=200)
        pieces.append(val)
    knot_len = np.concatenate([[0.0], np.cumsum(pieces)])
    total = knot_len[-1]

    def arclength(x):
        x = np.atleast_1d(x)
        k = np.clip(np.searchsorted(chord, x, side="right") - 1, 0, len(chord) - 2)
        a = chord[k]
        pts = a[:, None] + (x - a)[:, None] * gx[None, :]
        return knot_len[k] + (x - a) * (speed(pts) @ gw)

    target = s * total
    sigma = np.interp(target, knot_len, chord)
    for _ in range(30):
        step = (arclength(sigma) - target) / speed(sigma)
        sigma = np.clip(sigma - step, 0.0, sigma_end)
        if np.max(np.abs(step)) < 1e-14 * max(sigma_end, 1.0):
            break
    resid = np.max(np.abs(arclength(sigma) - target)) / total
    if resid > 1e-10:
        raise ReparameterizationError(f"arclength inversion residual {resid:.3e} exceeds 1e-10")

    v1, v2 = d1(sigma), d2(sigma)
    sp = np.linalg.norm(v1, axis=1)
    T = v1 / sp[:, None]
    Xss = (v2 - np.sum(v2 * T, axis=1)[:, None] * T) / sp[:, None] ** 2
    X = (spline(sigma) - P[0]) / total
    return X, T, Xss * total


CURVE_FAMILIES = {
    "straight": _straight_samples,
    "arc": _arc_samples,
    "turning": _turning_samples,
    "angles": _angles_samples,
    "spline": _spline_samples,
}


@dataclass(frozen=True)
class Centerline:
    """Tabulated unit-length centerline with a transported Bishop frame."""

    s: np.ndarray
    X: np.ndarray
    e_t: np.ndarray
    e_1: np.ndarray
    e_2: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    length: float = 1.0
    interp_order: int = 3
    family: str = "custom"
    e1_initial: tuple = (1.0, 0.0, 0.0)

    @property
    def h(self):
        return self.s[1] - self.s[0]

    @cached_property
    def _kappa_splines(self):
        return interpolate.CubicSpline(self.s, np.stack([self.kappa1, self.kappa2], axis=1))

    @cached_property
    def kappa_star(self):
        return float(np.max(np.hypot(self.kappa1, self.kappa2)))

    def curvatures(self, s):
        k = self._kappa_splines(np.clip(s, 0.0, 1.0))
        return k[..., 0], k[..., 1]

    def position(self, s):
        return _hermite(s, self.h, self.X, self.e_t)

    def tangent(self, s):
        dt = self.kappa1[:, None] * self.e_1 + self.kappa2[:, None] * self.e_2
        return _hermite(s, self.h, self.e_t, dt)

    def frame(self, s):
        """Interpolated ``(e_t, e_1, e_2)`` at arclength ``s``."""
        e_t = self.tangent(s)
        e_1 = _hermite(s, self.h, self.e_1, -self.kappa1[:, None] * self.e_t)
        e_2 = _hermite(s, self.h, self.e_2, -self.kappa2[:, None] * self.e_t)
        return e_t, e_1, e_2

    def e_r(self, s, theta):
        _, e1, e2 = self.frame(s)
        theta = np.asarray(theta, dtype=float)[..., None]
        return np.cos(theta) * e1 + np.sin(theta) * e2

    def noncontact_constant(self, stride=4):
        """Sampled estimate of ``c_Gamma`` (chord-arc and wall-distance ratios)."""
        s = self.s[::stride]
        X = self.X[::stride]
        i, j = np.triu_indices(s.size, k=1)
        chord = np.linalg.norm(X[i] - X[j], axis=-1)
        chord_ratio = float(np.min(chord / (s[j] - s[i])))
        wall_ratio = float(np.min(X[1:, 2] / s[1:]))
        return min(chord_ratio, wall_ratio)


def build_centerline(spec, samples=DEFAULT_SAMPLES, e1_initial=E_X, check=True):
    """Build a :class:`Centerline` from a curve-family spec dict.

    ``spec`` holds ``family`` plus family parameters. The Bishop frame is
    transported from ``e1_initial`` with classical RK4 on the sample grid.
    With ``check`` the base conditions and the non-contact constant are
    enforced.
    """
    family = spec["family"]
    if family not in CURVE_FAMILIES:
        raise GeometryError("bad-spec", f"unknown curve family {family!r}")
    n = int(samples)
    if n < 17 or n % 2 == 0:
        raise GeometryError("bad-spec", "samples must be odd and >= 17")
    fine = np.linspace(0.0, 1.0, 2 * n - 1)
    X, T, K = CURVE_FAMILIES[family](fine, spec)

    speed_err = float(np.max(np.abs(np.linalg.norm(T, axis=1) - 1.0)))
    if speed_err > SPEED_TOL:
        raise ReparameterizationError(f"non-unit speed residual {speed_err:.3e}")

    e_t = T[::2]
    e1 = np.asarray(e1_initial, dtype=float)
    e1 = e1 - np.dot(e1, e_t[0]) * e_t[0]
    e1 /= np.linalg.norm(e1)
    H = 2.0 * (fine[1] - fine[0])

    def rhs(k, u):
        return -np.dot(K[k], u) * T[k]

    E1 = np.empty((n, 3))
    E1[0] = e1
    for i in range(n - 1):
        j = 2 * i
        k1 = rhs(j, e1)
        k2 = rhs(j + 1, e1 + 0.5 * H * k1)
        k3 = rhs(j + 1, e1 + 0.5 * H * k2)
        k4 = rhs(j + 2, e1 + H * k3)
        e1 = e1 + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_next = T[j + 2]
        e1 = e1 - np.dot(e1, t_next) * t_next
        e1 /= np.linalg.norm(e1)
        E1[i + 1] = e1
    E2 = np.cross(e_t, E1)
    Kc = K[::2]
    kappa1 = np.sum(Kc * E1, axis=1)
    kappa2 = np.sum(Kc * E2, axis=1)

    c = Centerline(
        s=_frozen(fine[::2]),
        X=_frozen(X[::2]),
        e_t=_frozen(e_t),
        e_1=_frozen(E1),
        e_2=_frozen(E2),
        kappa1=_frozen(kappa1),
        kappa2=_frozen(kappa2),
        length=float(spec.get("length", 1.0)),
        family=family,
        e1_initial=tuple(float(v) for v in np.asarray(e1_initial, dtype=float)),
    )
    if check:
        if abs(c.X[0, 2]) > 1e-12:
            raise GeometryError("base-on-wall", "X(0) must lie on z=0")
        if np.linalg.norm(c.e_t[0] - E_Z) > 1e-10:
            raise GeometryError("base-tangent", "X_s(0) must be perpendicular to z=0")
        if np.any(c.X[1:, 2] <= 0):
            raise GeometryError("wall-contact", "centerline touches or crosses z=0")
        if c.noncontact_constant() <= 1e-9:
            raise GeometryError("self-intersection", "centerline self-intersects or touches the wall")
    return c


# ---------------------------------------------------------------------------
# Radius profile
# ---------------------------------------------------------------------------


# module-level so profiles pickle into worker processes
def _hemi_a(s):
    s = np.asarray(s, dtype=float)
    return np.sqrt(np.clip(1.0 - s * s, 0.0, None))


def _hemi_da(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -s / _hemi_a(s)


def _hemi_d2a(s):
    with np.errstate(divide="ignore"):
        return -1.0 / _hemi_a(s) ** 3


def _hemi_a_da(s):
    return -np.asarray(s, dtype=float)


def _const_a(value, s):
    return np.full(np.shape(s), value)


def _zero(s):
    return np.zeros(np.shape(s))


@dataclass(frozen=True)
class RadiusProfile:
    """Dimensionless radius ``a(s)`` with derivative callables.

    ``a_da`` is the product ``a a'``, kept separately since it stays bounded
    where ``a'`` does not.
    """

    a: callable
    da: callable
    d2a: callable
    a_da: callable
    end_form: str = "spheroidal"
    delta: float = 0.1
    name: str = "custom"

    @classmethod
    def hemisphere(cls, delta=0.1):
        return cls(_hemi_a, _hemi_da, _hemi_d2a, _hemi_a_da, "spheroidal", delta, "hemisphere")

    @classmethod
    def constant(cls, value=1.0):
        return cls(partial(_const_a, float(value)), _zero, _zero, _zero, "none", 0.1, "constant")

    @cached_property
    def _grid(self):
        return np.linspace(0.0, 1.0, 4097)[:-1]

    @cached_property
    def a_star(self):
        return float(np.max(np.abs(self.a_da(self._grid))))

    @cached_property
    def a_starstar(self):
        s = self._grid
        return float(np.max(np.abs(self.a(s) ** 3 * self.d2a(s))))

    @property
    def a_0(self):
        return float(self.a(1.0 - self.delta))

    def spheroidal_ratio(self, eps):
        """max |a - sqrt(1-s^2)| / (eps^2 sqrt(1-s^2)) over the end region."""
        s = self._grid[self._grid > 1.0 - self.delta]
        ref = np.sqrt(1.0 - s * s)
        return float(np.max(np.abs(self.a(s) - ref) / (eps**2 * ref)))


@dataclass(frozen=True)
class StretchMap:
    """phi(t) = t / (1 - ell) with ell(eps) = 1 - sqrt(1 - eps^2)."""

    eps: float

    @property
    def ell(self):
        return 1.0 - np.sqrt(1.0 - self.eps**2)

    def phi(self, t):
        return np.asarray(t, dtype=float) / (1.0 - self.ell)

    def phi_inv(self, t):
        return (1.0 - self.ell) * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class ReflectedCurve:
    """The centerline together with its mirror image, ``Y(t)`` for t in [-1, 1]."""

    centerline: Centerline
    radius: RadiusProfile

    def Y(self, t):
        t = np.asarray(t, dtype=float)
        X = self.centerline.position(np.abs(t))
        return np.where((t < 0)[..., None], X * MIRROR, X)

    def tangent(self, t):
        t = np.asarray(t, dtype=float)
        T = self.centerline.tangent(np.abs(t))
        return np.where((t < 0)[..., None], -T * MIRROR, T)

    def a_star(self, t):
        return self.radius.a(np.abs(np.asarray(t, dtype=float)))

    def e_r(self, t, theta):
        t = np.asarray(t, dtype=float)
        er = self.centerline.e_r(np.abs(t), theta)
        return np.where((t < 0)[..., None], er * MIRROR, er)


def reflect_extend(c, a):
    return ReflectedCurve(c, a)


def extend(f):
    """Even extension ``f*(t) = f(|t|)`` of a function on [0, 1]."""

    def f_star(t):
        return f(np.abs(np.asarray(t, dtype=float)))

    return f_star


@dataclass(frozen=True)
class VesselGeometry:
    """Centerline, radius, slenderness and stretch bundled for the kernel code."""

    centerline: Centerline
    radius: RadiusProfile
    eps: float
    stretch: StretchMap = field(default=None)

    def __post_init__(self):
        if self.stretch is None:
            object.__setattr__(self, "stretch", StretchMap(self.eps))

    @cached_property
    def reflected(self):
        return ReflectedCurve(self.centerline, self.radius)

    def ring(self, s):
        """Center, normals and radius of the cross section at ``s``."""
        _, e1, e2 = self.centerline.frame(s)
        return self.centerline.position(s), e1, e2, self.eps * self.radius.a(s)

    def direct_source(self, t):
        return self.centerline.position(self.stretch.phi_inv(t))

    def image_source(self, t):
        return self.direct_source(t) * MIRROR


def surface_point(c, a, eps, s, theta):
    s = np.asarray(s, dtype=float)
    return c.position(s) + (eps * a.a(s))[..., None] * c.e_r(s, theta)


def _kappa_hat(c, s, theta):
    k1, k2 = c.curvatures(s)
    return k1 * np.cos(theta) + k2 * np.sin(theta)


def jacobian(c, a, eps, s, theta):
    """Surface element factor ``eps a sqrt((1 - eps a khat)^2 + eps^2 a'^2)``."""
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ea = eps * a.a(s)
    factor = 1.0 - ea * _kappa_hat(c, s, theta)
    if np.any(factor <= 0):
        raise EpsilonTooLargeError("1 - eps a kappa_hat <= 0; cross sections overlap")
    # eps a * eps |a'| written via the bounded product a a'
    return np.sqrt((ea * factor) ** 2 + (eps**2 * a.a_da(s)) ** 2)


def R_eps(c, a, eps, stretch, s, t, theta):
    """``X(s) - Y(phi^{-1}(t)) + eps a(s) e_r(s, theta)`` and its norm."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    Y = ReflectedCurve(c, a).Y(stretch.phi_inv(t))
    R = surface_point(c, a, eps, s, theta) - Y
    return R, np.linalg.norm(R, axis=-1)


# ---------------------------------------------------------------------------
# Scene validation
# ---------------------------------------------------------------------------


SPHEROIDAL_C = 10.0
SELF_GAP = 0.05


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    detail: str


@dataclass
class ValidationReport:
    checks: list

    @property
    def accepted(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def summary(self):
        return {c.name: {"passed": c.passed, "value": c.value, "detail": c.detail} for c in self.checks}

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_geometry(c, a, eps):
    """Run every admissibility check; never raises for a failed condition."""
    checks = []
    add = lambda name, ok, val, detail: checks.append(Check(name, bool(ok), float(val), detail))

    add("base-on-wall", abs(c.X[0, 2]) <= 1e-12, abs(c.X[0, 2]), "X(0) on z=0")
    base_dev = np.linalg.norm(c.e_t[0] - E_Z)
    add("base-tangent", base_dev <= 1e-10, base_dev, "|e_t(0) - e_z|")

    c_gamma = c.noncontact_constant()
    add("noncontact-constant", c_gamma > 0, c_gamma, "sampled c_Gamma (rejects only at contact)")

    s = c.s
    r = eps * a.a(s)
    tz = np.clip(c.e_t[:, 2], -1.0, 1.0)
    lowest = c.X[:, 2] - r * np.sqrt(1.0 - tz**2)
    wall_margin = float(np.min(lowest[1:]))
    add("wall-contact", wall_margin > 0, wall_margin, "min over s>0 of lowest surface point height")

    stride = 4
    ss, XX, rr = s[::stride], c.X[::stride], r[::stride]
    # pairs closer in arclength than twice the summed radii are covered by the curvature margin
    far = np.abs(ss[:, None] - ss[None, :]) > np.maximum(SELF_GAP, 2.0 * (rr[:, None] + rr[None, :]))
    gap = np.linalg.norm(XX[:, None] - XX[None, :], axis=-1) - (rr[:, None] + rr[None, :])
    self_margin = float(np.min(gap[far])) if np.any(far) else np.inf
    add("self-intersection", self_margin > 0, self_margin, "min surface gap between distant cross sections")

    a_max = float(np.max(a.a(s)))
    add("radius-normalization", abs(a_max - 1.0) <= 1e-6, a_max, "||a||_inf = 1")

    add("radius-regularity", np.isfinite(a.a_star) and np.isfinite(a.a_starstar), max(a.a_star, a.a_starstar),
        f"a_star={a.a_star:.4g}, a_starstar={a.a_starstar:.4g}")

    tip = float(a.a(1.0))
    end = s[s > 1.0 - a.delta]
    monotone = bool(np.all(np.diff(a.a(end)) <= 1e-14))
    ratio = a.spheroidal_ratio(eps) if tip == 0.0 else np.inf
    ok = tip == 0.0 and monotone and ratio <= SPHEROIDAL_C
    add("spheroidal-end", ok, ratio, f"a(1)={tip:.3g}, monotone={monotone}, ratio vs C={SPHEROIDAL_C:g}")

    margin = 1.0 - float(np.max(r * np.hypot(c.kappa1, c.kappa2)))
    add("curvature-margin", margin > 0, margin, "1 - max eps a kappa")
    add("kappa-star", np.isfinite(c.kappa_star), c.kappa_star, "sup |X_ss|")
    return ValidationReport(checks)


def validate_scene(scene):
    """Validation report for a scene; a failed construction becomes a failed check."""
    try:
        c = scene.centerline
    except GeometryError as exc:
        return ValidationReport([Check(exc.code, False, float("nan"), str(exc))])
    report = validate_geometry(c, scene.radius_profile, scene.eps)
    theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    s = c.s[:-1]
    try:
        J = jacobian(c, scene.radius_profile, scene.eps, s[:, None], theta[None, :])
        report.checks.append(Check("jacobian-positivity", bool(np.all(J > 0)), float(np.min(J)), "min J_eps off the tip"))
    except EpsilonTooLargeError as exc:
        report.checks.append(Check("jacobian-positivity", False, float("nan"), str(exc)))
    return report

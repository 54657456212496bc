import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbperfusion.geometry import (
    E_X,
    E_Z,
    EpsilonTooLargeError,
    GeometryError,
    R_eps,
    RadiusProfile,
    StretchMap,
    build_centerline,
    extend,
    jacobian,
    reflect_extend,
    surface_point,
    validate_geometry,
    validate_scene,
)
from sbperfusion.scene import builtin

HEMI = RadiusProfile.hemisphere()
CONST = RadiusProfile.constant(1.0)


def test_straight_frame_is_constant():
    c = build_centerline({"family": "straight"})
    assert np.allclose(c.e_t, E_Z, atol=1e-15)
    assert np.allclose(c.e_1, E_X, atol=1e-15)
    assert np.max(np.abs(c.kappa1)) == 0.0 and np.max(np.abs(c.kappa2)) == 0.0


def test_semicircle_curvature():
    # the arc returns to the wall at s=1, so contact checks are skipped here
    c = build_centerline({"family": "arc", "radius": 1.0 / np.pi}, check=False)
    assert np.max(np.abs(np.hypot(c.kappa1, c.kappa2) - np.pi)) < 1e-6


@pytest.mark.parametrize("name", ["near_loop", "planar", "vessel_a", "vessel_b", "vessel_c"])
def test_frame_orthonormal(name):
    c = builtin(name).centerline
    for u in (c.e_t, c.e_1, c.e_2):
        assert np.max(np.abs(np.linalg.norm(u, axis=1) - 1.0)) < 1e-10
    for u, v in ((c.e_t, c.e_1), (c.e_t, c.e_2), (c.e_1, c.e_2)):
        assert np.max(np.abs(np.sum(u * v, axis=1))) < 1e-10


def test_frame_transport_equation():
    c = builtin("vessel_a").centerline
    de1 = (c.e_1[2:] - c.e_1[:-2]) / (2 * c.h)
    expected = -c.kappa1[1:-1, None] * c.e_t[1:-1]
    assert np.max(np.abs(de1 - expected)) < 1e-5


def test_frame_integrator_order():
    spec = {"family": "angles", "psi": [0.0, 0.0, 1.2], "chi": [0.0, 2.0]}
    ref = build_centerline(spec, samples=4097)
    errs = []
    sizes = [33, 65, 129, 257]
    for n in sizes:
        c = build_centerline(spec, samples=n)
        stride = (4097 - 1) // (n - 1)
        errs.append(np.max(np.abs(c.e_1 - ref.e_1[::stride])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.5), orders


def test_spline_unit_speed():
    c = builtin("vessel_b").centerline
    h = 1e-3
    s = np.linspace(0.0, 1.0 - h, 200)
    ratio = np.linalg.norm(c.position(s + h) - c.position(s), axis=1) / h
    assert np.max(np.abs(ratio - 1.0)) < 1e-6 + 0.5 * c.kappa_star**2 * h**2


def test_bad_samples_rejected():
    with pytest.raises(GeometryError):
        build_centerline({"family": "straight"}, samples=2048)


def test_wall_contact_detected():
    with pytest.raises(GeometryError) as info:
        build_centerline({"family": "arc", "radius": 1.0 / np.pi})
    assert info.value.code in ("wall-contact", "self-intersection")


def test_surface_point_examples():
    c = build_centerline({"family": "straight"})
    p = surface_point(c, CONST, 0.01, 0.5, 0.0)
    assert np.allclose(p, c.position(0.5) + 0.01 * E_X, atol=1e-15)
    tip = surface_point(c, HEMI, 0.01, 1.0, np.linspace(0, 6, 5))
    assert np.allclose(tip, c.position(1.0), atol=1e-15)
    p = surface_point(c, HEMI, 0.01, 0.6, np.pi / 2)
    assert np.allclose(p, c.position(0.6) + 0.008 * c.frame(0.6)[2], atol=1e-15)


def test_jacobian_examples():
    c = build_centerline({"family": "straight"})
    th = np.linspace(0, 2 * np.pi, 7)
    assert np.allclose(jacobian(c, CONST, 0.02, 0.3, th), 0.02, rtol=0, atol=1e-16)
    eps, s = 0.01, 0.6
    a, da = HEMI.a(s), HEMI.da(s)
    expected = eps * a * np.sqrt(1 + eps**2 * da**2)
    assert jacobian(c, HEMI, eps, s, 0.3) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("name", ["planar", "vessel_a", "near_loop"])
def test_jacobian_close_to_eps_a(name):
    c = builtin(name).centerline
    eps = 0.02
    s = np.linspace(0, 1, 401)[:, None]
    th = np.linspace(0, 2 * np.pi, 32, endpoint=False)[None, :]
    gap = np.abs(jacobian(c, HEMI, eps, s, th) - eps * HEMI.a(s))
    assert np.max(gap) <= (c.kappa_star + HEMI.a_star) * eps**2


def test_jacobian_overlap_raises():
    c = build_centerline({"family": "arc", "radius": 0.05}, check=False)
    with pytest.raises(EpsilonTooLargeError):
        jacobian(c, CONST, 0.1, 0.5, 0.0)


def test_reflection_straight_line():
    refl = reflect_extend(build_centerline({"family": "straight"}), HEMI)
    t = np.linspace(-1, 1, 41)
    assert np.allclose(refl.Y(t), np.outer(t, E_Z), atol=1e-15)


def test_even_extension():
    assert extend(lambda s: s**2)(-0.3) == pytest.approx(0.09, abs=1e-16)


def test_reflected_tangent_continuous():
    refl = reflect_extend(builtin("vessel_a").centerline, HEMI)
    jumps = [np.linalg.norm(refl.tangent(h) - refl.tangent(-h)) for h in (1e-2, 1e-3, 1e-4)]
    assert jumps[0] > jumps[1] > jumps[2]
    assert jumps[2] < 1e-3


def test_stretch_map():
    for eps in (0.08, 0.02, 0.005):
        m = StretchMap(eps)
        # the focus choice sits between eps^2/2 and eps^2
        assert eps**2 / 2 <= m.ell <= eps**2
        t = np.linspace(0, 1, 11)
        assert np.max(np.abs(m.phi(m.phi_inv(t)) - t)) < 1e-15


def test_R_eps_same_cross_section():
    c = build_centerline({"family": "straight"})
    st_map = StretchMap(0.01)
    s = np.linspace(0, 0.99, 12)
    _, norm = R_eps(c, HEMI, 0.01, st_map, s, st_map.phi(s), 1.1)
    assert np.allclose(norm, 0.01 * HEMI.a(s), rtol=1e-12)


@pytest.mark.parametrize("name", ["planar", "vessel_a", "near_loop"])
def test_R_eps_bounds(name):
    eps = 0.02
    c = builtin(name).centerline
    st_map = StretchMap(eps)
    s = np.linspace(0, 1, 81)[:, None, None]
    t = np.linspace(0, 1, 81)[None, :, None]
    th = np.linspace(0, 2 * np.pi, 8, endpoint=False)[None, None, :]
    _, norm = R_eps(c, HEMI, eps, st_map, s, t, th)
    sbar = s - st_map.phi_inv(t)
    ref = np.sqrt(sbar**2 + (eps * HEMI.a(s)) ** 2)
    assert np.all(norm > 0)
    assert np.all(np.abs(norm - ref) <= 0.5 * c.kappa_star * sbar**2 + 1e-14)
    assert np.min(norm / ref) >= c.noncontact_constant() / 4


def test_validate_straight_accepts():
    rep = validate_scene(builtin("straight", eps=0.01))
    assert rep.accepted
    assert {"noncontact-constant", "kappa-star", "spheroidal-end", "curvature-margin"} <= {c.name for c in rep.checks}


def test_validate_wall_contact():
    c = build_centerline({"family": "turning", "turn": 0.75 * np.pi, "start": 0.0, "end": 0.6}, check=False)
    rep = validate_geometry(c, HEMI, 0.01)
    assert not rep.accepted
    assert "wall-contact" in [f.name for f in rep.failures]


def test_validate_constant_radius_rejected():
    rep = validate_geometry(build_centerline({"family": "straight"}), CONST, 0.01)
    assert [f.name for f in rep.failures] == ["spheroidal-end"]


@pytest.mark.parametrize("eps", [0.02, 0.015, 0.01, 0.0075, 0.005])
def test_near_loop_valid_for_small_eps(eps):
    assert validate_scene(builtin("near_loop", eps=eps)).accepted


def test_near_loop_rejected_at_large_eps():
    rep = validate_scene(builtin("near_loop", eps=0.04))
    assert "self-intersection" in [f.name for f in rep.failures]


@pytest.mark.parametrize("name", ["straight", "planar", "vessel_a", "vessel_b", "vessel_c"])
def test_builtins_valid_over_sweep(name):
    for eps in (0.08, 0.04, 0.02, 0.01, 0.005):
        assert validate_scene(builtin(name, eps=eps)).accepted


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 2 * np.pi))
def test_surface_point_at_radius(s, theta):
    c = builtin("vessel_a").centerline
    p = surface_point(c, HEMI, 0.01, s, theta)
    assert np.linalg.norm(p - c.position(s)) == pytest.approx(0.01 * HEMI.a(s), abs=1e-14)

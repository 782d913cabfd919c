import numpy as np
import pytest

from serfati.fields import (
    Grid,
    SerfatiNorm,
    VelocityField,
    VorticityField,
    direct_biot_savart,
    renormalized_bs,
    serfati_norm,
    snapshot_csv_text,
    snapshot_ndjson_text,
    uloc_lp_norm,
)
from serfati.geometry import disk_exterior, full_plane
from serfati.quadrature import QuadratureSpec

from oracles import bump_azimuthal_speed, bump_mass_inside


def radial_bump(amp, R, center=(0.0, 0.0)):
    cx = np.asarray(center, dtype=float)

    def omega(y):
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y - cx, axis=-1)
        s2 = np.clip((r / R) ** 2, 0.0, 1.0)
        return amp * (1.0 - s2) ** 3

    omega.support_radius = R
    omega.support_center = tuple(cx)
    return omega


# ---------------------------------------------------------------------------
# grid and interpolation
# ---------------------------------------------------------------------------


def test_grid_basics():
    g = Grid(n=65, half_width=1.0)
    assert np.isclose(g.h, 1.0 / 32.0)
    nodes = g.nodes()
    assert nodes.shape == (65, 65, 2)
    assert np.allclose(nodes[0, 0], [-1.0, -1.0])
    assert np.allclose(nodes[-1, 0], [1.0, -1.0])
    assert np.allclose(nodes[32, 32], [0.0, 0.0])


def test_grid_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Grid(n=1, half_width=1.0)
    with pytest.raises(ValueError):
        Grid(n=9, half_width=-2.0)


def test_velocity_exact_at_nodes():
    g = Grid(n=33, half_width=1.0)

    def fn(p):
        p = np.asarray(p)
        return np.stack([np.sin(p[..., 0]), np.cos(p[..., 1])], axis=-1)

    field = VelocityField.from_function(g, fn)
    got = field(g.nodes())
    assert np.allclose(got, field.samples, atol=1e-12)


def test_velocity_u0_outside_window():
    g = Grid(n=17, half_width=1.0)

    def u0(p):
        p = np.asarray(p)
        return np.stack([np.full(p.shape[:-1], 7.0), p[..., 1]], axis=-1)

    field = VelocityField(g, np.zeros((17, 17, 2)), u0)
    far = field(np.array([[5.0, 2.0], [0.0, -3.0]]))
    assert np.allclose(far, [[7.0, 2.0], [7.0, -3.0]])
    assert np.allclose(field(np.array([0.2, 0.3])), [0.0, 0.0], atol=1e-12)


def test_velocity_interpolation_accuracy():
    g = Grid(n=65, half_width=1.0)

    def fn(p):
        p = np.asarray(p)
        return np.stack(
            [np.sin(2.0 * p[..., 0]) * np.cos(p[..., 1]), p[..., 0] ** 2], axis=-1
        )

    field = VelocityField.from_function(g, fn)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.9, 0.9, size=(200, 2))
    assert np.max(np.abs(field(pts) - fn(pts))) < 1e-5


def test_vorticity_initial_is_identity():
    g = Grid(n=33, half_width=1.0)
    omega0 = radial_bump(1.0, 0.8)
    w = VorticityField.initial(g, omega0)
    assert np.allclose(w.labels, g.nodes())
    assert np.allclose(w.node_values(), omega0(g.nodes()))
    pts = np.array([[0.1, 0.2], [-0.4, 0.7]])
    assert np.allclose(w.labels_at(pts), pts, atol=1e-6)
    assert np.allclose(w.delta_at(pts), 0.0, atol=1e-10)


def test_vorticity_translation_composition():
    # labels x - t*c represent transport along a uniform stream
    g = Grid(n=65, half_width=1.0)
    omega0 = radial_bump(1.0, 0.8)
    shift = np.array([0.07, -0.04])
    w = VorticityField(g, g.nodes() - shift, omega0)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.8, 0.8, size=(150, 2))
    assert np.max(np.abs(w(pts) - omega0(pts - shift))) < 2e-4


def test_vorticity_sup_bound_at_nodes():
    # composition keeps node values inside the range of omega0, bitwise
    g = Grid(n=33, half_width=1.0)
    omega0 = radial_bump(4.0, 0.35)
    rng = np.random.default_rng(11)
    labels = rng.uniform(-3.0, 3.0, size=(33, 33, 2))
    w = VorticityField(g, labels, omega0)
    assert np.max(np.abs(w.node_values())) <= 4.0


def test_vorticity_identity_outside_window():
    g = Grid(n=17, half_width=1.0)
    omega0 = radial_bump(1.0, 3.0)
    w = VorticityField(g, g.nodes() + 0.5, omega0)
    outside = np.array([[2.0, 0.0], [0.0, -4.0]])
    assert np.allclose(w.labels_at(outside), outside)
    assert np.allclose(w.delta_at(outside), 0.0)


# ---------------------------------------------------------------------------
# Serfati norm
# ---------------------------------------------------------------------------


def test_serfati_norm_constant_field():
    g = Grid(n=17, half_width=1.0)
    field = VelocityField(g, np.broadcast_to([1.0, 0.0], (17, 17, 2)).copy(), lambda p: p)
    norm = serfati_norm(field)
    assert norm.u_inf == 1.0
    assert norm.omega_inf == 0.0
    assert norm.total == 1.0


def test_serfati_norm_strip_field():
    # u1 ramps from 0 to 1 across 2 < x2 < 3; curl is -1 on the strip
    g = Grid(n=65, half_width=4.0)

    def strip(p):
        p = np.asarray(p)
        u1 = np.clip(p[..., 1] - 2.0, 0.0, 1.0)
        return np.stack([u1, np.zeros_like(u1)], axis=-1)

    field = VelocityField.from_function(g, strip)
    norm = serfati_norm(field)
    assert np.isclose(norm.u_inf, 1.0)
    assert np.isclose(norm.omega_inf, 1.0, atol=g.h)
    assert np.isclose(norm.total, 2.0, atol=g.h)


def test_serfati_norm_homogeneity():
    g = Grid(n=33, half_width=1.0)

    def fn(p):
        p = np.asarray(p)
        return np.stack([np.sin(p[..., 1]), np.cos(p[..., 0])], axis=-1)

    f1 = VelocityField.from_function(g, fn)
    f2 = VelocityField(g, 2.0 * f1.samples, fn)
    n1, n2 = serfati_norm(f1), serfati_norm(f2)
    assert np.isclose(n2.u_inf, 2.0 * n1.u_inf)
    assert np.isclose(n2.omega_inf, 2.0 * n1.omega_inf)


def test_serfati_norm_window_validation():
    g = Grid(n=33, half_width=1.0)
    field = VelocityField(g, np.zeros((33, 33, 2)), lambda p: p)
    with pytest.raises(ValueError):
        serfati_norm(field, window=2.0)
    with pytest.raises(ValueError):
        serfati_norm(field, window=0.01)


def test_uloc_estimator_constant():
    g = Grid(n=65, half_width=2.0)
    vals = np.full((65, 65), 3.0)
    est = uloc_lp_norm(vals, 2.0, g.h)
    assert np.isclose(est, 3.0, rtol=0.1)


# ---------------------------------------------------------------------------
# direct Biot-Savart
# ---------------------------------------------------------------------------

QUAD = QuadratureSpec()


def test_direct_bs_requires_support():
    def omega(y):
        return np.ones(np.asarray(y).shape[:-1])

    with pytest.raises(ValueError, match="support"):
        direct_biot_savart(full_plane(), omega, (0.0, 0.0))


def test_direct_bs_far_field_decay():
    amp, R = 2.0, 0.5
    omega = radial_bump(amp, R)
    m = bump_mass_inside(R, amp, R)
    x = np.array([10.0 * R, 0.0])
    u = direct_biot_savart(full_plane(), omega, x)
    assert np.isclose(np.linalg.norm(u), m / (2.0 * np.pi * np.linalg.norm(x)), rtol=1e-3)


def test_direct_bs_azimuthal_exact():
    # closed-form swirl speed of the radial bump, inside and outside
    amp, R = 4.0, 0.35
    omega = radial_bump(amp, R)
    for r in [0.1, 0.2, 0.35, 0.6, 1.0]:
        u = direct_biot_savart(full_plane(), omega, (r, 0.0))
        want = bump_azimuthal_speed(r, amp, R)
        assert np.isclose(u[1], want, rtol=2e-4, atol=1e-10)
        assert abs(u[0]) < 1e-8


def test_direct_bs_radial_symmetry():
    omega = radial_bump(1.0, 0.6)
    rng = np.random.default_rng(5)
    angles = rng.uniform(0.0, 2.0 * np.pi, 100)
    radii = rng.uniform(0.05, 2.0, 100)
    pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=-1)
    u = direct_biot_savart(full_plane(), omega, pts)
    radial_component = np.sum(u * pts, axis=-1) / radii
    assert np.max(np.abs(radial_component)) < 1e-8


def test_direct_bs_tangent_on_disk_boundary():
    dom = disk_exterior()
    omega = radial_bump(1.0, 0.5, center=(3.0, 0.0))
    theta = 2.0 * np.pi * np.arange(64) / 64.0
    xb = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    u = direct_biot_savart(dom, omega, xb)
    normal_component = np.sum(u * xb, axis=-1)
    assert np.max(np.abs(normal_component)) < 1e-6


def test_direct_bs_circulation_is_minus_mass():
    # contour integral of u along the unit circle against ccw tangent
    dom = disk_exterior()
    amp, R = 1.0, 0.5
    omega = radial_bump(amp, R, center=(3.0, 0.0))
    m = bump_mass_inside(R, amp, R)
    n = 512
    theta = 2.0 * np.pi * np.arange(n) / n
    xb = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    tau = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    u = direct_biot_savart(dom, omega, xb)
    circ = np.sum(np.sum(u * tau, axis=-1)) * (2.0 * np.pi / n)
    assert np.isclose(circ, -m, atol=1e-6)


def test_direct_bs_curl_consistency():
    amp, R = 1.0, 0.5
    omega = radial_bump(amp, R)
    h = R / 32.0
    for x0 in [np.array([0.1, 0.05]), np.array([-0.15, 0.2])]:
        e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
        pts = np.stack([x0 + e1, x0 - e1, x0 + e2, x0 - e2])
        u = direct_biot_savart(full_plane(), omega, pts)
        curl = (u[0, 1] - u[1, 1]) / (2 * h) - (u[2, 0] - u[3, 0]) / (2 * h)
        assert np.isclose(curl, omega(x0), rtol=2e-2)


# ---------------------------------------------------------------------------
# renormalized Biot-Savart
# ---------------------------------------------------------------------------


def test_renormalized_bs_zero_difference():
    omega = radial_bump(1.0, 0.5)

    def u0(p):
        p = np.asarray(p)
        return np.stack([p[..., 1], -p[..., 0]], axis=-1)

    x = np.array([0.3, -0.2])
    vals = renormalized_bs(full_plane(), omega, omega, u0, x, [0.5, 1.0, 2.0, 4.0])
    assert np.allclose(vals, u0(x)[None, :], atol=1e-12)


def test_renormalized_bs_stabilizes_to_direct():
    omega_t = radial_bump(1.5, 0.6)

    def omega_0(p):
        return np.zeros(np.asarray(p).shape[:-1])

    def u0(p):
        return np.zeros_like(np.asarray(p, dtype=float))

    x = np.array([0.4, 0.1])
    direct = direct_biot_savart(full_plane(), omega_t, x)
    vals = renormalized_bs(full_plane(), omega_t, omega_0, u0, x, [4.0, 8.0])
    # cutoff is identically 1 over the support once c_inner * R covers it
    assert np.allclose(vals[0], direct, atol=1e-6)
    assert np.allclose(vals[1], direct, atol=1e-6)
    assert np.allclose(vals[0], vals[1], atol=1e-8)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def _tiny_state():
    g = Grid(n=3, half_width=1.0)
    omega0 = radial_bump(1.0, 2.5)
    vel = VelocityField.from_function(g, lambda p: np.asarray(p, dtype=float))
    vor = VorticityField.initial(g, omega0)
    return g, vel, vor


def test_snapshot_csv_layout():
    g, vel, vor = _tiny_state()
    text = snapshot_csv_text(g, vel, vor)
    lines = text.strip().split("\n")
    assert lines[0] == "x1,x2,u1,u2,omega,label1,label2"
    assert len(lines) == 1 + 9
    first = lines[1].split(",")
    assert float(first[0]) == -1.0 and float(first[1]) == -1.0
    assert float(first[5]) == -1.0 and float(first[6]) == -1.0


def test_snapshot_ndjson_roundtrip():
    import json

    g, vel, vor = _tiny_state()
    text = snapshot_ndjson_text(g, vel, vor)
    records = [json.loads(line) for line in text.strip().split("\n")]
    assert len(records) == 9
    assert set(records[0]) == {"x1", "x2", "u1", "u2", "omega", "label1", "label2"}
    center = records[4]
    assert center["x1"] == 0.0 and center["omega"] == 1.0


def test_snapshot_deterministic():
    g, vel, vor = _tiny_state()
    assert snapshot_csv_text(g, vel, vor) == snapshot_csv_text(g, vel, vor)

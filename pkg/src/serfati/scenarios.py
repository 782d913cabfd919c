"""Shipped initial-data catalog.

Each constructor returns closed-form fields: the velocity really is the
kernel integral of its vorticity (by symmetry or superposition), so the
solver never solves for u0 internally. Two constructors refuse on
purpose; bounded velocity is impossible for their vorticities and the
refusal message says why.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import Grid
from .geometry import Domain, as_points, boundary_sample, disk_exterior, full_plane


def _bump_mass(r, amplitude: float, radius: float):
    rho2 = np.clip((np.asarray(r, dtype=float) / radius) ** 2, 0.0, 1.0)
    return amplitude * (np.pi * radius**2 / 4.0) * (1.0 - (1.0 - rho2) ** 4)


def _swirl(pts, amplitude: float, radius: float, center) -> np.ndarray:
    """Exact velocity of a radial bump vortex: azimuthal, m(r)/(2 pi r)."""
    rel = as_points(pts) - np.asarray(center, dtype=float)
    r = np.linalg.norm(rel, axis=-1)
    safe = np.where(r > 0.0, r, 1.0)
    tang = _bump_mass(r, amplitude, radius) / (2.0 * np.pi * safe**2)
    out = np.empty_like(rel)
    out[..., 0] = -tang * rel[..., 1]
    out[..., 1] = tang * rel[..., 0]
    out[r == 0.0] = 0.0
    return out


def _bump_omega(pts, amplitude: float, radius: float, center) -> np.ndarray:
    rel = as_points(pts) - np.asarray(center, dtype=float)
    s2 = np.clip(np.sum(rel * rel, axis=-1) / radius**2, 0.0, 1.0)
    return amplitude * (1.0 - s2) ** 3


@dataclass(frozen=True)
class Scenario:
    """Initial data plus the exact knowledge the tests and solver lean on.

    ``u0`` and ``omega0`` are vectorized callables on (..., 2) points,
    defined on the whole plane; in exterior domains the values inside
    the obstacle are a smooth ghost extension, used only to keep grid
    stencils meaningful. ``reference_solution(t, pts)`` is the exact
    velocity when one is known; ``reference_labels(t, pts)`` the exact
    back-to-labels map. ``support_radius`` is None when the vorticity
    does not have compact support.
    """

    name: str
    domain: Domain
    u0: Callable
    omega0: Callable
    sup_velocity: float
    sup_vorticity: float
    support_radius: float | None = None
    support_center: tuple[float, float] = (0.0, 0.0)
    reference_solution: Callable | None = None
    reference_labels: Callable | None = None
    circulation: float = 0.0
    is_solution: bool = True
    experimental: bool = False
    default_window: float = 1.0
    notes: str = ""
    params: dict = field(default_factory=dict)

    @property
    def serfati_norm0(self) -> float:
        return self.sup_velocity + self.sup_vorticity

    @property
    def stationary(self) -> bool:
        return self.reference_solution is not None and self.is_solution


def blob(amplitude: float = 4.0, radius: float = 0.35, center=(0.0, 0.0)) -> Scenario:
    """Radial bump vorticity on the full plane; stationary by symmetry."""
    center = tuple(float(c) for c in center)

    def omega0(pts):
        return _bump_omega(pts, amplitude, radius, center)

    def u0(pts):
        return _swirl(pts, amplitude, radius, center)

    omega0.support_radius = radius
    omega0.support_center = center

    r = np.linspace(1e-6, radius, 4097)
    sup_u = float(np.max(_bump_mass(r, amplitude, radius) / (2.0 * np.pi * r)))

    def reference(t, pts):
        return u0(pts)

    return Scenario(
        name="blob",
        domain=full_plane(),
        u0=u0,
        omega0=omega0,
        sup_velocity=sup_u,
        sup_vorticity=abs(amplitude),
        support_radius=radius,
        support_center=center,
        reference_solution=reference,
        default_window=1.0,
        notes="Yudovich data: bounded and integrable vorticity; the swirl "
        "closed form equals the kernel integral by radial symmetry.",
        params={"amplitude": amplitude, "radius": radius, "center": center},
    )


def blob_pair(
    amplitude: float = 4.0,
    radius: float = 0.25,
    separation: float = 0.7,
) -> Scenario:
    """Two co-rotating bumps; genuinely dynamic, still Yudovich."""
    half = separation / 2.0
    c1, c2 = (-half, 0.0), (half, 0.0)

    def omega0(pts):
        return _bump_omega(pts, amplitude, radius, c1) + _bump_omega(
            pts, amplitude, radius, c2
        )

    def u0(pts):
        return _swirl(pts, amplitude, radius, c1) + _swirl(pts, amplitude, radius, c2)

    reach = half + radius
    omega0.support_radius = reach
    omega0.support_center = (0.0, 0.0)

    probe = Grid(n=257, half_width=reach + 0.5).nodes()
    sup_u = float(np.max(np.linalg.norm(u0(probe), axis=-1)))

    return Scenario(
        name="blob-pair",
        domain=full_plane(),
        u0=u0,
        omega0=omega0,
        sup_velocity=sup_u,
        sup_vorticity=abs(amplitude),  # supports are disjoint for radius < half
        support_radius=reach,
        support_center=(0.0, 0.0),
        default_window=1.0,
        notes="Superposed swirls: exact kernel integral of the summed "
        "vorticity. The pair orbits the origin; no closed-form trajectory.",
        params={"amplitude": amplitude, "radius": radius, "separation": separation},
    )


def strip() -> Scenario:
    """Shear layer: u = (1,0) above the band 2 < x2 < 3, linear inside, zero below.

    The vorticity is minus the indicator of the band: bounded, nowhere
    decaying in x1, not integrable. Velocity stays bounded anyway.
    """

    def u0(pts):
        pts = as_points(pts)
        out = np.zeros_like(pts)
        out[..., 0] = np.clip(pts[..., 1] - 2.0, 0.0, 1.0)
        return out

    def omega0(pts):
        pts = as_points(pts)
        x2 = pts[..., 1]
        return np.where((x2 > 2.0) & (x2 < 3.0), -1.0, 0.0)

    def reference(t, pts):
        return u0(pts)

    return Scenario(
        name="strip",
        domain=full_plane(),
        u0=u0,
        omega0=omega0,
        sup_velocity=1.0,
        sup_vorticity=1.0,
        reference_solution=reference,
        default_window=4.0,
        notes="Stationary shear; the displayed Galilean representative is "
        "fixed, adding a constant stream must go through u0, not the "
        "accumulators.",
    )


def radial_exterior() -> Scenario:
    """Unit-speed azimuthal flow outside the unit disk; vorticity 1/|x|.

    Non-decaying velocity with non-integrable vorticity. Inside the
    obstacle the ghost extension is the rigid rotation x^perp, which
    matches the fluid values continuously on the circle.
    """

    def u0(pts):
        pts = as_points(pts)
        r = np.linalg.norm(pts, axis=-1)
        scale = 1.0 / np.maximum(r, 1.0)
        out = np.empty_like(pts)
        out[..., 0] = -pts[..., 1] * scale
        out[..., 1] = pts[..., 0] * scale
        return out

    def omega0(pts):
        pts = as_points(pts)
        r = np.linalg.norm(pts, axis=-1)
        return np.where(r >= 1.0, 1.0 / np.maximum(r, 1.0), 2.0)

    def reference(t, pts):
        return u0(pts)

    def reference_labels(t, pts):
        pts = as_points(pts)
        r = np.linalg.norm(pts, axis=-1)
        ang = -t / np.maximum(r, 1.0)
        c, s = np.cos(ang), np.sin(ang)
        out = np.empty_like(pts)
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1]
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1]
        return out

    return Scenario(
        name="radial-exterior",
        domain=disk_exterior(),
        u0=u0,
        omega0=omega0,
        sup_velocity=1.0,
        sup_vorticity=2.0,  # ghost rigid rotation carries curl 2 inside
        reference_solution=reference,
        reference_labels=reference_labels,
        circulation=2.0 * np.pi,
        default_window=2.0,
        notes="Stationary. Circulation 2 pi about the obstacle, conserved; "
        "trajectories circle at angular speed 1/|x|.",
    )


def galilean_nonexample() -> Scenario:
    """The accelerating stream u(t, x) = (t, 0): bounded, curl-free, not a solution.

    Its initial data is the zero field; the interesting object is the
    reference trajectory, whose identity residual is exactly (t, 0).
    """

    def zero_velocity(pts):
        return np.zeros_like(as_points(pts))

    def zero_omega(pts):
        return np.zeros(as_points(pts).shape[:-1])

    def reference(t, pts):
        out = np.zeros_like(as_points(pts))
        out[..., 0] = t
        return out

    return Scenario(
        name="galilean-nonexample",
        domain=full_plane(),
        u0=zero_velocity,
        omega0=zero_omega,
        sup_velocity=0.0,
        sup_vorticity=0.0,
        support_radius=0.0,
        reference_solution=reference,
        is_solution=False,
        default_window=1.0,
        notes="Satisfies the Euler equations with pressure -x1 but not the "
        "identity; the residual picks up exactly the acceleration.",
    )


def periodic_tile() -> Scenario:
    """Taylor-Green style cell: omega = -2 sin(x1) sin(x2), steady.

    Mean-zero periodic vorticity. Shipped as a windowed scenario; the
    window cuts a non-decaying field, so global claims are off and the
    scenario is flagged experimental.
    """

    def u0(pts):
        pts = as_points(pts)
        out = np.empty_like(pts)
        out[..., 0] = -np.sin(pts[..., 0]) * np.cos(pts[..., 1])
        out[..., 1] = np.cos(pts[..., 0]) * np.sin(pts[..., 1])
        return out

    def omega0(pts):
        pts = as_points(pts)
        return -2.0 * np.sin(pts[..., 0]) * np.sin(pts[..., 1])

    def reference(t, pts):
        return u0(pts)

    return Scenario(
        name="periodic",
        domain=full_plane(),
        u0=u0,
        omega0=omega0,
        sup_velocity=1.0,
        sup_vorticity=2.0,
        reference_solution=reference,
        experimental=True,
        default_window=np.pi,
        notes="Steady because vorticity is a function of the stream "
        "function. Window truncation error is not certified.",
    )


_REFUSALS = {
    "constant-vorticity": (
        "constant nonzero vorticity forces the velocity to grow linearly "
        "(any antiderivative of a constant curl does), so no bounded "
        "velocity exists and the data is outside this library's class"
    ),
    "semi-infinite-strip": (
        "vorticity supported on a half-strip has no bounded-velocity "
        "realization; the kernel integral diverges logarithmically along "
        "the strip's axis"
    ),
}

_BUILDERS = {
    "blob": blob,
    "blob-pair": blob_pair,
    "strip": strip,
    "radial-exterior": radial_exterior,
    "galilean-nonexample": galilean_nonexample,
    "periodic": periodic_tile,
}


def build(name: str, **params) -> Scenario:
    if name in _REFUSALS:
        raise ValueError(f"scenario {name!r} refused: {_REFUSALS[name]}")
    try:
        builder = _BUILDERS[name]
    except KeyError:
        known = ", ".join(sorted(_BUILDERS) + sorted(_REFUSALS))
        raise ValueError(f"unknown scenario {name!r}; known: {known}") from None
    return builder(**params)


def catalog() -> dict[str, str]:
    """Name -> one-line summary, refusals included and marked."""
    out = {}
    for name, builder in sorted(_BUILDERS.items()):
        doc = (builder.__doc__ or "").strip().splitlines()[0]
        out[name] = doc
    for name, why in sorted(_REFUSALS.items()):
        out[name] = f"REFUSED: {why}"
    return out


@dataclass(frozen=True)
class ValidationReport:
    scenario: str
    curl_consistency: float
    curl_tolerance: float
    divergence_max: float
    tangency_max: float
    serfati_norm: float
    label_error: float | None
    ok: bool


def _smooth_sample_points(scenario: Scenario, h: float) -> np.ndarray:
    """Grid points of spacing h inside the window, away from kinks and Γ."""
    w = scenario.default_window
    n = max(int(round(2.0 * w / h)) + 1, 9)
    pts = Grid(n=n, half_width=w).nodes().reshape(-1, 2)
    keep = np.ones(pts.shape[0], dtype=bool)
    if scenario.domain.has_boundary:
        r = np.linalg.norm(pts, axis=-1)
        keep &= r > 1.0 + 2.5 * h
    if scenario.name == "strip":
        keep &= np.minimum(np.abs(pts[:, 1] - 2.0), np.abs(pts[:, 1] - 3.0)) > 2.5 * h
    if scenario.support_radius is not None and scenario.support_radius > 0:
        # bump edges are C2 but not C3; skip the curvature ring
        rel = np.linalg.norm(pts - np.asarray(scenario.support_center), axis=-1)
        keep &= np.abs(rel - scenario.support_radius) > 2.5 * h
    return pts[keep]


def validate(
    scenario: Scenario,
    h: float = 1.0 / 64.0,
    check_labels: bool = False,
    t_final: float = 1.0,
    dt: float = 1.0 / 64.0,
    label_band: tuple[float, float] | None = None,
) -> ValidationReport:
    """Static consistency of the shipped fields, and optionally transport.

    Curl and divergence use centered differences of u0 at spacing h,
    sampled away from the known discontinuity sets; the curl tolerance
    scales with h. The label check advances the back-to-labels map
    under the reference velocity and compares to the exact map, over an
    interior band clear of window-truncation pollution.
    """
    pts = _smooth_sample_points(scenario, h)
    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    u0 = scenario.u0
    du1 = (np.asarray(u0(pts + e1)) - np.asarray(u0(pts - e1))) / (2.0 * h)
    du2 = (np.asarray(u0(pts + e2)) - np.asarray(u0(pts - e2))) / (2.0 * h)
    curl = du1[:, 1] - du2[:, 0]
    div = du1[:, 0] + du2[:, 1]
    curl_err = float(np.max(np.abs(curl - np.asarray(scenario.omega0(pts)))))
    div_max = float(np.max(np.abs(div)))
    curl_tol = 60.0 * h * max(scenario.sup_vorticity, 1.0)

    tangency = 0.0
    if scenario.domain.has_boundary:
        sample = boundary_sample(scenario.domain, 256)
        un = np.sum(np.asarray(u0(sample.points)) * sample.normal, axis=-1)
        tangency = float(np.max(np.abs(un)))

    label_error = None
    if check_labels:
        if scenario.reference_labels is None or not scenario.stationary:
            raise ValueError("scenario has no exact stationary label map to check")
        from .transport import advance_labels  # local import, cycle-free

        w = scenario.default_window
        n = max(int(round(2.0 * w / h)) + 1, 9)
        grid = Grid(n=n, half_width=w)
        nodes = grid.nodes()
        labels = nodes.copy()

        def u_ref(p):
            return scenario.reference_solution(0.0, p)

        steps = int(round(t_final / dt))
        for _ in range(steps):
            labels, _ = advance_labels(grid, labels, u_ref, u_ref, dt, scenario.domain)
        exact = scenario.reference_labels(t_final, nodes)
        err = np.linalg.norm(labels - exact, axis=-1)
        r = np.linalg.norm(nodes, axis=-1)
        if label_band is None:
            # stay clear of the window edge (truncation pollution) and of
            # the obstacle ring: the ghost extension is Lipschitz but not
            # C1 across the circle, so backtraced feet near it see an
            # interpolation layer of width a few h
            lo = 1.0 + max(6.0 * h, 0.05 * w) if scenario.domain.has_boundary else 0.3 * w
            label_band = (lo, 0.75 * w)
        band = (r >= label_band[0]) & (r <= label_band[1])
        label_error = float(err[band].max())

    ok = (
        curl_err <= curl_tol
        and div_max <= curl_tol
        and tangency <= 1e-8
        and np.isfinite(scenario.serfati_norm0)
    )
    return ValidationReport(
        scenario=scenario.name,
        curl_consistency=curl_err,
        curl_tolerance=curl_tol,
        divergence_max=div_max,
        tangency_max=tangency,
        serfati_norm=scenario.serfati_norm0,
        label_error=label_error,
        ok=ok,
    )

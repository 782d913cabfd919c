"""Semi-Lagrangian transport of the back-to-labels map.

Vorticity is never differentiated or re-gridded here. Each step traces
grid nodes backward through the velocity, then composites the previous
label field at the feet. Node vorticity stays a pure evaluation of the
initial data along labels, so its sup can be saturated but never
exceeded, whatever the time step does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import BicubicInterpolant, Grid
from .geometry import Domain, as_points


def backtrace(points, u_start, u_end, dt: float) -> np.ndarray:
    """Fourth-order characteristic feet for one backward step.

    ``u_start`` and ``u_end`` evaluate the velocity at the two time
    levels bracketing the step; the midpoint stage uses their average.
    Integration runs from the end level back to the start level.
    """
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    pts = as_points(points)

    def mid(z):
        return 0.5 * (np.asarray(u_start(z), float) + np.asarray(u_end(z), float))

    k1 = np.asarray(u_end(pts), dtype=float)
    k2 = mid(pts - 0.5 * dt * k1)
    k3 = mid(pts - 0.5 * dt * k2)
    k4 = np.asarray(u_start(pts - dt * k3), dtype=float)
    return pts - (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def label_lookup(grid: Grid, labels: np.ndarray, points) -> np.ndarray:
    """Evaluate a label field: spline inside the window, identity outside."""
    pts = as_points(points)
    flat = pts.reshape(-1, 2)
    out = flat.copy()
    inside = grid.contains(flat)
    if np.any(inside):
        out[inside] = BicubicInterpolant(grid, labels)(flat[inside])
    return out.reshape(pts.shape)


def advance_labels(
    grid: Grid,
    labels: np.ndarray,
    u_start,
    u_end,
    dt: float,
    domain: Domain | None = None,
    slack: float = 1e-8,
):
    """One transport step of the label field on the grid nodes.

    Every node advances, including nodes buried inside an obstacle; the
    velocity callables are expected to extend smoothly across the
    boundary, which keeps the composited field continuous and the
    spline stencils meaningful. Feet of fluid nodes that land deeper
    than ``slack`` inside the obstacle are counted and reported, not
    clamped; the slack absorbs integrator roundoff for nodes sitting
    exactly on the boundary.

    Returns ``(new_labels, penetrations)``.
    """
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (grid.n, grid.n, 2):
        raise ValueError("labels do not match the grid")
    nodes = grid.nodes()
    feet = backtrace(nodes, u_start, u_end, dt)
    new_labels = label_lookup(grid, labels, feet)
    penetrations = 0
    if domain is not None and domain.has_boundary:
        flat_nodes = nodes.reshape(-1, 2)
        flat_feet = feet.reshape(-1, 2)
        crossed = domain.contains(flat_nodes) & ~domain.contains(flat_feet)
        if np.any(crossed):
            projected, _ = domain.clamp_outside(flat_feet[crossed])
            depth = np.linalg.norm(projected - flat_feet[crossed], axis=-1)
            penetrations = int(np.count_nonzero(depth > slack))
    return new_labels, penetrations


# ---------------------------------------------------------------------------
# regularity diagnostics
# ---------------------------------------------------------------------------


def log_plus(z) -> np.ndarray:
    """max(-log z, 0): active below scale one, silent above it."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(-np.log(z), 0.0)


def ll_modulus(r) -> np.ndarray:
    """r (1 + log_plus r), the borderline modulus of a bounded-vorticity velocity."""
    r = np.asarray(r, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(r > 0.0, r * (1.0 + log_plus(r)), 0.0)


def sample_pairs(window: float, count: int, rng=None, min_sep: float = 1e-6):
    """Point pairs inside the square [-window, window]^2 at log-spread separations.

    Separations run log-uniformly from ``min_sep`` up to the window
    diagonal, so both branches of the modulus get exercised.
    """
    if window <= 0.0 or count < 1:
        raise ValueError("need a positive window and at least one pair")
    rng = np.random.default_rng(rng)
    sep = np.exp(rng.uniform(np.log(min_sep), np.log(2.0 * window), count))
    ang = rng.uniform(0.0, 2.0 * np.pi, count)
    half = 0.5 * sep[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    reach = np.maximum(window - np.abs(half).max(axis=1), 0.0)
    mid = rng.uniform(-1.0, 1.0, (count, 2)) * reach[:, None]
    return mid - half, mid + half


def ll_seminorm(f, points_a, points_b) -> float:
    """Largest ratio |f(a) - f(b)| / ll_modulus(|a - b|) over supplied pairs."""
    a = as_points(points_a)
    b = as_points(points_b)
    fa = np.asarray(f(a), dtype=float)
    fb = np.asarray(f(b), dtype=float)
    diff = fa - fb
    if diff.ndim > 1:
        num = np.linalg.norm(diff, axis=-1)
    else:
        num = np.abs(diff)
    den = ll_modulus(np.linalg.norm(a - b, axis=-1))
    good = den > 0.0
    if not np.any(good):
        raise ValueError("all pairs are degenerate")
    return float(np.max(num[good] / den[good]))


@dataclass(frozen=True)
class FlowDiagnostics:
    holder_beta: float
    area_min: float
    area_max: float
    stretch_max: float


def flow_diagnostics(grid: Grid, labels: np.ndarray, alpha: float, t: float) -> FlowDiagnostics:
    """Predicted Holder exponent and measured distortion of a label field.

    The exponent exp(-alpha t) is what an exponentially losing flow map
    retains after time t under a velocity of log-Lipschitz size alpha.
    Area and stretch come from centered differences of the labels over
    the interior nodes; a volume-preserving flow keeps the determinant
    pinned at one, so its drift measures transport error.
    """
    if alpha < 0.0 or t < 0.0:
        raise ValueError("alpha and t must be nonnegative")
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (grid.n, grid.n, 2):
        raise ValueError("labels do not match the grid")
    if grid.n < 5:
        raise ValueError("grid too small for interior differences")
    d1, d2 = np.gradient(labels, grid.h, grid.h, axis=(0, 1))
    core = (slice(1, -1), slice(1, -1))
    a, b = d1[core + (0,)], d2[core + (0,)]
    c, d = d1[core + (1,)], d2[core + (1,)]
    det = a * d - b * c
    # largest singular value of [[a, b], [c, d]] per node
    sq = a * a + b * b + c * c + d * d
    gap = np.sqrt(np.maximum((a * a + b * b - c * c - d * d) ** 2
                             + 4.0 * (a * c + b * d) ** 2, 0.0))
    stretch = np.sqrt(np.maximum(sq + gap, 0.0) / 2.0)
    return FlowDiagnostics(
        holder_beta=float(np.exp(-alpha * t)),
        area_min=float(det.min()),
        area_max=float(det.max()),
        stretch_max=float(stretch.max()),
    )

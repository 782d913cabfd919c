"""Deterministic quadrature engines for singular kernel integrals.

Three geometries cover everything the identity and the certification
sweeps need:

* balls around a singular point, in polar coordinates with
  Gauss-Legendre nodes in radius and a uniform (periodic trapezoid)
  angular rule; the r Jacobian desingularizes 1/r kernels,
* truncated plane integrals over an annulus r_inner <= |y - x| <=
  r_outer built from geometrically growing radial panels, reported
  together with a tail estimate tail_constant / r_outer,
* obstacle boundaries, by the periodic trapezoid rule in arclength.

Annuli that collide with the unit-disk obstacle get their own layout,
exterior_annular_nodes, where the circle enters as exact per-angle
radial panel edges instead of zeroed node weights. A hard clip leaves a
jump inside smooth panels and stalls convergence at first order in the
angular count; the exact edges keep every panel's integrand smooth.

Integrands are plain callables on (..., 2) point arrays, returning
scalars or vectors; nothing here owns state, and node layouts depend
only on the arguments, so results are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import BoundarySample, Domain, as_points, boundary_sample

__all__ = [
    "QuadratureSpec",
    "gauss_panels_1d",
    "polar_nodes",
    "annular_nodes",
    "exterior_annular_nodes",
    "singular_polar_integral",
    "truncated_plane_integral",
    "boundary_line_integral",
    "lp_norm",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts and layout knobs shared by the quadrature engines.

    radial_nodes / angular_nodes size the desingularized polar rule on
    eps-balls; panel_radial_nodes and panel_ratio shape the geometric
    annular panels of truncated plane integrals; boundary_nodes is the
    periodic trapezoid count; truncation_factor fixes the far cutoff
    radius as truncation_factor * eps, and tail_constant scales the
    reported tail estimate tail_constant / truncation_radius.
    """

    radial_nodes: int = 64
    angular_nodes: int = 64
    panel_radial_nodes: int = 8
    panel_ratio: float = 1.5
    boundary_nodes: int = 512
    truncation_factor: float = 50.0
    tail_constant: float = 1.0

    def refined(self, factor: int = 2) -> "QuadratureSpec":
        """A spec with every node count multiplied by factor."""
        return replace(
            self,
            radial_nodes=self.radial_nodes * factor,
            angular_nodes=self.angular_nodes * factor,
            panel_radial_nodes=self.panel_radial_nodes * factor,
            boundary_nodes=self.boundary_nodes * factor,
        )


def gauss_panels_1d(edges, n_per_panel: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule over consecutive panels.

    edges is an increasing sequence of panel boundaries; each panel gets
    n_per_panel nodes. Returns flat (nodes, weights).
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least two panel edges")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("panel edges must be strictly increasing")
    xg, wg = np.polynomial.legendre.leggauss(int(n_per_panel))
    lo = edges[:-1][:, None]
    hi = edges[1:][:, None]
    half = 0.5 * (hi - lo)
    nodes = lo + half * (xg[None, :] + 1.0)
    weights = half * wg[None, :]
    return nodes.ravel(), weights.ravel()


def _angles(n: int) -> tuple[np.ndarray, float]:
    # half-step offset keeps nodes off the coordinate axes without
    # touching the spectral accuracy of the periodic rule
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    return theta, 2.0 * np.pi / n


def polar_nodes(center, r_edges, n_rad: int, n_theta: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor polar rule around center; weights include the r Jacobian.

    Returns points of shape (m, 2) and weights (m,) with
    sum_i w_i f(p_i) ~ integral over the annulus spanned by r_edges.
    """
    c = as_points(center)
    r, wr = gauss_panels_1d(r_edges, n_rad)
    theta, wt = _angles(n_theta)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    px = c[0] + r[:, None] * cos_t[None, :]
    py = c[1] + r[:, None] * sin_t[None, :]
    pts = np.stack([px.ravel(), py.ravel()], axis=-1)
    w = np.repeat(wr * r, theta.size) * wt
    return pts, w


def _geometric_edges(r_inner: float, r_outer: float, ratio: float,
                     splits=()) -> np.ndarray:
    if not (r_outer > r_inner > 0.0):
        raise ValueError("need 0 < r_inner < r_outer")
    edges = [r_inner]
    r = r_inner
    while r * ratio < r_outer * (1.0 - 1e-12):
        r = r * ratio
        edges.append(r)
    edges.append(r_outer)
    for s in splits:
        if r_inner < s < r_outer:
            edges.append(float(s))
    return np.unique(np.asarray(edges, dtype=float))


def annular_nodes(center, r_inner: float, r_outer: float,
                  spec: QuadratureSpec, splits=()) -> tuple[np.ndarray, np.ndarray]:
    """Geometric annular panels around center, GL in radius, uniform angle."""
    edges = _geometric_edges(r_inner, r_outer, spec.panel_ratio, splits)
    return polar_nodes(center, edges, spec.panel_radial_nodes, spec.angular_nodes)


def _log_subdivide(lo: np.ndarray, hi: np.ndarray, count: int) -> np.ndarray:
    # per-column geometric edges lo * (hi/lo)^(k/count); lo, hi > 0
    t = np.arange(count + 1, dtype=float) / count
    return lo[:, None] ** (1.0 - t[None, :]) * hi[:, None] ** t[None, :]


def exterior_annular_nodes(center, r_inner: float, r_outer: float,
                           spec: QuadratureSpec, splits=()) -> tuple[np.ndarray, np.ndarray]:
    """Annulus around center clipped to the unit-disk exterior, exactly.

    Geometry: with a = |center| and gamma the angle measured from the
    ray pointing at the origin, a ray leaves the annulus through the
    obstacle along the radial gap [r-, r+] with

        r+- (gamma) = a cos gamma -+ sqrt(1 - a^2 sin^2 gamma),

    real only inside the horizon cone |gamma| <= asin(1/a). The gap
    endpoints become radial panel edges, so no panel straddles the
    circle. Angular panels are graded dyadically into the horizon
    directions, where the gap closes like a square root, and extra
    angular edges are inserted wherever a gap endpoint crosses r_inner,
    r_outer, or a split radius (panel topology then never changes
    inside one angular panel). Away from the cone the radial layout
    matches annular_nodes: geometric growth at ratio spec.panel_ratio
    with edges at the splits.

    center must lie on or outside the unit circle. Returns (pts, w);
    all nodes lie in the closed fluid region.
    """
    c = as_points(center)
    if c.ndim != 1:
        raise ValueError("one center at a time")
    if not (r_outer > r_inner > 0.0):
        raise ValueError("need 0 < r_inner < r_outer")
    a = float(np.hypot(c[0], c[1]))
    if a < 1.0 - 1e-9:
        raise ValueError("center must lie on or outside the unit circle")
    a = max(a, 1.0)
    if a - 1.0 >= r_outer or a + 1.0 <= r_inner:
        # obstacle entirely beyond the annulus or inside the excluded ball
        return annular_nodes(c, r_inner, r_outer, spec, splits)

    ratio = spec.panel_ratio
    g_rad = spec.panel_radial_nodes
    g_ang = max(4, spec.panel_radial_nodes // 2)
    knots = sorted({float(s) for s in splits if r_inner < s < r_outer})
    alpha = float(np.arcsin(min(1.0, 1.0 / a)))
    theta_c = float(np.arctan2(-c[1], -c[0]))

    # angular edges: dyadic grading into +-alpha plus topology crossings
    frac = np.concatenate([1.0 - 2.0 ** -np.arange(0.0, 7.0), [1.0]])
    crossings = []
    for cv in (r_inner, *knots, r_outer):
        cosg = (cv * cv + a * a - 1.0) / (2.0 * a * cv)
        if -1.0 < cosg < 1.0:
            g = float(np.arccos(cosg))
            if 1e-12 < g < alpha * (1.0 - 1e-12):
                crossings.append(g)
    gam = np.unique(np.concatenate([frac * alpha, np.asarray(crossings, dtype=float)]))
    n_out = max(6, spec.angular_nodes // 8)
    span_out = 2.0 * np.pi - 2.0 * alpha
    edges = np.concatenate([
        theta_c - gam[::-1],
        theta_c + gam[1:],
        theta_c + alpha + span_out * np.arange(1, n_out + 1) / n_out,
    ])

    xg_t, wg_t = np.polynomial.legendre.leggauss(g_ang)
    xg, wg = np.polynomial.legendre.leggauss(g_rad)
    pts_parts: list[np.ndarray] = []
    w_parts: list[np.ndarray] = []
    horizon = (theta_c - alpha, theta_c + alpha)
    for lo_t, hi_t in zip(edges[:-1], edges[1:]):
        # the gap closes like sqrt(alpha - |gamma|) at the horizon, so the
        # two panels ending there are integrated in u = sqrt of the
        # distance to it, which turns every half power into a polynomial
        if abs(hi_t - horizon[1]) < 1e-13 and lo_t > horizon[0]:
            u_half = 0.5 * np.sqrt(hi_t - lo_t)
            u = u_half + u_half * xg_t
            theta = hi_t - u * u
            w_theta = 2.0 * u * u_half * wg_t
        elif abs(lo_t - horizon[0]) < 1e-13 and hi_t < horizon[1]:
            u_half = 0.5 * np.sqrt(hi_t - lo_t)
            u = u_half + u_half * xg_t
            theta = lo_t + u * u
            w_theta = 2.0 * u * u_half * wg_t
        else:
            half_t = 0.5 * (hi_t - lo_t)
            theta = 0.5 * (hi_t + lo_t) + half_t * xg_t
            w_theta = half_t * wg_t
        gamma = theta - theta_c
        sing = a * np.sin(gamma)
        disc = 1.0 - sing * sing
        root = np.sqrt(np.maximum(disc, 0.0))
        cosg = np.cos(gamma)
        blocked = (disc > 0.0) & (cosg > 0.0)
        gap_lo = np.where(blocked, a * cosg - root, r_outer)
        gap_hi = np.where(blocked, a * cosg + root, r_outer)
        gap_lo = np.clip(gap_lo, r_inner, r_outer)
        gap_hi = np.clip(gap_hi, r_inner, r_outer)

        mid = 0.5 * (lo_t + hi_t) - theta_c
        s_mid = a * np.sin(mid)
        c_mid = np.cos(mid)
        if (1.0 - s_mid * s_mid) > 0.0 and c_mid > 0.0:
            r_m = np.sqrt(1.0 - s_mid * s_mid)
            m_lo = np.clip(a * c_mid - r_m, r_inner, r_outer)
            m_hi = np.clip(a * c_mid + r_m, r_inner, r_outer)
        else:
            m_lo = m_hi = r_outer

        intervals = []
        if m_lo > r_inner * (1.0 + 1e-9):
            intervals.append((np.full_like(gap_lo, r_inner), gap_lo, r_inner, m_lo))
        if m_hi < r_outer * (1.0 - 1e-9):
            intervals.append((gap_hi, np.full_like(gap_hi, r_outer), m_hi, r_outer))

        for lo_r, hi_r, lo_m, hi_m in intervals:
            base = [lo_r]
            base_mid = [lo_m]
            for s in knots:
                if lo_m < s < hi_m:
                    base.append(np.full_like(lo_r, s))
                    base_mid.append(s)
            base.append(hi_r)
            base_mid.append(hi_m)
            for k in range(len(base) - 1):
                n_cells = max(1, int(np.ceil(np.log(base_mid[k + 1] / base_mid[k])
                                             / np.log(ratio))))
                sub = _log_subdivide(base[k], base[k + 1], n_cells)  # (g_sub, n_cells + 1)
                half_r = 0.5 * (sub[:, 1:] - sub[:, :-1])            # (g_sub, n_cells)
                r = (0.5 * (sub[:, 1:] + sub[:, :-1])[..., None]
                     + half_r[..., None] * xg)                       # (g_sub, n_cells, g_sub)
                w_r = half_r[..., None] * wg
                w_full = w_theta[:, None, None] * w_r * r
                px = c[0] + r * np.cos(theta)[:, None, None]
                py = c[1] + r * np.sin(theta)[:, None, None]
                pts_parts.append(np.stack([px.ravel(), py.ravel()], axis=-1))
                w_parts.append(w_full.ravel())

    return np.concatenate(pts_parts), np.concatenate(w_parts)


def _clip_weights(domain: Domain | None, pts: np.ndarray, w: np.ndarray) -> np.ndarray:
    if domain is None or not domain.has_boundary:
        return w
    mask = domain.contains(pts)
    return np.where(mask, w, 0.0)


def _weighted_sum(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return float(np.dot(w, values))
    return np.tensordot(w, values, axes=(0, 0))


def singular_polar_integral(f, center, radius: float, spec: QuadratureSpec,
                            domain: Domain | None = None,
                            radial_splits=()) -> np.ndarray | float:
    """Integral of f over the ball B_radius(center), clipped to the domain.

    The polar Jacobian absorbs one power of the kernel singularity at
    the center, so integrands growing like 1/|y - center| are handled
    without special casing. radial_splits inserts panel edges (cutoff
    knots and the like) so piecewise-smooth integrands stay spectrally
    friendly.
    """
    edges = np.unique(np.concatenate([
        np.array([0.0, float(radius)]),
        np.asarray([s for s in radial_splits if 0.0 < s < radius], dtype=float),
    ]))
    pts, w = polar_nodes(center, edges, spec.radial_nodes, spec.angular_nodes)
    w = _clip_weights(domain, pts, w)
    return _weighted_sum(f(pts), w)


def truncated_plane_integral(f, center, r_inner: float, spec: QuadratureSpec,
                             r_outer: float | None = None,
                             domain: Domain | None = None,
                             radial_splits=()):
    """Integral of f over r_inner <= |y - center| <= r_outer plus a tail estimate.

    r_outer defaults to spec.truncation_factor * r_inner. Returns
    (value, tail) where tail = spec.tail_constant / r_outer is the
    crude reported bound for the neglected exterior; callers fold it
    into their error budgets rather than into the value.
    """
    if r_outer is None:
        r_outer = spec.truncation_factor * r_inner
    pts, w = annular_nodes(center, r_inner, r_outer, spec, radial_splits)
    w = _clip_weights(domain, pts, w)
    value = _weighted_sum(f(pts), w)
    tail = spec.tail_constant / r_outer
    return value, tail


def boundary_line_integral(domain: Domain, f, spec: QuadratureSpec | int | None = None,
                           sample: BoundarySample | None = None) -> np.ndarray | float:
    """Periodic trapezoid integral of f over the obstacle boundary.

    f receives the BoundarySample and returns per-node values (scalars
    or vectors). Spectrally accurate for smooth periodic integrands.
    """
    if sample is None:
        if isinstance(spec, QuadratureSpec):
            n = spec.boundary_nodes
        elif spec is None:
            n = QuadratureSpec().boundary_nodes
        else:
            n = int(spec)
        sample = boundary_sample(domain, n)
    return _weighted_sum(f(sample), sample.weight)


def lp_norm(f, p: float, center, radius: float, spec: QuadratureSpec,
            domain: Domain | None = None, r_inner: float = 0.0,
            radial_splits=()) -> float:
    """L^p norm of f over a ball or annulus around center.

    Vector-valued f is reduced with the Euclidean norm before raising
    to the p-th power. p = 1 gives the plain absolute integral.
    """
    if p < 1.0:
        raise ValueError("p >= 1 required")

    def integrand(pts):
        vals = np.asarray(f(pts), dtype=float)
        if vals.ndim == pts.ndim:
            mag = np.sqrt(np.sum(vals * vals, axis=-1))
        else:
            mag = np.abs(vals)
        return mag ** p

    if r_inner > 0.0:
        edges = np.unique(np.concatenate([
            np.array([float(r_inner), float(radius)]),
            np.asarray([s for s in radial_splits if r_inner < s < radius], dtype=float),
        ]))
    else:
        # |f|^p behaves like r^(1-p) after the Jacobian once f has a
        # 1/r singularity, so grade panels dyadically into the center
        dyadic = radius * 2.0 ** -np.arange(48, -1, -1, dtype=float)
        edges = np.unique(np.concatenate([
            np.array([0.0]),
            dyadic,
            np.asarray([s for s in radial_splits if 0.0 < s < radius], dtype=float),
        ]))
    pts, w = polar_nodes(center, edges, spec.panel_radial_nodes, spec.angular_nodes)
    w = _clip_weights(domain, pts, w)
    total = float(np.dot(w, integrand(pts)))
    return total ** (1.0 / p)

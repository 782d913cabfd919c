"""Plane geometry, conformal maps, and flow domains.

Coordinates are float64 numpy arrays of shape (..., 2) throughout; the
trailing axis holds (x1, x2). A small Vec2 dataclass is provided for
callers that prefer named fields, and every public function accepts it
wherever a point is expected.

Exterior domains are described by a conformal map T taking the fluid
region onto the exterior of the closed unit disk, with T(infinity) =
infinity. The unit-disk exterior itself uses the identity map. Obstacle
boundaries are oriented counterclockwise; the outward normal of the
fluid region (pointing into the obstacle) is n = perp(tangent), which on
the unit circle reduces to n(sigma) = -y(sigma).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Vec2",
    "perp",
    "image_point",
    "ConformalMap",
    "identity_map",
    "ellipse_map",
    "Domain",
    "full_plane",
    "disk_exterior",
    "ellipse_exterior",
    "exterior_from_map",
    "BoundarySample",
    "boundary_sample",
]


@dataclass(frozen=True)
class Vec2:
    """A point or vector in the plane with named components."""

    x1: float
    x2: float

    def __iter__(self):
        yield self.x1
        yield self.x2

    def __len__(self):
        return 2

    def __array__(self, dtype=None, copy=None):
        return np.array([self.x1, self.x2], dtype=dtype or float)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2], dtype=float)


def as_points(v) -> np.ndarray:
    """Coerce a Vec2, pair, or (..., 2) array-like to a float64 array."""
    a = np.asarray(v, dtype=float)
    if a.shape[-1] != 2:
        raise ValueError(f"expected trailing axis of length 2, got shape {a.shape}")
    return a


def perp(v) -> np.ndarray:
    """Rotate by +90 degrees: (v1, v2) -> (-v2, v1).

    Applied to the gradient this produces the divergence-free field
    grad^perp f = (-d2 f, d1 f).
    """
    a = as_points(v)
    out = np.empty_like(a)
    out[..., 0] = -a[..., 1]
    out[..., 1] = a[..., 0]
    return out


def image_point(y) -> np.ndarray:
    """Inversion across the unit circle, y -> y / |y|^2.

    The image of a source point under the method of images for the
    exterior of the unit disk. Maps the domain exterior into the open
    disk and fixes the circle pointwise. Undefined at the origin.
    """
    a = as_points(y)
    r2 = np.sum(a * a, axis=-1, keepdims=True)
    return a / r2


def _to_complex(points: np.ndarray) -> np.ndarray:
    return points[..., 0] + 1j * points[..., 1]


def _from_complex(z: np.ndarray) -> np.ndarray:
    return np.stack([np.real(z), np.imag(z)], axis=-1)


@dataclass(frozen=True)
class ConformalMap:
    """Analytic bijection onto the exterior of the closed unit disk.

    Built from a holomorphic function f with f(infinity) = infinity and
    f' nonvanishing on the fluid region. Users supply f, its first two
    complex derivatives, and the inverse, each acting on complex arrays.

    Attributes
    ----------
    lip_upper, lip_lower : float
        Bounds on |f'| over the domain, so lip_lower * |x - y| <=
        |T(x) - T(y)| <= lip_upper * |x - y| along straight segments in
        convex parts of the domain. Shipped maps carry exact values.
    """

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]
    f_inverse: Callable[[np.ndarray], np.ndarray]
    lip_upper: float
    lip_lower: float
    label: str = "map"

    def forward(self, points) -> np.ndarray:
        return _from_complex(self.f(_to_complex(as_points(points))))

    def inverse(self, points) -> np.ndarray:
        return _from_complex(self.f_inverse(_to_complex(as_points(points))))

    def jacobian(self, points) -> np.ndarray:
        """DT as a (..., 2, 2) array; rows are components, columns derivatives."""
        w = self.df(_to_complex(as_points(points)))
        a, b = np.real(w), np.imag(w)
        out = np.empty(a.shape + (2, 2))
        out[..., 0, 0] = a
        out[..., 0, 1] = -b
        out[..., 1, 0] = b
        out[..., 1, 1] = a
        return out

    def second_derivative(self, points) -> np.ndarray:
        """D2T as a (..., 2, 2, 2) array, [k, i, j] = d_i d_j T^k.

        Assembled from the single complex number f'' via the
        Cauchy-Riemann relations (d/dy = i d/dx on holomorphic f).
        """
        w = self.d2f(_to_complex(as_points(points)))
        a, b = np.real(w), np.imag(w)
        out = np.empty(a.shape + (2, 2, 2))
        out[..., 0, 0, 0] = a
        out[..., 0, 0, 1] = -b
        out[..., 0, 1, 0] = -b
        out[..., 0, 1, 1] = -a
        out[..., 1, 0, 0] = b
        out[..., 1, 0, 1] = a
        out[..., 1, 1, 0] = a
        out[..., 1, 1, 1] = -b
        return out


def identity_map() -> ConformalMap:
    return ConformalMap(
        f=lambda z: z,
        df=lambda z: np.ones_like(z),
        d2f=lambda z: np.zeros_like(z),
        f_inverse=lambda z: z,
        lip_upper=1.0,
        lip_lower=1.0,
        label="identity",
    )


def ellipse_map(semi_major: float = 2.0, semi_minor: float = 1.0) -> ConformalMap:
    """Joukowski-type map from the exterior of an ellipse to the disk exterior.

    The inverse is z = a w + b / w with a = (A + B) / 2, b = (A - B) / 2,
    which carries |w| = 1 onto the ellipse with semi-axes (A, B). The
    forward branch of sqrt(z^2 - c^2), c^2 = 4ab, is taken as
    z sqrt(1 - (c/z)^2), analytic off the focal segment and asymptotic
    to z at infinity, so T(z) ~ z / (2a) far away. |f''| decays like
    c^2 / (2a |z|^3).

    Parameters
    ----------
    semi_major, semi_minor : float
        Ellipse semi-axes A > B > 0.
    """
    A, B = float(semi_major), float(semi_minor)
    if not (A > B > 0):
        raise ValueError("need semi_major > semi_minor > 0")
    a = 0.5 * (A + B)
    b = 0.5 * (A - B)
    c2 = 4.0 * a * b

    def branch_sqrt(z):
        # z sqrt(1 - c^2/z^2), principal branch: analytic outside [-c, c].
        return z * np.sqrt(1.0 - c2 / (z * z))

    def f(z):
        return (z + branch_sqrt(z)) / (2.0 * a)

    def df(z):
        return (1.0 + z / branch_sqrt(z)) / (2.0 * a)

    def d2f(z):
        s = branch_sqrt(z)
        return -c2 / (2.0 * a * s * s * s)

    def f_inverse(w):
        return a * w + b / w

    return ConformalMap(
        f=f,
        df=df,
        d2f=d2f,
        f_inverse=f_inverse,
        lip_upper=1.0 / B,
        lip_lower=1.0 / A,
        label=f"ellipse({A},{B})",
    )


# Dense theta table used to build arclength parameterizations of mapped
# boundaries; the unit circle bypasses it.
_ARCLENGTH_TABLE_SIZE = 4096


@dataclass
class Domain:
    """The full plane or the exterior of a single smooth obstacle.

    Attributes
    ----------
    kind : str
        "plane" or "exterior".
    cmap : ConformalMap or None
        Map onto the unit-disk exterior; None for the full plane.
    """

    kind: str
    cmap: ConformalMap | None = None
    _arclength_cache: dict = field(default_factory=dict, repr=False)

    @property
    def has_boundary(self) -> bool:
        return self.kind == "exterior"

    @property
    def is_disk(self) -> bool:
        return self.has_boundary and self.cmap is not None and self.cmap.label == "identity"

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points lying in the fluid region (boundary included)."""
        pts = as_points(points)
        if self.kind == "plane":
            return np.ones(pts.shape[:-1], dtype=bool)
        w = self.cmap.forward(pts)
        # tiny slack keeps boundary nodes themselves inside
        return np.sum(w * w, axis=-1) >= 1.0 - 1e-12

    def clamp_outside(self, points, pad: float = 1e-9) -> tuple[np.ndarray, int]:
        """Project points that fell inside the obstacle back to just outside.

        Returns the corrected array and the number of points moved. Used by
        the transport stage as a guardrail; the count is reported, never
        silently swallowed.
        """
        pts = as_points(points).copy()
        if self.kind == "plane":
            return pts, 0
        w = self.cmap.forward(pts)
        r = np.sqrt(np.sum(w * w, axis=-1))
        bad = r < 1.0
        n_bad = int(np.count_nonzero(bad))
        if n_bad:
            wb = w[bad]
            rb = r[bad][..., None]
            wb = wb / rb * (1.0 + pad)
            pts[bad] = self.cmap.inverse(wb)
        return pts, n_bad

    # -- boundary -----------------------------------------------------

    def boundary_curve(self, theta: np.ndarray) -> np.ndarray:
        """Obstacle boundary as the preimage of the unit circle."""
        if not self.has_boundary:
            raise ValueError("the full plane has no boundary")
        circle = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        if self.is_disk:
            return circle
        return self.cmap.inverse(circle)

    def _arclength_table(self) -> tuple[np.ndarray, np.ndarray]:
        key = "table"
        if key not in self._arclength_cache:
            m = _ARCLENGTH_TABLE_SIZE
            theta = np.linspace(0.0, 2.0 * np.pi, m + 1)
            pts = self.boundary_curve(theta)
            seg = np.sqrt(np.sum(np.diff(pts, axis=0) ** 2, axis=-1))
            sigma = np.concatenate([[0.0], np.cumsum(seg)])
            self._arclength_cache[key] = (theta, sigma)
        return self._arclength_cache[key]

    def boundary_length(self) -> float:
        if self.is_disk:
            return 2.0 * np.pi
        _, sigma = self._arclength_table()
        return float(sigma[-1])


@dataclass(frozen=True)
class BoundarySample:
    """Equispaced-in-arclength boundary nodes with frame and weights.

    points[k] = y(sigma[k]); tangent is the unit counterclockwise
    tangent, normal = perp(tangent) points out of the fluid (into the
    obstacle), and weight[k] is the periodic trapezoid arclength weight
    L / n.
    """

    sigma: np.ndarray
    points: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    weight: np.ndarray
    length: float


def boundary_sample(domain: Domain, n: int) -> BoundarySample:
    """Sample the obstacle boundary at n equispaced arclength stations.

    On the unit circle this is exact: y(sigma) = (cos sigma, sin sigma),
    tangent perp(y), normal -y. Mapped boundaries invert a dense
    cumulative arclength table and take the tangent from the curve
    derivative.
    """
    if not domain.has_boundary:
        raise ValueError("boundary_sample needs an exterior domain")
    if n < 4:
        raise ValueError("need at least 4 boundary nodes")
    if domain.is_disk:
        sigma = 2.0 * np.pi * np.arange(n) / n
        pts = np.stack([np.cos(sigma), np.sin(sigma)], axis=-1)
        tangent = perp(pts)
        normal = -pts
        weight = np.full(n, 2.0 * np.pi / n)
        return BoundarySample(sigma, pts, tangent, normal, weight, 2.0 * np.pi)

    theta_tab, sigma_tab = domain._arclength_table()
    length = sigma_tab[-1]
    sigma = length * np.arange(n) / n
    theta = np.interp(sigma, sigma_tab, theta_tab)
    pts = domain.boundary_curve(theta)
    # curve derivative dgamma/dtheta by the chain rule through the map
    if domain.is_disk:
        dgamma = perp(pts)
    else:
        circle = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        dcircle = perp(circle)
        winv = domain.cmap  # z = f_inverse(w): dz/dw = 1 / f'(z)
        dfz = winv.df(_to_complex(pts))
        dz = (dcircle[..., 0] + 1j * dcircle[..., 1]) / dfz
        dgamma = _from_complex(dz)
    norms = np.sqrt(np.sum(dgamma * dgamma, axis=-1, keepdims=True))
    tangent = dgamma / norms
    normal = perp(tangent)
    weight = np.full(n, length / n)
    return BoundarySample(sigma, pts, tangent, normal, weight, length)


def full_plane() -> Domain:
    return Domain(kind="plane")


def disk_exterior() -> Domain:
    return Domain(kind="exterior", cmap=identity_map())


def ellipse_exterior(semi_major: float = 2.0, semi_minor: float = 1.0) -> Domain:
    return Domain(kind="exterior", cmap=ellipse_map(semi_major, semi_minor))


def exterior_from_map(cmap: ConformalMap) -> Domain:
    """Exterior domain for a user-supplied analytic map onto the disk exterior."""
    return Domain(kind="exterior", cmap=cmap)

"""Biot-Savart kernels for the plane and for exterior domains.

The free-space kernel is K(z) = perp(z) / (2 pi |z|^2), the rotated
version of N(z) = z / (2 pi |z|^2). For the exterior of the unit disk
the velocity kernel with circulation zero at infinity is the image form

    K_dom(x, y) = K(x - y) - K(x - y*),      y* = y / |y|^2,

its bounded harmonic companion is Kbar(x) = K(x), and the decaying
hydrodynamic kernel is J(x, y) = K_dom(x, y) + Kbar(x). A general
exterior domain with conformal map T pulls all three back through
DT(x)^T applied to the disk kernels at (T(x), T(y)).

All derivative assemblies here are closed form. Finite differences are
deliberately *not* used anywhere in this module; they exist only as an
independent oracle in the test suite.

Arrays broadcast: x and y may be Vec2, pairs, or (..., 2) arrays. Every
kernel is undefined on the diagonal x = y (and, for image terms, at
y = 0); callers keep quadrature nodes off those points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Domain, as_points, image_point, perp

__all__ = [
    "n_free",
    "k_free",
    "grad_n",
    "hess_n",
    "grad_k",
    "hess_k",
    "k_domain",
    "kbar",
    "j_kernel",
    "l_kernel",
    "Cutoff",
    "cutoff_eval",
    "cutoff_grad",
    "cutoff_hess",
    "farfield_weight",
]


def _r2(z: np.ndarray) -> np.ndarray:
    return np.sum(z * z, axis=-1)


def n_free(v) -> np.ndarray:
    """N(z) = z / (2 pi |z|^2)."""
    z = as_points(v)
    return z / (2.0 * np.pi * _r2(z)[..., None])


def k_free(v) -> np.ndarray:
    """Free-space velocity kernel K(z) = perp(z) / (2 pi |z|^2)."""
    z = as_points(v)
    return perp(z) / (2.0 * np.pi * _r2(z)[..., None])


def grad_n(v) -> np.ndarray:
    """First derivatives of N, shape (..., 2, 2) with [j, p] = d_p N^j.

    d_p N^j = delta_jp / (2 pi |z|^2) - z_j z_p / (pi |z|^4); traceless.
    """
    z = as_points(v)
    r2 = _r2(z)
    eye = np.eye(2)
    out = eye / (2.0 * np.pi * r2[..., None, None])
    out = out - z[..., :, None] * z[..., None, :] / (np.pi * (r2 * r2)[..., None, None])
    return out


def hess_n(v) -> np.ndarray:
    """Second derivatives of N, shape (..., 2, 2, 2) with [j, m, p] = d_m d_p N^j."""
    z = as_points(v)
    r2 = _r2(z)
    r4 = r2 * r2
    r6 = r4 * r2
    eye = np.eye(2)
    zj = z[..., :, None, None]
    zm = z[..., None, :, None]
    zp = z[..., None, None, :]
    # -(z_m d_jp + z_p d_jm + z_j d_mp) / (pi r^4) + 4 z_j z_m z_p / (pi r^6)
    d_jp = eye[:, None, :]
    d_jm = eye[:, :, None]
    d_mp = eye[None, :, :]
    out = -(zm * d_jp + zp * d_jm + zj * d_mp) / (np.pi * r4[..., None, None, None])
    out = out + 4.0 * zj * zm * zp / (np.pi * r6[..., None, None, None])
    return out


def grad_k(v) -> np.ndarray:
    """First derivatives of K, shape (..., 2, 2) with [j, p] = d_p K^j."""
    g = grad_n(v)
    out = np.empty_like(g)
    out[..., 0, :] = -g[..., 1, :]
    out[..., 1, :] = g[..., 0, :]
    return out


def hess_k(v) -> np.ndarray:
    """Second derivatives of K, shape (..., 2, 2, 2) with [j, m, p] = d_m d_p K^j."""
    h = hess_n(v)
    out = np.empty_like(h)
    out[..., 0, :, :] = -h[..., 1, :, :]
    out[..., 1, :, :] = h[..., 0, :, :]
    return out


# ---------------------------------------------------------------------------
# image-point derivative tensors (unit disk)
# ---------------------------------------------------------------------------


def _image_grad(y: np.ndarray) -> np.ndarray:
    """S[l, k] = d y*_k / d y_l = delta_lk / |y|^2 - 2 y_l y_k / |y|^4."""
    r2 = _r2(y)
    r4 = r2 * r2
    eye = np.eye(2)
    return eye / r2[..., None, None] - 2.0 * y[..., :, None] * y[..., None, :] / r4[..., None, None]


def _image_hess(y: np.ndarray) -> np.ndarray:
    """R[m, l, k] = d_m d_l y*_k."""
    r2 = _r2(y)
    r4 = r2 * r2
    r6 = r4 * r2
    eye = np.eye(2)
    ym = y[..., :, None, None]
    yl = y[..., None, :, None]
    yk = y[..., None, None, :]
    d_ml = eye[:, :, None]
    d_mk = eye[:, None, :]
    d_lk = eye[None, :, :]
    out = 8.0 * ym * yl * yk / r6[..., None, None, None]
    out = out - 2.0 * (d_ml * yk + d_mk * yl + d_lk * ym) / r4[..., None, None, None]
    return out


# ---------------------------------------------------------------------------
# disk kernels and their y-derivatives
# ---------------------------------------------------------------------------


def _disk_value(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return k_free(x - y) - k_free(x - image_point(y))


def _disk_grad_y(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d K_disk^j / d y_l, shape (..., 2, 2) indexed [j, l]."""
    gk = grad_k(x - y)
    q = x - image_point(y)
    gq = grad_k(q)  # [j, k] = d_k K^j at q
    s = _image_grad(y)  # [l, k]
    # d_{y_l} K^j(x - y)   = -(d_l K^j)(x - y)
    # d_{y_l} K^j(x - y*)  = -sum_k (d_k K^j)(q) S[l, k]
    # K_disk = K(x - y) - K(x - y*), so the image part enters with +.
    img = np.einsum("...jk,...lk->...jl", gq, s)
    return -gk + img


def _disk_hess_y(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d^2 K_disk^j / d y_m d y_l, shape (..., 2, 2, 2) indexed [j, m, l]."""
    hk = hess_k(x - y)  # [j, m, l] = d_m d_l K^j at x - y
    q = x - image_point(y)
    gq = grad_k(q)
    hq = hess_k(q)  # [j, p, k]
    s = _image_grad(y)  # [l, k]
    r = _image_hess(y)  # [m, l, k]
    # d_{y_m} d_{y_l} K^j(x - y) = +(d_m d_l K^j)(x - y)
    # d_{y_m} d_{y_l} K^j(x - y*) =
    #   sum_{p,k} (d_p d_k K^j)(q) S[m, p] S[l, k] - sum_k (d_k K^j)(q) R[m, l, k]
    img = np.einsum("...jpk,...mp,...lk->...jml", hq, s, s)
    img = img - np.einsum("...jk,...mlk->...jml", gq, r)
    return hk - img


# ---------------------------------------------------------------------------
# public domain kernels
# ---------------------------------------------------------------------------


def _row_transform(domain: Domain, x: np.ndarray) -> np.ndarray:
    """DT(x)^T, the row transform pulling disk kernels back to the domain."""
    return np.swapaxes(domain.cmap.jacobian(x), -1, -2)


def k_domain(domain: Domain, x, y) -> np.ndarray:
    """Velocity kernel of the domain (zero circulation at infinity).

    Full plane: K(x - y). Unit-disk exterior: the image form. Mapped
    exterior: DT(x)^T K_disk(T(x), T(y)).
    """
    xx, yy = as_points(x), as_points(y)
    if domain.kind == "plane":
        return k_free(xx - yy)
    if domain.is_disk:
        return _disk_value(xx, yy)
    X = domain.cmap.forward(xx)
    Y = domain.cmap.forward(yy)
    mt = _row_transform(domain, xx)
    return np.einsum("...ij,...j->...i", mt, _disk_value(X, Y))


def kbar(domain: Domain, x) -> np.ndarray:
    """Bounded harmonic kernel carrying unit circulation around the obstacle.

    For the unit disk this is K(x) itself; mapped domains pull it back
    through DT(x)^T. Integrating kbar . tangent over the boundary gives
    exactly 1 with the counterclockwise orientation.
    """
    if not domain.has_boundary:
        raise ValueError("kbar is defined for exterior domains only")
    xx = as_points(x)
    if domain.is_disk:
        return k_free(xx)
    X = domain.cmap.forward(xx)
    mt = _row_transform(domain, xx)
    return np.einsum("...ij,...j->...i", mt, k_free(X))


def j_kernel(domain: Domain, x, y) -> np.ndarray:
    """Hydrodynamic kernel J = K_dom + kbar; decays like 1 / |x - y|.

    On the full plane there is no harmonic correction and J reduces to
    the free kernel. For boundary sources y the image cancellation makes
    J(x, y) = kbar(x) exactly.
    """
    if domain.kind == "plane":
        return k_free(as_points(x) - as_points(y))
    return k_domain(domain, x, y) + kbar(domain, x)


def l_kernel(x, y) -> np.ndarray:
    """Image remainder L(x, y) = K(x - y*) - K(x) for the unit disk.

    Satisfies |L(x, y)| = (1 / 2 pi) / (|y| |x| |x - y*|); subtracting it
    from K(x - y) - K(x) shows J = K(x - y) - L.
    """
    xx, yy = as_points(x), as_points(y)
    return k_free(xx - image_point(yy)) - k_free(xx)


# ---------------------------------------------------------------------------
# radial cutoff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Radial cutoff profile: 1 on [0, c_inner], 0 on [c_outer, inf).

    The bridge on (c_inner, c_outer) is the bump exp(1 - 1/(1 - s^2))
    with s the normalized bridge coordinate. The profile is C^1 with a
    piecewise-continuous second derivative (the knots at c_inner and
    c_outer carry jump discontinuities in d2); quadrature panels split
    at the knot radii so this never degrades convergence.
    """

    c_inner: float = 0.5
    c_outer: float = 1.0

    def _bridge_coord(self, rho: np.ndarray) -> np.ndarray:
        return (rho - self.c_inner) / (self.c_outer - self.c_inner)

    def bridge_splits(self, eps: float, cells: int = 8) -> tuple[float, ...]:
        """Radial panel edges subdividing the bridge annulus of a_eps.

        The bump's derivative factors oscillate on a scale much shorter
        than the bridge width, so quadrature against cutoff derivatives
        needs the bridge cut into several panels, not just edges at the
        two knots. Returns the interior edges plus c_outer * eps.
        """
        width = (self.c_outer - self.c_inner) * eps
        start = self.c_inner * eps
        return tuple(start + width * k / cells for k in range(1, cells + 1))

    def value(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        out[rho <= self.c_inner] = 1.0
        mid = (rho > self.c_inner) & (rho < self.c_outer)
        if np.any(mid):
            s = self._bridge_coord(rho[mid])
            s = np.minimum(s, 1.0 - 1e-14)
            out[mid] = np.exp(1.0 - 1.0 / (1.0 - s * s))
        return out

    def d1(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        mid = (rho > self.c_inner) & (rho < self.c_outer)
        if np.any(mid):
            s = self._bridge_coord(rho[mid])
            s = np.minimum(s, 1.0 - 1e-14)
            one = 1.0 - s * s
            f = np.exp(1.0 - 1.0 / one)
            gp = -2.0 * s / (one * one)
            out[mid] = f * gp / (self.c_outer - self.c_inner)
        return out

    def d2(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        mid = (rho > self.c_inner) & (rho < self.c_outer)
        if np.any(mid):
            s = self._bridge_coord(rho[mid])
            s = np.minimum(s, 1.0 - 1e-14)
            one = 1.0 - s * s
            f = np.exp(1.0 - 1.0 / one)
            gp = -2.0 * s / (one * one)
            gpp = -2.0 * (1.0 + 3.0 * s * s) / (one * one * one)
            w = self.c_outer - self.c_inner
            out[mid] = f * (gpp + gp * gp) / (w * w)
        return out


def cutoff_eval(cutoff: Cutoff, eps: float, v) -> np.ndarray:
    """a_eps(v) = a(|v| / eps)."""
    z = as_points(v)
    return cutoff.value(np.sqrt(_r2(z)) / eps)


def cutoff_grad(cutoff: Cutoff, eps: float, v) -> np.ndarray:
    """grad a_eps, shape (..., 2); zero on the plateau and outside support."""
    z = as_points(v)
    r = np.sqrt(_r2(z))
    rho = r / eps
    d1 = cutoff.d1(rho)
    safe = np.where(r > 0.0, r, 1.0)
    return (d1 / (eps * safe))[..., None] * z


def cutoff_hess(cutoff: Cutoff, eps: float, v) -> np.ndarray:
    """Hessian of a_eps, shape (..., 2, 2).

    (a''(rho)/eps^2) vhat vhat^T + (a'(rho)/(eps r)) (I - vhat vhat^T),
    with both radial derivative factors vanishing off the bridge annulus.
    """
    z = as_points(v)
    r = np.sqrt(_r2(z))
    rho = r / eps
    d1 = cutoff.d1(rho)
    d2 = cutoff.d2(rho)
    safe = np.where(r > 0.0, r, 1.0)
    vhat = z / safe[..., None]
    proj = vhat[..., :, None] * vhat[..., None, :]
    eye = np.eye(2)
    out = (d2 / (eps * eps))[..., None, None] * proj
    out = out + (d1 / (eps * safe))[..., None, None] * (eye - proj)
    return out


# ---------------------------------------------------------------------------
# far-field weight
# ---------------------------------------------------------------------------


def _second_y_derivative(domain: Domain, cutoff: Cutoff, eps: float,
                         x: np.ndarray, y: np.ndarray, kernel: str) -> np.ndarray:
    """D[j, m, l] = d_{y_m} d_{y_l} [ (1 - a_eps(x - y)) KER^j(x, y) ].

    Product rule with phi(y) = 1 - a_eps(x - y):
        d_l phi = +(d_l a_eps)(x - y),  d_m d_l phi = -(d_m d_l a_eps)(x - y),
    and the kernel's own y-derivatives from the closed forms above.
    """
    z = x - y
    a = cutoff_eval(cutoff, eps, z)
    ga = cutoff_grad(cutoff, eps, z)   # (d a_eps)(z), index l
    ha = cutoff_hess(cutoff, eps, z)   # (d d a_eps)(z), indices m, l

    if domain.kind == "plane":
        ker = k_free(z)
        kg = -grad_k(z)                 # [j, l] = d_{y_l} K^j(x - y)
        kh = hess_k(z)                  # [j, m, l] = d_{y_m} d_{y_l} K^j(x - y)
    elif domain.is_disk:
        ker = _disk_value(x, y)
        kg = _disk_grad_y(x, y)
        kh = _disk_hess_y(x, y)
        if kernel == "J":
            ker = ker + k_free(x)       # constant in y: no grad/hess change
    else:
        X = domain.cmap.forward(x)
        Y = domain.cmap.forward(y)
        mt = _row_transform(domain, x)
        dty = domain.cmap.jacobian(y)           # [q, l] = d_l T^q(y)
        d2ty = domain.cmap.second_derivative(y)  # [q, m, l]
        kd = _disk_value(X, Y)
        kdg = _disk_grad_y(X, Y)                 # [i, q]
        kdh = _disk_hess_y(X, Y)                 # [i, p, q]
        if kernel == "J":
            kd = kd + k_free(X)
        ker = np.einsum("...ij,...j->...i", mt, kd)
        kg = np.einsum("...ij,...jq,...ql->...il", mt, kdg, dty)
        kh = np.einsum("...ij,...jpq,...pm,...ql->...iml", mt, kdh, dty, dty)
        kh = kh + np.einsum("...ij,...jq,...qml->...iml", mt, kdg, d2ty)

    phi = 1.0 - a
    out = phi[..., None, None, None] * kh
    out = out - ha[..., None, :, :] * ker[..., :, None, None]
    out = out + ga[..., None, :, None] * kg[..., :, None, :]
    out = out + ga[..., None, None, :] * kg[..., :, :, None]
    return out


def farfield_weight(domain: Domain, cutoff: Cutoff, eps: float, x, y,
                    j: int | None = None, kernel: str = "auto") -> np.ndarray:
    """Weight tensor of the history term in the velocity identity.

    Returns W with W[..., j, m, p] = d_{y_m} (grad_y^perp f_j)_p where
    f_j(y) = (1 - a_eps(x - y)) KER^j(x, y); contracting W[j] with
    u tensor u (sum over m, p of W[j, m, p] u_m u_p) gives component j
    of the spatial integrand. The perp sits on the inner derivative
    index: (grad^perp)_1 = -d_2, (grad^perp)_2 = +d_1, so
    W[j, m, p] = sum_l P[p, l] D[j, m, l].

    kernel: "K" for the domain velocity kernel, "J" for the decaying
    hydrodynamic kernel, "auto" picks K on the plane and J outside an
    obstacle (the combination the identity actually uses).

    Pass j to select one component (2, 2); omit it for all (2, 2, 2).
    """
    if kernel == "auto":
        kernel = "J" if domain.has_boundary else "K"
    if kernel not in ("K", "J"):
        raise ValueError(f"unknown kernel choice {kernel!r}")
    xx, yy = np.broadcast_arrays(as_points(x), as_points(y))
    d = _second_y_derivative(domain, cutoff, eps, xx, yy, kernel)
    # contract the last index with P^T: W[..., m, p] = sum_l D[..., m, l] P[p, l]
    w = np.empty_like(d)
    w[..., 0] = -d[..., 1]
    w[..., 1] = d[..., 0]
    if j is None:
        return w
    return w[..., j, :, :]

"""Time stepping for the velocity update identity on a windowed grid.

The state is the back-to-labels map on the grid plus the far-field and
boundary accumulators on a probe lattice. One step advances the labels
semi-Lagrangianly, grows the accumulators by a trapezoid slab with a
single corrector pass, and reconstructs the velocity at every node from

    u = u0 + near(labels) - far_accum - boundary_accum.

The identity-term quadratures reuse the layouts of the pointwise rules
in identity.py, batched over the probe lattice. Polar node offsets are
probe-independent, so on the full plane the kernel tensors are shared
across probes; exterior domains get one obstacle-clipped layout per
probe instead, with the image-corrected tensors stored per pair in
float32. Velocity values at quadrature nodes outside the window come
from the scenario's u0 and are folded into static setup sums, which is
exactly the truncation model VelocityField uses.

Domains with a wall also carry a small float64 diagnostic channel whose
probes sit on the boundary itself. The kernel rows there are tangent to
the wall by construction, so the normal velocity it reports measures
identity structure, not quadrature luck, and the circulation it reports
comes from the same direct evaluations rather than a lifted grid field.

Everything here is deterministic: node layouts depend only on the
configuration, and all reductions run in fixed order, so identical
configurations produce bitwise-identical results.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baseline
from .fields import Grid, BicubicInterpolant, VelocityField, VorticityField, write_snapshot
from .geometry import Domain, as_points, boundary_sample
from .identity import apriori_velocity_bound
from .ioutil import atomic_write_json, canonical_json, sha256_of_text
from .kernels import Cutoff, farfield_weight, j_kernel, k_free, kbar
from .quadrature import QuadratureSpec, annular_nodes, exterior_annular_nodes, polar_nodes
from .scenarios import Scenario, build
from .transport import advance_labels, flow_diagnostics

__all__ = [
    "RunConfig",
    "SimState",
    "RunResult",
    "GuardrailBreach",
    "Solver",
    "run",
    "conservation_report",
    "solution_trajectory",
]

_PROBE_CHUNK = 256
_WALL_PROBES = 64


class GuardrailBreach(RuntimeError):
    """A runtime bound failed; carries the diagnostic the run flushed."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on, JSON round-trippable.

    h and window fix the grid (n = 2 * window / h + 1 nodes per side,
    which must come out integral); probe_stride thins the lattice the
    accumulators live on. truncation_radius is the absolute outer
    radius of the far-field quadrature. extra_eps, when set, maintains
    a second accumulator channel at a different cutoff scale from the
    same trajectory. Tolerances only feed reports, never the dynamics.
    """

    scenario: str
    h: float
    window: float
    dt: float
    t_final: float
    eps: float = 0.5
    truncation_radius: float = 25.0
    snapshot_times: tuple = ()
    probe_stride: int = 1
    extra_eps: float | None = None
    scenario_params: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    fitted_velocity_constant: float | None = None
    tolerances: dict = field(default_factory=dict)
    output_dir: str | None = None
    snapshot_format: str = "csv"
    label: str = ""

    def __post_init__(self):
        for name in ("h", "window", "dt", "eps", "truncation_radius"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.t_final < 0.0:
            raise ValueError("t_final must be nonnegative")
        n = 2.0 * self.window / self.h + 1.0
        if abs(n - round(n)) > 1e-9:
            raise ValueError("window is not an integer number of h steps")
        if int(round(n)) < 5:
            raise ValueError("grid too small; need at least 5 nodes per side")
        if self.probe_stride < 1 or (int(round(n)) - 1) % self.probe_stride != 0:
            raise ValueError("probe_stride must divide the cell count")
        if self.t_final > 0.0:
            steps = self.t_final / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValueError("t_final must be an integer multiple of dt")
        for ts in self.snapshot_times:
            if ts < 0.0 or ts > self.t_final + 1e-12:
                raise ValueError("snapshot times must lie in [0, t_final]")
            k = ts / self.dt
            if abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise ValueError("snapshot times must be multiples of dt")
        if self.extra_eps is not None and self.extra_eps <= 0.0:
            raise ValueError("extra_eps must be positive")
        if self.truncation_radius <= self.eps:
            raise ValueError("truncation_radius must exceed the cutoff scale")
        if self.snapshot_format not in ("csv", "ndjson"):
            raise ValueError("snapshot_format must be csv or ndjson")

    @property
    def n(self) -> int:
        return int(round(2.0 * self.window / self.h)) + 1

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def quadrature_spec(self) -> QuadratureSpec:
        return replace(QuadratureSpec(), **self.quadrature)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "h": self.h,
            "window": self.window,
            "dt": self.dt,
            "t_final": self.t_final,
            "eps": self.eps,
            "truncation_radius": self.truncation_radius,
            "snapshot_times": list(self.snapshot_times),
            "probe_stride": self.probe_stride,
            "extra_eps": self.extra_eps,
            "scenario_params": dict(self.scenario_params),
            "quadrature": dict(self.quadrature),
            "fitted_velocity_constant": self.fitted_velocity_constant,
            "tolerances": dict(self.tolerances),
            "output_dir": self.output_dir,
            "snapshot_format": self.snapshot_format,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        if "snapshot_times" in data:
            data["snapshot_times"] = tuple(data["snapshot_times"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def config_hash(self) -> str:
        return sha256_of_text(canonical_json(self.to_dict()))


def _sym_tensor(weight: np.ndarray) -> np.ndarray:
    """Compress W[..., j, m, p], symmetric in (m, p), to W[..., j, 3]."""
    return np.stack(
        [
            weight[..., :, 0, 0],
            weight[..., :, 0, 1] + weight[..., :, 1, 0],
            weight[..., :, 1, 1],
        ],
        axis=-1,
    )


def _uu_components(u: np.ndarray) -> np.ndarray:
    """(u1 u1, u1 u2, u2 u2) matching the compressed tensor layout."""
    out = np.empty(u.shape[:-1] + (3,), dtype=u.dtype)
    np.multiply(u[..., 0], u[..., 0], out=out[..., 0])
    np.multiply(u[..., 0], u[..., 1], out=out[..., 1])
    np.multiply(u[..., 1], u[..., 1], out=out[..., 2])
    return out


class _FarBatch:
    """Far-field rate integral batched over the probe lattice.

    On the full plane one annular layout is shared by all probes and
    the per-step reduction is a matmul against a shared tensor. Probes
    in an exterior domain each get their own layout with the obstacle
    circle entering as exact panel edges, stored as one flat ragged
    pair list contracted by an einsum and a segmented sum.

    The velocity at a quadrature node is assembled as analytic u0 plus
    the interpolated increment field, never as a spline of the total
    velocity: u0 may carry Lipschitz kinks that a spline renders with
    O(h^2) bias, and through the u tensor u integrand that bias would
    feed the accumulators every step. Pairs whose node sits outside the
    window have zero increment by the truncation model and collapse
    into a per-probe static constant at setup; the per-step work
    touches only the in-window pairs.
    """

    def __init__(self, domain: Domain, cutoff: Cutoff, eps: float, grid: Grid,
                 probe_grid: Grid, probes: np.ndarray, u0, spec: QuadratureSpec,
                 r_outer: float, dtype=np.float32):
        if r_outer <= cutoff.c_outer * eps:
            raise ValueError("truncation radius must exceed the cutoff support")
        self.tail = spec.tail_constant / float(r_outer)
        self.probes = probes
        self._per_pair = domain.has_boundary
        self.dtype = np.dtype(dtype)
        P = probes.shape[0]
        r_inner = cutoff.c_inner * eps
        splits = cutoff.bridge_splits(eps)

        if self._per_pair:
            static = np.empty((P, 2))
            counts = np.empty(P, dtype=np.int64)
            tensors, coords, u0_in = [], [], []
            for p in range(P):
                if domain.is_disk:
                    pts, w = exterior_annular_nodes(
                        probes[p], r_inner, r_outer, spec, splits=splits)
                else:
                    pts, w = annular_nodes(probes[p], r_inner, r_outer, spec,
                                           splits=splits)
                sym = _sym_tensor(farfield_weight(domain, cutoff, eps, probes[p], pts))
                if not domain.is_disk:
                    clipped = ~domain.contains(pts)
                    w = np.where(clipped, 0.0, w)
                    sym[clipped] = 0.0  # image factors can be non-finite there
                full = w[:, None, None] * sym
                u0_pts = np.asarray(u0(pts), dtype=float)
                static[p] = np.einsum("qjs,qs->j", full, _uu_components(u0_pts))
                keep = grid.contains(pts) & (w != 0.0)
                counts[p] = int(np.count_nonzero(keep))
                tensors.append(full[keep].astype(self.dtype))
                coords.append(probe_grid.index_coords(pts[keep]))
                u0_in.append(u0_pts[keep])
            self.tensor = np.concatenate(tensors, axis=0)
            self.coords = np.concatenate(coords, axis=1).astype(self.dtype)
            self.starts = np.concatenate(
                [np.zeros(1, dtype=np.int64), np.cumsum(counts, dtype=np.int64)]
            )
            self.u0_pair = np.concatenate(u0_in, axis=0).astype(self.dtype)
        else:
            offsets, w = annular_nodes(np.zeros(2), r_inner, r_outer, spec,
                                       splits=splits)
            cand = np.max(np.abs(offsets), axis=-1) <= 2.0 * grid.half_width
            self.q_cand = int(np.count_nonzero(cand))
            weight = farfield_weight(domain, cutoff, eps, np.zeros(2), offsets)
            full = w[:, None, None] * _sym_tensor(weight)
            static = np.empty((P, 2))
            for p0 in range(0, P, _PROBE_CHUNK):
                p1 = min(p0 + _PROBE_CHUNK, P)
                pts = probes[p0:p1, None, :] + offsets[None, :, :]
                uu0 = _uu_components(np.asarray(u0(pts), dtype=float))
                static[p0:p1] = np.einsum("qjs,pqs->pj", full, uu0)
            # the shared tensor is stored flattened over (node, component)
            # so the per-step reduction is a single matmul
            self.tensor = full[cand].transpose(0, 2, 1).reshape(-1, 2)
            pts_cand = probes[:, None, :] + offsets[cand][None, :, :]
            inwin = grid.contains(pts_cand)
            flat = np.flatnonzero(inwin.ravel())
            pair_pts = pts_cand.reshape(-1, 2)[flat]
            self.coords = probe_grid.index_coords(pair_pts).astype(np.float32)
            probe_of = (flat // self.q_cand).astype(np.int64)
            col_of = (flat % self.q_cand).astype(np.int64)
            self.starts = np.searchsorted(probe_of, np.arange(P + 1))
            self.local = ((probe_of % _PROBE_CHUNK) * self.q_cand + col_of).astype(np.int64)
            self.u0_pair = np.asarray(u0(pair_pts), dtype=float)

        # subtract the in-window pairs' u0 part through the same
        # contraction the rate uses, so that rate(zero increment)
        # reproduces the full static integral exactly
        self._static_total = static
        self.static = static - self._contract(_uu_components(self.u0_pair))

    def _contract(self, uu_pairs: np.ndarray) -> np.ndarray:
        """Contract per-pair (m, 3) values against the stored tensors."""
        P = self.probes.shape[0]
        out = np.zeros((P, 2))
        if self._per_pair:
            if self.tensor.shape[0]:
                contrib = np.einsum(
                    "mjs,ms->mj", self.tensor, uu_pairs.astype(self.dtype)
                ).astype(np.float64)
                # reduceat yields a bare element, not zero, for an empty
                # segment, so only starts with content are passed; their
                # consecutive pairs bound the segments exactly
                nz = self.starts[:-1] < self.starts[1:]
                out[nz] = np.add.reduceat(contrib, self.starts[:-1][nz], axis=0)
            return out
        K = self.q_cand * 3
        for p0 in range(0, P, _PROBE_CHUNK):
            p1 = min(p0 + _PROBE_CHUNK, P)
            m0, m1 = self.starts[p0], self.starts[p1]
            buf = np.zeros(((p1 - p0) * self.q_cand, 3))
            buf[self.local[m0:m1]] = uu_pairs[m0:m1]
            out[p0:p1] = buf.reshape(p1 - p0, K) @ self.tensor
        return out

    def rate(self, incr_interp: BicubicInterpolant) -> np.ndarray:
        """Far-field time derivative at every probe, shape (P, 2)."""
        u = self.u0_pair + incr_interp.at_coords(self.coords).astype(self.u0_pair.dtype)
        return self.static + self._contract(_uu_components(u))


class _NearBatch:
    """Cutoff-kernel term batched over the probe lattice.

    The contraction target is the vorticity difference, which vanishes
    identically outside the window and outside the transported support
    halo, so the gather each step touches only pairs that can see a
    nonzero value.
    """

    def __init__(self, domain: Domain, cutoff: Cutoff, eps: float, grid: Grid,
                 probes: np.ndarray, omega0, spec: QuadratureSpec,
                 dtype=np.float32):
        edges = np.array([0.0, cutoff.c_inner * eps, cutoff.c_outer * eps])
        offsets, w = polar_nodes(np.zeros(2), edges, spec.radial_nodes, spec.angular_nodes)
        rho = np.linalg.norm(offsets, axis=-1) / eps
        wa = w * cutoff.value(rho)
        P = probes.shape[0]
        self.probes = probes
        self.q = offsets.shape[0]
        self._per_pair = domain.has_boundary
        self.dtype = np.dtype(dtype)
        if self._per_pair:
            coeff = np.empty((P, self.q, 2), dtype=self.dtype)
            for p in range(P):
                pts = probes[p] + offsets
                ker = j_kernel(domain, probes[p], pts)
                wc = np.where(domain.contains(pts), wa, 0.0)
                coeff[p] = wc[:, None] * ker
            self.coeff = coeff
        else:
            self.coeff = wa[:, None] * k_free(-offsets)

        pts_all = probes[:, None, :] + offsets[None, :, :]
        inwin = grid.contains(pts_all)
        flat = np.flatnonzero(inwin.ravel())
        pair_pts = pts_all.reshape(-1, 2)[flat]
        self.pair_pts = pair_pts
        self.coords = grid.index_coords(pair_pts).astype(self.dtype)
        self.omega0_pts = np.asarray(omega0(pair_pts), dtype=float)
        probe_of = (flat // self.q).astype(np.int64)
        self.flat = flat.astype(np.int64)
        self.starts = np.searchsorted(probe_of, np.arange(P + 1))
        self.pair_radius = None
        self.support_center = None

    def set_support(self, center) -> None:
        """Precompute pair distances for the moving-support mask."""
        self.support_center = as_points(center)
        self.pair_radius = np.linalg.norm(
            self.pair_pts - self.support_center, axis=-1
        ).astype(np.float32)

    def rate(self, vorticity: VorticityField, omega0, halo: float | None) -> np.ndarray:
        """Near term at every probe from the current labels, shape (P, 2)."""
        if halo is not None and self.pair_radius is not None:
            take = np.flatnonzero(self.pair_radius <= halo)
            coords = self.coords[:, take]
        else:
            take = slice(None)
            coords = self.coords
        labels = vorticity.interpolant.at_coords(coords)
        delta = np.asarray(omega0(labels), dtype=float) - self.omega0_pts[take]
        P = self.probes.shape[0]
        dtype = self.dtype if self._per_pair else np.float64
        buf = np.zeros(P * self.q, dtype=dtype)
        buf[self.flat[take]] = delta
        dw = buf.reshape(P, self.q)
        if self._per_pair:
            return np.matmul(dw[:, None, :], self.coeff)[:, 0, :].astype(float)
        return dw @ self.coeff


class _BoundaryBatch:
    """Boundary term rate batched over the probes that can see the wall.

    Velocity on the wall is assembled as analytic u0 at the sample
    points plus the interpolated increment, matching _FarBatch.
    """

    def __init__(self, domain: Domain, cutoff: Cutoff, eps: float,
                 probe_grid: Grid, probes: np.ndarray, u0, n_sample: int):
        self.sample = boundary_sample(domain, n_sample)
        z = probes[:, None, :] - self.sample.points[None, :, :]
        r = np.linalg.norm(z, axis=-1)
        slope = cutoff.d1(r / eps) / eps
        with np.errstate(invalid="ignore", divide="ignore"):
            direction = np.where(r[..., None] > 0.0, z / np.maximum(r, 1e-300)[..., None], 0.0)
        flux = np.sum(direction * self.sample.tangent[None, :, :], axis=-1) * slope
        coeff = self.sample.weight[None, :] * flux
        self.active = np.flatnonzero(np.any(coeff != 0.0, axis=1))
        self.coeff = coeff[self.active]
        self.factor = -0.5 * kbar(domain, probes[self.active])
        self.n_probes = probes.shape[0]
        self.u0_sample = np.asarray(u0(self.sample.points), dtype=float)
        self.sample_coords = probe_grid.index_coords(self.sample.points)

    def rate(self, incr_interp: BicubicInterpolant) -> np.ndarray:
        out = np.zeros((self.n_probes, 2))
        if self.active.size == 0:
            return out
        u = self.u0_sample + incr_interp.at_coords(self.sample_coords)
        speed2 = np.sum(u * u, axis=-1)
        out[self.active] = self.factor * (self.coeff @ speed2)[:, None]
        return out


class _Channel:
    """One cutoff scale's accumulators and rules."""

    def __init__(self, eps: float, domain: Domain, cutoff: Cutoff, grid: Grid,
                 probe_grid: Grid, probes: np.ndarray, u0, omega0,
                 spec: QuadratureSpec, r_outer: float, dtype=np.float32):
        self.eps = eps
        self.far = _FarBatch(domain, cutoff, eps, grid, probe_grid, probes, u0,
                             spec, r_outer, dtype=dtype)
        self.near = _NearBatch(domain, cutoff, eps, grid, probes, omega0, spec,
                               dtype=dtype)
        self.boundary = (
            _BoundaryBatch(domain, cutoff, eps, probe_grid, probes, u0,
                           spec.boundary_nodes)
            if domain.has_boundary
            else None
        )
        P = probes.shape[0]
        self.far_accum = np.zeros((P, 2))
        self.boundary_accum = np.zeros((P, 2))
        self.tail_budget = 0.0

    def rates(self, incr_interp: BicubicInterpolant) -> tuple[np.ndarray, np.ndarray]:
        g = self.far.rate(incr_interp)
        b = self.boundary.rate(incr_interp) if self.boundary else np.zeros_like(g)
        return g, b


@dataclass
class SimState:
    """Mutable solver state; arrays are live views, not copies."""

    t: float
    step_index: int
    domain: Domain
    cutoff: Cutoff
    eps: float
    dt: float
    grid: Grid
    probe_grid: Grid
    velocity: VelocityField
    vorticity: VorticityField
    far_accum: np.ndarray
    boundary_accum: np.ndarray
    quad: QuadratureSpec
    history: tuple
    penetrations: int = 0


@dataclass
class RunResult:
    config: RunConfig
    scenario: Scenario
    grid: Grid
    probe_grid: Grid
    status: str
    series: dict
    snapshots: list
    report: dict
    solver: "Solver"

    def snapshot_at(self, t: float) -> dict:
        for snap in self.snapshots:
            if abs(snap["t"] - t) <= 1e-9:
                return snap
        raise KeyError(f"no snapshot at t = {t}")


class Solver:
    """Owns the state and the frozen quadrature batches for one run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.scenario = build(config.scenario, **config.scenario_params)
        self.domain = self.scenario.domain
        self.cutoff = Cutoff()
        self.spec = config.quadrature_spec()
        self.grid = Grid(n=config.n, half_width=config.window)
        stride = config.probe_stride
        pn = (config.n - 1) // stride + 1
        self.probe_grid = Grid(n=pn, half_width=config.window)
        probes = self.probe_grid.nodes().reshape(-1, 2)
        # identity increments only exist at fluid points; probe slots
        # buried in the obstacle evaluate at the circle-inversion mirror
        # instead, which matches the fluid values continuously at the
        # boundary and keeps the lifted ghost field spline-friendly
        if self.domain.has_boundary:
            probes = probes.copy()
            buried = ~self.domain.contains(probes)
            if np.any(buried):
                p = probes[buried]
                r2 = np.sum(p * p, axis=-1, keepdims=True)
                mirror = np.divide(p, r2, out=np.zeros_like(p), where=r2 > 0.0)
                # the obstacle center inverts to infinity; park it far
                # enough out that every increment is negligible there
                park = np.array([4.0 * config.truncation_radius, 0.0])
                mirror[r2[:, 0] == 0.0] = park
                probes[buried] = mirror

        u0 = self.scenario.u0
        self.u0_nodes = np.asarray(u0(self.grid.nodes()), dtype=float)
        self.channels = [
            _Channel(config.eps, self.domain, self.cutoff, self.grid,
                     self.probe_grid, probes, u0, self.scenario.omega0,
                     self.spec, config.truncation_radius)
        ]
        if config.extra_eps is not None:
            self.channels.append(
                _Channel(config.extra_eps, self.domain, self.cutoff, self.grid,
                         self.probe_grid, probes, u0, self.scenario.omega0,
                         self.spec, config.truncation_radius)
            )
        if self.scenario.support_radius is not None:
            for ch in self.channels:
                ch.near.set_support(self.scenario.support_center)
        self._drift = 0.0

        c = config.fitted_velocity_constant
        if c is None:
            c = baseline.constant("fitted.velocity_envelope_c")
        self.envelope_c = float(c)
        # refuse an envelope that is already violated by the initial data
        apriori_velocity_bound(self.scenario.sup_velocity, 0.0, self.envelope_c)

        labels = self.grid.nodes().copy()
        self.state = SimState(
            t=0.0,
            step_index=0,
            domain=self.domain,
            cutoff=self.cutoff,
            eps=config.eps,
            dt=config.dt,
            grid=self.grid,
            probe_grid=self.probe_grid,
            velocity=VelocityField(self.grid, self.u0_nodes.copy(), u0, domain=self.domain),
            vorticity=VorticityField(self.grid, labels, self.scenario.omega0),
            far_accum=self.channels[0].far_accum,
            boundary_accum=self.channels[0].boundary_accum,
            quad=self.spec,
            history=(0.0, None),
        )
        P = probes.shape[0]
        self._near_cur = np.zeros((P, 2))
        self._wt2 = self._trapezoid_weights()
        # wall diagnostics: a float64 channel whose probes sit on the
        # boundary itself, where every kernel row is tangent to the wall
        # by construction, so the normal-velocity reading measures the
        # identity structure rather than quadrature accuracy
        self._wall = None
        if self.domain.has_boundary:
            self._wall_sample = boundary_sample(self.domain, _WALL_PROBES)
            wp = self._wall_sample.points
            self._wall = _Channel(
                config.eps, self.domain, self.cutoff, self.grid,
                self.probe_grid, wp, u0, self.scenario.omega0, self.spec,
                config.truncation_radius, dtype=np.float64,
            )
            if self.scenario.support_radius is not None:
                self._wall.near.set_support(self.scenario.support_center)
            self._u0_wall = np.asarray(u0(wp), dtype=float)

    def _trapezoid_weights(self) -> np.ndarray:
        w = np.ones(self.grid.n)
        w[0] = w[-1] = 0.5
        return np.outer(w, w) * self.grid.h**2

    # -- reconstruction ----------------------------------------------------

    def _halo(self) -> float | None:
        if self.scenario.support_radius is None:
            return None
        return (
            self.scenario.support_radius
            + self._drift
            + 4.0 * self.grid.h
            + 0.02
        )

    def _lift(self, probe_values: np.ndarray) -> np.ndarray:
        """Interpolate probe-lattice values onto the full grid."""
        pn = self.probe_grid.n
        shaped = probe_values.reshape(pn, pn, -1)
        if self.config.probe_stride == 1:
            return shaped.reshape(self.grid.n, self.grid.n, -1)
        interp = BicubicInterpolant(self.probe_grid, shaped)
        return interp(self.grid.nodes())

    def _increment_probe(self, near: np.ndarray) -> np.ndarray:
        ch = self.channels[0]
        return near - ch.far_accum - ch.boundary_accum

    def _incr_interpolant(self, incr_probe: np.ndarray) -> BicubicInterpolant:
        pn = self.probe_grid.n
        return BicubicInterpolant(self.probe_grid, incr_probe.reshape(pn, pn, 2))

    def _field_from(self, incr_probe: np.ndarray,
                    interp: BicubicInterpolant | None = None) -> VelocityField:
        if self.config.probe_stride == 1:
            incr = incr_probe.reshape(self.grid.n, self.grid.n, 2)
        else:
            if interp is None:
                interp = self._incr_interpolant(incr_probe)
            incr = interp(self.grid.nodes())
        samples = self.u0_nodes + incr
        return VelocityField(self.grid, samples, self.scenario.u0, domain=self.domain)

    def _velocity_from(self, near: np.ndarray) -> VelocityField:
        return self._field_from(self._increment_probe(near))

    def reconstruct(self, points, channel: int = 0) -> np.ndarray:
        """Identity velocity at arbitrary points from the current state.

        u0 enters analytically and only the smooth increment field is
        interpolated, so this stays accurate across the obstacle ring
        where the composite velocity has a Lipschitz kink.
        """
        ch = self.channels[channel]
        near = self._near_rate(channel)
        incr_probe = near - ch.far_accum - ch.boundary_accum
        pn = self.probe_grid.n
        interp = BicubicInterpolant(self.probe_grid, incr_probe.reshape(pn, pn, 2))
        pts = as_points(points)
        return np.asarray(self.scenario.u0(pts), dtype=float) + interp(pts)

    def _near_rate(self, channel: int) -> np.ndarray:
        """Channel 0's near term is kept current by step(); others are
        computed on demand from the same labels."""
        if channel == 0:
            return self._near_cur
        ch = self.channels[channel]
        return ch.near.rate(self.state.vorticity, self.scenario.omega0, self._halo())

    # -- stepping ----------------------------------------------------------

    def step(self) -> None:
        """Advance one dt: predict accumulators, advect labels, correct,
        reconstruct the velocity at all nodes, then check the guardrails."""
        st = self.state
        cfg = self.config
        dt = cfg.dt
        u_n = st.velocity
        sup_n = u_n.sup_norm()

        # predictor: freeze the near term, advance accumulators forward Euler
        ch0 = self.channels[0]
        interp_n = self._incr_interpolant(self._increment_probe(self._near_cur))
        rates_n = [ch.rates(interp_n) for ch in self.channels]
        wall_n = self._wall.rates(interp_n) if self._wall else None
        g_n, b_n = rates_n[0]
        pred_far = ch0.far_accum + dt * g_n
        pred_bnd = ch0.boundary_accum + dt * b_n
        pred_incr = self._near_cur - pred_far - pred_bnd
        interp_p = self._incr_interpolant(pred_incr)
        u_pred = self._field_from(pred_incr, interp_p)

        # corrector: trapezoid slab for every channel
        rates_p = [ch.rates(interp_p) for ch in self.channels]
        sup2 = max(sup_n, u_pred.sup_norm()) ** 2
        for ch, (gn, bn), (gp, bp) in zip(self.channels, rates_n, rates_p):
            ch.far_accum += 0.5 * dt * (gn + gp)
            ch.boundary_accum += 0.5 * dt * (bn + bp)
            ch.tail_budget += dt * ch.far.tail * sup2
        if self._wall is not None:
            gn, bn = wall_n
            gp, bp = self._wall.rates(interp_p)
            self._wall.far_accum += 0.5 * dt * (gn + gp)
            self._wall.boundary_accum += 0.5 * dt * (bn + bp)
            self._wall.tail_budget += dt * self._wall.far.tail * sup2

        # advect the labels with the time-interpolated velocity
        labels, pen = advance_labels(
            self.grid, st.vorticity.labels, u_n, u_pred, dt,
            domain=self.domain if self.domain.has_boundary else None,
        )
        st.penetrations += pen
        self._drift += dt * max(sup_n, u_pred.sup_norm())
        vorticity = VorticityField(self.grid, labels, self.scenario.omega0)

        # reconstruct at all nodes from the updated near term
        near = ch0.near.rate(vorticity, self.scenario.omega0, self._halo())
        self._near_cur = near
        velocity = self._velocity_from(near)

        st.history = (st.t, u_n)
        st.step_index += 1
        st.t = st.step_index * dt
        st.velocity = velocity
        st.vorticity = vorticity

        self._check_guardrails()

    def _check_guardrails(self) -> None:
        st = self.state
        sup_u = st.velocity.sup_norm()
        envelope = apriori_velocity_bound(
            self.scenario.sup_velocity, st.t, self.envelope_c
        )
        omega_nodes = st.vorticity.node_values()
        sup_w = float(np.max(np.abs(omega_nodes)))
        bound_w = self.scenario.sup_vorticity
        breach = None
        if not np.isfinite(sup_u) or sup_u > envelope:
            breach = f"sup|u| = {sup_u:.6g} exceeds the envelope {envelope:.6g}"
        elif not np.isfinite(sup_w) or sup_w > bound_w:
            breach = f"sup|omega| = {sup_w:.6g} exceeds sup|omega0| = {bound_w:.6g}"
        if breach is not None:
            raise GuardrailBreach(
                breach,
                {
                    "t": st.t,
                    "step": st.step_index,
                    "sup_u": sup_u,
                    "envelope": envelope,
                    "sup_omega": sup_w,
                    "sup_omega0": bound_w,
                },
            )

    # -- per-step observables ----------------------------------------------

    def observables(self) -> dict:
        st = self.state
        out = {
            "t": st.t,
            "sup_u": st.velocity.sup_norm(),
            "sup_omega": float(np.max(np.abs(st.vorticity.node_values()))),
            "mass": float(np.sum(st.vorticity.node_values() * self._wt2)),
            "penetrations": st.penetrations,
            "tail_budget": self.channels[0].tail_budget,
        }
        if self._wall is not None:
            u_b = self.boundary_velocity()
            s = self._wall_sample
            out["circulation"] = float(
                np.sum(np.sum(u_b * s.tangent, axis=-1) * s.weight)
            )
            out["normal_velocity_max"] = float(
                np.max(np.abs(np.sum(u_b * s.normal, axis=-1)))
            )
        return out

    def boundary_velocity(self) -> np.ndarray:
        """Identity velocity evaluated directly at the wall probes.

        No grid lift is involved: the wall channel's own accumulators
        and a fresh near term are combined pointwise, so the tangency
        of the kernel rows survives into the reported values.
        """
        if self._wall is None:
            raise ValueError("the full plane has no wall")
        near = self._wall.near.rate(
            self.state.vorticity, self.scenario.omega0, self._halo()
        )
        return self._u0_wall + near - self._wall.far_accum - self._wall.boundary_accum

    def snapshot(self) -> dict:
        st = self.state
        snap = {
            "t": st.t,
            "velocity": st.velocity,
            "labels": st.vorticity.labels.copy(),
            "far_accum": {ch.eps: ch.far_accum.copy() for ch in self.channels},
            "boundary_accum": {ch.eps: ch.boundary_accum.copy() for ch in self.channels},
            "tail_budget": {ch.eps: ch.tail_budget for ch in self.channels},
            "observables": self.observables(),
        }
        diag = flow_diagnostics(self.grid, st.vorticity.labels, self.envelope_c, st.t)
        snap["diagnostics"] = {
            "holder_beta": diag.holder_beta,
            "area_min": diag.area_min,
            "area_max": diag.area_max,
            "stretch_max": diag.stretch_max,
        }
        if self.scenario.support_radius is not None:
            snap["halo_audit"] = self._halo_audit()
        return snap

    def _halo_audit(self) -> float:
        """Largest |delta omega| seen outside the support halo."""
        halo = self._halo()
        nodes = self.grid.nodes().reshape(-1, 2)
        r = np.linalg.norm(nodes - self.scenario.support_center, axis=-1)
        outside = nodes[r > halo]
        if outside.size == 0:
            return 0.0
        return float(np.max(np.abs(self.state.vorticity.delta_at(outside))))

    def identity_velocity(self, channel: int) -> np.ndarray:
        """Node velocity reconstructed through one channel's accumulators."""
        ch = self.channels[channel]
        near = self._near_rate(channel)
        incr = self._lift(near - ch.far_accum - ch.boundary_accum)
        return self.u0_nodes + incr.reshape(self.grid.n, self.grid.n, 2)


def run(config: RunConfig) -> RunResult:
    """Execute a configured run and optionally write its artifacts.

    Always returns a RunResult; a guardrail abort is reported through
    status = "guardrail" with the partial series and snapshots flushed,
    so callers can inspect what led up to the breach.
    """
    wall0 = time.perf_counter()
    solver = Solver(config)
    series_keys = ["t", "sup_u", "sup_omega", "mass", "penetrations", "tail_budget"]
    if solver.domain.has_boundary:
        series_keys += ["circulation", "normal_velocity_max"]
    series = {k: [] for k in series_keys}
    snapshots = []
    status = "ok"
    breach_info = None

    want = sorted(set(float(ts) for ts in config.snapshot_times) | {0.0})
    if config.t_final not in want and not any(abs(w - config.t_final) <= 1e-9 for w in want):
        want.append(config.t_final)
    snap_steps = {int(round(ts / config.dt)) if config.dt > 0 else 0 for ts in want}

    def record():
        obs = solver.observables()
        for k in series_keys:
            series[k].append(obs.get(k))
        if solver.state.step_index in snap_steps:
            snapshots.append(solver.snapshot())

    record()
    try:
        for _ in range(config.n_steps):
            solver.step()
            record()
    except GuardrailBreach as exc:
        status = "guardrail"
        breach_info = exc.diagnostic
        snapshots.append(solver.snapshot())

    report = {
        "config": config.to_dict(),
        "config_sha256": config.config_hash(),
        "scenario": config.scenario,
        "status": status,
        "steps_completed": solver.state.step_index,
        "wall_seconds": time.perf_counter() - wall0,
        "fitted_constants": baseline.fitted_constants(),
        "envelope_constant": solver.envelope_c,
        "series": series,
        "tail_budget": {str(ch.eps): ch.tail_budget for ch in solver.channels},
        "snapshot_times": [s["t"] for s in snapshots],
    }
    if breach_info is not None:
        report["guardrail_breach"] = breach_info

    result = RunResult(
        config=config,
        scenario=solver.scenario,
        grid=solver.grid,
        probe_grid=solver.probe_grid,
        status=status,
        series=series,
        snapshots=snapshots,
        report=report,
        solver=solver,
    )
    if config.output_dir:
        _write_outputs(result)
    return result


def _write_outputs(result: RunResult) -> None:
    out = result.config.output_dir
    os.makedirs(out, exist_ok=True)
    written = []
    for snap in result.snapshots:
        tag = f"{snap['t']:.6f}".rstrip("0").rstrip(".").replace(".", "p")
        path = os.path.join(out, f"snapshot-t{tag}.{result.config.snapshot_format}")
        vort = VorticityField(result.grid, snap["labels"], result.scenario.omega0)
        write_snapshot(path, result.grid, snap["velocity"], vort,
                       fmt=result.config.snapshot_format)
        written.append(os.path.basename(path))
    result.report["snapshot_files"] = written
    atomic_write_json(os.path.join(out, "report.json"), result.report)


@dataclass(frozen=True)
class ConservationReport:
    circulation_drift: float | None
    mass_drift: float
    mass_scale: float
    sup_omega_initial: float
    sup_omega_max: float
    sup_omega_exact: bool
    sup_u_max: float
    penetrations: int
    area_min: float
    area_max: float
    normal_velocity_max: float | None

    def table(self) -> str:
        rows = [
            ("circulation drift", self.circulation_drift),
            ("mass drift", self.mass_drift),
            ("sup|omega| initial", self.sup_omega_initial),
            ("sup|omega| max", self.sup_omega_max),
            ("sup|omega| exact", self.sup_omega_exact),
            ("sup|u| max", self.sup_u_max),
            ("penetrations", self.penetrations),
            ("area distortion min", self.area_min),
            ("area distortion max", self.area_max),
            ("normal velocity max", self.normal_velocity_max),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def conservation_report(result: RunResult) -> ConservationReport:
    """Drift of the conserved quantities over a finished run."""
    series = result.series
    sup_w = np.asarray(series["sup_omega"], dtype=float)
    mass = np.asarray(series["mass"], dtype=float)
    circ = None
    if "circulation" in series:
        c = np.asarray(series["circulation"], dtype=float)
        circ = float(np.max(np.abs(c - c[0])))
    area_min = min(s["diagnostics"]["area_min"] for s in result.snapshots)
    area_max = max(s["diagnostics"]["area_max"] for s in result.snapshots)
    nvel = None
    if "normal_velocity_max" in series:
        nvel = float(np.max(np.asarray(series["normal_velocity_max"], dtype=float)))
    return ConservationReport(
        circulation_drift=circ,
        mass_drift=float(np.max(np.abs(mass - mass[0]))),
        mass_scale=float(np.abs(mass[0])),
        sup_omega_initial=float(sup_w[0]),
        sup_omega_max=float(np.max(sup_w)),
        sup_omega_exact=bool(np.max(sup_w) <= result.scenario.sup_vorticity),
        sup_u_max=float(np.max(np.asarray(series["sup_u"], dtype=float))),
        penetrations=int(series["penetrations"][-1]),
        area_min=area_min,
        area_max=area_max,
        normal_velocity_max=nvel,
    )


def solution_trajectory(result: RunResult):
    """identity.Trajectory view of a run's snapshots.

    Times are the snapshot times; velocity and vorticity lookups demand
    an exact time match, as the residual evaluator only ever samples the
    trajectory's own time grid.
    """
    from .identity import Trajectory

    times = np.asarray([s["t"] for s in result.snapshots], dtype=float)
    fields = {}

    def _at(t: float) -> dict:
        for snap in result.snapshots:
            if abs(snap["t"] - t) <= 1e-9:
                key = snap["t"]
                if key not in fields:
                    fields[key] = (
                        snap["velocity"],
                        VorticityField(result.grid, snap["labels"], result.scenario.omega0),
                    )
                return fields[key]
        raise KeyError(f"trajectory has no snapshot at t = {t}")

    def u(t, pts):
        return _at(t)[0](pts)

    def omega(t, pts):
        return _at(t)[1](pts)

    return Trajectory(times=times, u=u, omega=omega)

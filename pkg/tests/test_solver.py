import json
import os

import numpy as np
import pytest

from serfati.fields import BicubicInterpolant, Grid, VelocityField, VorticityField, direct_biot_savart
from serfati.geometry import boundary_sample, disk_exterior, full_plane
from serfati.identity import BoundaryRule, FarFieldRule, NearFieldRule
from serfati.kernels import Cutoff
from serfati.quadrature import QuadratureSpec
from serfati.scenarios import build
from serfati.solver import (
    GuardrailBreach,
    RunConfig,
    Solver,
    _BoundaryBatch,
    _FarBatch,
    _NearBatch,
    conservation_report,
    run,
    solution_trajectory,
)

CUT = Cutoff()
PLANE = full_plane()
DISK = disk_exterior()

# thinned spec: the batch-vs-rule comparisons are layout identities, not
# accuracy statements, so node counts only need to exercise the paths
SPEC_SMALL = QuadratureSpec(
    radial_nodes=24, angular_nodes=24, panel_radial_nodes=6, boundary_nodes=128
)


def blob_config(**overrides):
    base = dict(
        scenario="blob",
        h=1.0 / 8.0,
        window=1.0,
        dt=1.0 / 16.0,
        t_final=0.125,
        eps=0.5,
        truncation_radius=25.0,
    )
    base.update(overrides)
    return RunConfig(**base)


# ---------------------------------------------------------------------------
# RunConfig
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "overrides",
    [
        {"h": -0.125},
        {"dt": 0.0},
        {"window": 1.1},                      # not an integer number of h steps
        {"window": 0.25, "h": 0.25},          # only 3 nodes per side
        {"probe_stride": 3},                  # 16 cells, no fit
        {"t_final": 0.3},                     # not a multiple of dt
        {"snapshot_times": (0.25,), "t_final": 0.125},
        {"snapshot_times": (0.01,)},          # off the dt lattice
        {"truncation_radius": 0.4},           # inside the cutoff support
        {"extra_eps": -1.0},
        {"snapshot_format": "yaml"},
    ],
)
def test_config_rejects(overrides):
    with pytest.raises(ValueError):
        blob_config(**overrides)


def test_config_roundtrip_hash_and_sizes():
    cfg = blob_config(snapshot_times=(0.0, 0.0625), extra_eps=1.0,
                      quadrature={"radial_nodes": 24}, label="demo")
    clone = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert clone == cfg
    assert clone.config_hash() == cfg.config_hash()
    assert cfg.n == 17
    assert cfg.n_steps == 2
    assert cfg.quadrature_spec().radial_nodes == 24
    assert cfg.quadrature_spec().angular_nodes == 64

    bumped = blob_config(dt=1.0 / 32.0)
    assert bumped.config_hash() != cfg.config_hash()


def test_config_rejects_unknown_keys():
    data = blob_config().to_dict()
    data["colour"] = "red"
    with pytest.raises(ValueError, match="unknown config keys"):
        RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# batched terms against the single-point rules
# ---------------------------------------------------------------------------


def zero_increment(grid: Grid) -> BicubicInterpolant:
    return BicubicInterpolant(grid, np.zeros((grid.n, grid.n, 2)))


def test_far_batch_matches_rule_disk():
    scn = build("radial-exterior")
    grid = Grid(n=17, half_width=2.0)
    probes = np.array([[1.25, 0.0], [-0.6, 1.1], [2.0, -2.0], [8.0, 0.0]])
    batch = _FarBatch(DISK, CUT, 0.5, grid, grid, probes, scn.u0, SPEC_SMALL,
                      r_outer=12.0)
    for p, x in enumerate(probes):
        rule = FarFieldRule(DISK, CUT, 0.5, x, SPEC_SMALL, r_outer=12.0)
        want = rule.value(scn.u0)
        np.testing.assert_allclose(batch._static_total[p], want,
                                   rtol=1e-8, atol=1e-11)
    # zero increment reproduces the static integral through the live path,
    # including the probe with no stored pairs at all
    assert batch.starts[-2] == batch.starts[-1]
    got = batch.rate(zero_increment(grid))
    np.testing.assert_allclose(got, batch._static_total, rtol=0.0, atol=1e-8)


def test_far_batch_matches_rule_plane():
    scn = build("blob")
    grid = Grid(n=17, half_width=1.0)
    probes = np.array([[0.0, 0.0], [0.5, 0.25], [1.0, 1.0], [0.125, 0.9]])
    batch = _FarBatch(PLANE, CUT, 0.5, grid, grid, probes, scn.u0, SPEC_SMALL,
                      r_outer=10.0)
    for p, x in enumerate(probes):
        rule = FarFieldRule(PLANE, CUT, 0.5, x, SPEC_SMALL, r_outer=10.0)
        want = rule.value(scn.u0)
        np.testing.assert_allclose(batch._static_total[p], want,
                                   rtol=1e-8, atol=1e-12)
    got = batch.rate(zero_increment(grid))
    np.testing.assert_allclose(got, batch._static_total, rtol=0.0, atol=1e-9)


def test_near_batch_matches_rule_plane():
    scn = build("blob")
    grid = Grid(n=33, half_width=1.0)
    shift = np.array([0.03, 0.01])
    vort = VorticityField(grid, grid.nodes() - shift, scn.omega0)
    probes = np.array([[0.0, 0.0], [0.3, -0.2], [0.6, 0.6]])
    batch = _NearBatch(PLANE, CUT, 0.5, grid, probes, scn.omega0, SPEC_SMALL)
    got = batch.rate(vort, scn.omega0, halo=None)
    for p, x in enumerate(probes):
        rule = NearFieldRule(PLANE, CUT, 0.5, x, SPEC_SMALL)
        want = rule.value(vort.delta_at)
        np.testing.assert_allclose(got[p], want, rtol=1e-4, atol=1e-6)
    assert np.max(np.abs(got)) > 1e-4  # the comparison saw a real signal


def test_near_batch_matches_rule_disk():
    scn = build("radial-exterior")
    grid = Grid(n=33, half_width=2.0)
    shift = np.array([0.02, 0.04])
    vort = VorticityField(grid, grid.nodes() - shift, scn.omega0)
    probes = np.array([[1.3, 0.2], [0.2, 1.6], [-1.05, 0.0]])
    batch = _NearBatch(DISK, CUT, 0.5, grid, probes, scn.omega0, SPEC_SMALL)
    got = batch.rate(vort, scn.omega0, halo=None)
    for p, x in enumerate(probes):
        rule = NearFieldRule(DISK, CUT, 0.5, x, SPEC_SMALL)
        want = rule.value(vort.delta_at)
        np.testing.assert_allclose(got[p], want, rtol=1e-4, atol=1e-6)
    assert np.max(np.abs(got)) > 1e-4


def test_boundary_batch_matches_rule():
    scn = build("radial-exterior")
    probe_grid = Grid(n=17, half_width=2.0)
    probes = np.array([[1.2, 0.0], [0.0, -1.35], [2.5, 0.0]])
    incr_values = np.empty((17, 17, 2))
    nodes = probe_grid.nodes()
    incr_values[..., 0] = 0.05 * np.sin(0.7 * nodes[..., 0] + 0.3)
    incr_values[..., 1] = 0.05 * np.cos(0.5 * nodes[..., 1])
    interp = BicubicInterpolant(probe_grid, incr_values)

    batch = _BoundaryBatch(DISK, CUT, 0.5, probe_grid, probes, scn.u0,
                           n_sample=256)
    got = batch.rate(interp)

    sample = boundary_sample(DISK, 256)
    u_wall = scn.u0(sample.points) + interp(sample.points)
    for p, x in enumerate(probes):
        rule = BoundaryRule(DISK, CUT, 0.5, x, sample=sample)
        np.testing.assert_allclose(got[p], rule.value(u_wall),
                                   rtol=1e-12, atol=1e-16)
    # the far probe cannot see the wall through the cutoff slope
    assert np.all(got[2] == 0.0)
    assert np.max(np.abs(got[:2])) > 1e-6


# ---------------------------------------------------------------------------
# full solver, exterior domain
# ---------------------------------------------------------------------------


def test_disk_solver_stationary_coarse():
    cfg = RunConfig(
        scenario="radial-exterior",
        h=0.25, window=2.0, dt=0.125, t_final=0.25,
        eps=0.5, truncation_radius=48.0,
        quadrature=dict(radial_nodes=32, angular_nodes=32,
                        panel_radial_nodes=6, boundary_nodes=256),
    )
    solver = Solver(cfg)

    # buried lattice slots were replaced by their circle-inversion mirrors
    probes = solver.channels[0].far.probes
    assert np.all(solver.domain.contains(probes))
    lattice = solver.probe_grid.nodes().reshape(-1, 2)
    k = np.flatnonzero((lattice[:, 0] == 0.5) & (lattice[:, 1] == 0.0))[0]
    np.testing.assert_allclose(probes[k], [2.0, 0.0], atol=1e-12)
    k0 = np.flatnonzero((lattice[:, 0] == 0.0) & (lattice[:, 1] == 0.0))[0]
    np.testing.assert_allclose(probes[k0], [4.0 * 48.0, 0.0])

    # before any step the wall reading is exactly the initial swirl
    u_wall = solver.boundary_velocity()
    np.testing.assert_allclose(u_wall, solver._u0_wall, atol=1e-12)
    obs0 = solver.observables()
    assert abs(obs0["circulation"] - solver.scenario.circulation) < 1e-9
    assert obs0["normal_velocity_max"] < 1e-13

    u0n = solver.u0_nodes.copy()
    circ0 = obs0["circulation"]
    for _ in range(cfg.n_steps):
        solver.step()
    obs = solver.observables()

    drift = float(np.max(np.linalg.norm(solver.state.velocity.samples - u0n,
                                        axis=-1)))
    assert drift <= 2e-3
    assert abs(obs["circulation"] - circ0) <= 5e-4
    assert obs["normal_velocity_max"] <= 1e-12
    assert obs["penetrations"] == 0
    assert obs["sup_omega"] <= solver.scenario.sup_vorticity

    # channel 0's near term is kept in step(), not recomputed on read
    fresh = solver.channels[0].near.rate(solver.state.vorticity,
                                         solver.scenario.omega0, solver._halo())
    np.testing.assert_array_equal(solver._near_rate(0), fresh)

    snap = solver.snapshot()
    assert set(snap["far_accum"]) == {0.5}
    assert snap["observables"]["t"] == pytest.approx(0.25)
    assert "holder_beta" in snap["diagnostics"]


# ---------------------------------------------------------------------------
# full solver, plane
# ---------------------------------------------------------------------------


def test_blob_solver_stationary_and_reconstruct():
    cfg = blob_config()
    solver = Solver(cfg)
    u0n = solver.u0_nodes.copy()
    for _ in range(cfg.n_steps):
        solver.step()

    drift = float(np.max(np.linalg.norm(solver.state.velocity.samples - u0n,
                                        axis=-1)))
    assert drift <= 1e-3

    # no wall anywhere in this run
    assert np.all(solver.channels[0].boundary_accum == 0.0)
    assert "circulation" not in solver.observables()
    with pytest.raises(ValueError):
        solver.boundary_velocity()

    # at stride 1 the reconstruction and the node lift agree at the nodes
    nodes = solver.grid.nodes().reshape(-1, 2)
    via_points = solver.reconstruct(nodes)
    via_lift = solver.identity_velocity(0).reshape(-1, 2)
    np.testing.assert_allclose(via_points, via_lift, atol=1e-12)

    # the support halo only skips pairs whose vorticity difference vanishes
    ch = solver.channels[0]
    full = ch.near.rate(solver.state.vorticity, solver.scenario.omega0, None)
    masked = ch.near.rate(solver.state.vorticity, solver.scenario.omega0,
                          solver._halo())
    np.testing.assert_allclose(masked, full, atol=1e-14)


def test_blob_reconstruct_against_direct_kernel_integral():
    cfg = blob_config()
    solver = Solver(cfg)
    for _ in range(cfg.n_steps):
        solver.step()
    pts = np.array([[0.15, 0.05], [0.4, -0.3], [0.0, 0.55]])
    recon = solver.reconstruct(pts)
    direct = np.stack([
        direct_biot_savart(PLANE, solver.state.vorticity, x,
                           support_radius=solver._halo(),
                           support_center=solver.scenario.support_center)
        for x in pts
    ])
    sup = solver.state.velocity.sup_norm()
    assert float(np.max(np.linalg.norm(recon - direct, axis=-1))) <= 2e-2 * sup


def test_solver_is_deterministic():
    cfg = blob_config()
    a, b = Solver(cfg), Solver(cfg)
    for _ in range(cfg.n_steps):
        a.step()
        b.step()
    assert np.array_equal(a.state.velocity.samples, b.state.velocity.samples)
    assert np.array_equal(a.channels[0].far_accum, b.channels[0].far_accum)
    assert np.array_equal(a.state.vorticity.labels, b.state.vorticity.labels)


def test_probe_stride_thins_the_lattice():
    cfg = blob_config(probe_stride=2)
    solver = Solver(cfg)
    assert solver.probe_grid.n == 9
    u0n = solver.u0_nodes.copy()
    for _ in range(cfg.n_steps):
        solver.step()
    drift = float(np.max(np.linalg.norm(solver.state.velocity.samples - u0n,
                                        axis=-1)))
    assert drift <= 1e-3


def test_extra_eps_channel():
    cfg = blob_config(extra_eps=1.0, t_final=0.0625)
    solver = Solver(cfg)
    assert [ch.eps for ch in solver.channels] == [0.5, 1.0]
    solver.step()
    v0 = solver.identity_velocity(0)
    v1 = solver.identity_velocity(1)
    # two cutoff scales reconstruct the same flow from different splits
    assert float(np.max(np.linalg.norm(v0 - v1, axis=-1))) <= 1e-3
    snap = solver.snapshot()
    assert set(snap["far_accum"]) == {0.5, 1.0}
    assert set(snap["tail_budget"]) == {0.5, 1.0}


# ---------------------------------------------------------------------------
# guardrails
# ---------------------------------------------------------------------------


def test_guardrail_raises_on_runaway_velocity():
    cfg = blob_config(t_final=0.0625)
    solver = Solver(cfg)
    solver.state.velocity = VelocityField(
        solver.grid, solver.u0_nodes * 50.0, solver.scenario.u0
    )
    with pytest.raises(GuardrailBreach) as err:
        solver._check_guardrails()
    diag = err.value.diagnostic
    assert {"t", "step", "sup_u", "envelope"} <= set(diag)
    assert diag["sup_u"] > diag["envelope"]


def test_run_reports_guardrail_status(monkeypatch):
    cfg = blob_config(t_final=0.0625)

    def exploding_step(self):
        raise GuardrailBreach("forced", {"t": 0.0, "step": 0})

    monkeypatch.setattr(Solver, "step", exploding_step)
    result = run(cfg)
    assert result.status == "guardrail"
    assert result.report["guardrail_breach"]["t"] == 0.0
    assert result.series["t"] == [0.0]
    assert result.snapshots  # the breach flushed a final snapshot


# ---------------------------------------------------------------------------
# run() artifacts
# ---------------------------------------------------------------------------


def test_run_writes_artifacts(tmp_path):
    cfg = RunConfig(
        scenario="blob",
        h=0.25, window=1.0, dt=0.25, t_final=0.5,
        eps=0.5, truncation_radius=25.0,
        snapshot_times=(0.0, 0.25),
        output_dir=str(tmp_path),
    )
    result = run(cfg)
    assert result.status == "ok"

    for name in ("snapshot-t0.csv", "snapshot-t0p25.csv",
                 "snapshot-t0p5.csv", "report.json"):
        assert os.path.exists(tmp_path / name), name

    with open(tmp_path / "report.json") as fh:
        report = json.load(fh)
    assert RunConfig.from_dict(report["config"]) == cfg
    assert report["config_sha256"] == cfg.config_hash()
    assert report["status"] == "ok"
    assert len(report["series"]["t"]) == cfg.n_steps + 1
    assert set(report["snapshot_files"]) == {
        "snapshot-t0.csv", "snapshot-t0p25.csv", "snapshot-t0p5.csv"
    }

    assert result.snapshot_at(0.25)["t"] == pytest.approx(0.25)
    with pytest.raises(KeyError):
        result.snapshot_at(0.1)


def test_run_ndjson_and_zero_steps(tmp_path):
    cfg = RunConfig(
        scenario="blob",
        h=0.25, window=1.0, dt=0.25, t_final=0.0,
        eps=0.5, truncation_radius=25.0,
        output_dir=str(tmp_path), snapshot_format="ndjson",
    )
    result = run(cfg)
    assert result.status == "ok"
    assert os.path.exists(tmp_path / "snapshot-t0.ndjson")
    assert result.series["t"] == [0.0]


def test_conservation_report_and_trajectory():
    cfg = RunConfig(
        scenario="blob",
        h=0.25, window=1.0, dt=0.25, t_final=0.5,
        eps=0.5, truncation_radius=25.0,
        snapshot_times=(0.0, 0.25),
    )
    result = run(cfg)

    rep = conservation_report(result)
    assert rep.circulation_drift is None
    assert rep.normal_velocity_max is None
    assert rep.penetrations == 0
    assert rep.sup_omega_exact
    assert rep.mass_drift <= 1e-10 * max(1.0, rep.mass_scale)
    assert 0.9 <= rep.area_min <= rep.area_max <= 1.1
    assert "sup|omega| exact" in rep.table()

    traj = solution_trajectory(result)
    np.testing.assert_allclose(traj.times, [0.0, 0.25, 0.5])
    pts = np.array([[0.1, 0.0], [0.0, 0.3], [0.2, -0.2]])
    assert traj.u(0.25, pts).shape == (3, 2)
    assert traj.omega(0.0, pts).shape == (3,)
    with pytest.raises(KeyError):
        traj.u(0.3, pts)

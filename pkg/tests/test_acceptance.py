"""End-to-end acceptance suite; each criterion records one PASS/FAIL line in the terminal summary."""

import dataclasses
import json
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from hippo.cli import main
from hippo.core import ColoredPointCloud, RigidTransform
from hippo.core.camera import backproject
from hippo.core.frames import FrameDirectory
from hippo.core.ply import read_mesh
from hippo.core.sampling import sample_surface
from hippo.core.transform import random_rotation, rotvec_to_matrix
from hippo.fuse import FuseParams, fuse_keyframe, init_fusion, register_frame
from hippo.metrics import add_metric, adds_metric, auc, chamfer
from hippo.pipeline import PipelineConfig, run_ablation, run_pipeline
from hippo.recon import poisson_reconstruct, solve_indicator
from hippo.scale import recover_scale, uniform_scale
from hippo.sim import GT_MESH_NAME, NoiseModel, generate_scene
from hippo.spatial import KdTree, SorParams
from hippo.tracker import IcpRefiner, PoseEstimate, TrackParams

PRIMITIVES = ("mug", "box", "cylinder")
RING_FRAMES = 16
TIME_KEYS = ("time_ms", "mesh_update_times_ms", "timing")


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def info(number, detail):
    line = f"criterion {number}: info  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def rings(tmp_path_factory):
    """16-frame ring datasets, generated on first use."""
    root = tmp_path_factory.mktemp("rings")
    made = {}

    def get(kind, sigma=0.0):
        key = (kind, sigma)
        if key not in made:
            d = root / f"{kind}_{sigma}"
            generate_scene(d, kind, RING_FRAMES, noise=NoiseModel(gaussian_sigma=sigma) if sigma else None)
            made[key] = d
        return made[key]

    return get


def brute_nearest(points, queries):
    d = np.sqrt(((queries[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    return d.argmin(axis=1), d.min(axis=1)


def brute_chamfer(a, b):
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return 1e3 * (d.min(axis=1).mean() + d.min(axis=0).mean())


class TestOracleEquivalence:
    def test_criterion_1(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        pts, queries = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3))
        idx, dist = KdTree(pts).query(queries)
        b_idx, b_dist = brute_nearest(pts, queries)
        kd_err = np.abs(dist - b_dist).max()
        kd_ok = np.array_equal(idx, b_idx) and kd_err <= 1e-9

        a, b = rng.normal(size=(600, 3)), rng.normal(size=(700, 3)) * 1.1 + 0.05
        cd_err = abs(chamfer(a, b, normalize="none") - brute_chamfer(a, b))
        c, r = a.mean(0), np.linalg.norm(a - a.mean(0), axis=1).max()
        cd_err = max(cd_err, abs(chamfer(a, b) - brute_chamfer((a - c) / r, (b - c) / r)))

        model = rng.normal(scale=0.1, size=(500, 3))
        gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
        est = RigidTransform(rotvec_to_matrix(rng.normal(scale=0.05, size=3)), rng.normal(scale=0.01, size=3)) @ gt
        pe, pg = est.apply(model), gt.apply(model)
        add_err = abs(add_metric(model, est, gt) - np.linalg.norm(pe - pg, axis=1).mean())
        adds_err = abs(adds_metric(model, est, gt) - brute_nearest(pg, pe)[1].mean())
        elapsed = time.perf_counter() - t0
        ok = kd_ok and max(cd_err, add_err, adds_err) <= 1e-9 and elapsed < 10.0
        record(1, ok, f"kd-tree err {kd_err:.1e}, chamfer err {cd_err:.1e}, ADD err {add_err:.1e}, ADD-S err {adds_err:.1e}, {elapsed:.2f} s")


def with_far_outliers(points, rng, fraction=0.01):
    n_out = max(1, int(len(points) * fraction))
    dirs = rng.normal(size=(n_out, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    far = points.mean(axis=0) + dirs * rng.uniform(0.2, 0.5, size=(n_out, 1))
    return ColoredPointCloud(np.vstack([points, far]))


def scale_errors(partial, rng, s=5.0):
    measured = with_far_outliers(partial.positions, rng)
    estimated = uniform_scale(partial, s)
    on = abs(recover_scale(measured, estimated, SorParams()) - s) / s
    off = abs(recover_scale(measured, estimated, None) - s) / s
    return on, off


class TestScaleRecovery:
    def test_criterion_2(self):
        rng = np.random.default_rng(1)
        # three faces of a 0.2 x 0.1 x 0.05 m box, as one camera would see it
        dims = np.array([0.2, 0.1, 0.05])
        p = rng.uniform(-0.5, 0.5, size=(10_000, 3)) * dims
        face = rng.integers(0, 3, size=len(p))
        for axis in range(3):
            p[face == axis, (2, 0, 1)[axis]] = dims[(2, 0, 1)[axis]] / 2
        partial = ColoredPointCloud(p)
        errs = [abs(recover_scale(partial, uniform_scale(partial, s), SorParams()) - s) / s for s in (0.1, 1.0, 5.0, 20.0)]
        on, off = scale_errors(partial, rng)
        ok = max(errs) <= 1e-6 and on < 0.02 and off > 0.10
        record(2, ok, f"exact-scale rel err {max(errs):.1e}; 1% outliers: SOR on {100 * on:.2f}%, SOR off {100 * off:.1f}%")

    def test_rendered_partial_reported(self, rings):
        # rendered views thin out at grazing faces, so SOR also trims the clean copy's edges
        partial = backproject(FrameDirectory(rings("box")).load(0))
        on, off = scale_errors(partial, np.random.default_rng(1))
        info(2, f"rendered box partial with 1% outliers: SOR on {100 * on:.2f}%, SOR off {100 * off:.1f}%")
        assert on < off


class TestMeshUpdateTrend:
    @pytest.mark.parametrize("kind", PRIMITIVES)
    def test_criterion_3(self, rings, kind):
        t0 = time.perf_counter()
        res = run_pipeline(rings(kind), PipelineConfig(pose_source="ground_truth"))
        elapsed = time.perf_counter() - t0
        trend = res.report.extra["chamfer_trend_e3"]
        monotone = all(b <= a * 1.1 for a, b in zip(trend, trend[1:]))
        gain = 1.0 - trend[-1] / trend[0]
        ok = monotone and gain >= 0.20 and elapsed < 300
        record(3, ok, f"{kind}: CD {' -> '.join(f'{x:.3f}' for x in trend)} ({100 * gain:.0f}% lower, {len(res.keyframes)} updates, {elapsed:.0f} s)")

    @pytest.mark.parametrize("kind", PRIMITIVES)
    def test_tracked_trend_reported(self, rings, kind):
        # the same loop with the ICP tracker in charge of poses; informational only
        res = run_pipeline(rings(kind), PipelineConfig())
        rep = res.report
        trend = rep.extra["chamfer_trend_e3"]
        info(3, f"{kind} with tracked poses: CD {' -> '.join(f'{x:.3f}' for x in trend)}, AUC ADD {rep.auc_add:.3f}, AUC ADD-S {rep.auc_adds:.3f}")
        assert len(trend) == len(res.keyframes) + 1


class TestSphereAblation:
    def test_criterion_4(self, rings):
        rows = run_ablation(rings("box"), PipelineConfig(), viewpoints=(1, 25, 36, 64), caps=())
        c = {r["value"]: r["n_updates"] for r in rows}
        cd = {r["value"]: r["chamfer_e3"] for r in rows}
        ok = 0 < c[25] <= c[36] <= c[64] and c[1] == 0 and cd[36] <= cd[1]
        auc_s = ", ".join(f"{r['value']}:{r['auc_adds']:.3f}" for r in rows)
        record(4, ok, f"box, tracked: updates {c}; CD(36) {cd[36]:.3f} vs CD(1) {cd[1]:.3f}; AUC ADD-S {auc_s}")


class TestTimingAndCap:
    def test_criterion_5(self, rings, tmp_path):
        args = ["ablate", "--data", str(rings("box")), "--viewpoints", "", "--caps", "30000", "--out", str(tmp_path)]
        assert main(args) == 0
        row = json.loads((tmp_path / "ablate.json").read_text())[0]
        ok = row["accumulated_points"] == 30_000 and row["update_ms_max"] < 10_000 and row["track_ms_median"] < 100
        record(
            5,
            ok,
            f"fps_cap 30000: max mesh update {row['update_ms_max'] / 1e3:.2f} s over {row['n_updates']} updates; "
            f"track median {row['track_ms_median']:.0f} ms (max {row['track_ms_max']:.0f} ms)",
        )

    def test_criterion_6(self, rings):
        data = FrameDirectory(rings("box"))
        params = FuseParams()
        state = init_fusion(read_mesh(data.path / GT_MESH_NAME), params)
        registered = 0
        for pos in (0, 4, 8):
            frame = data.load(pos)
            registered += len(register_frame(frame, frame.gt_pose, params))
            state = fuse_keyframe(state, frame, PoseEstimate(frame.gt_pose, 0.0, 0, True), params)
        ok = registered > 30_000 and len(state.accumulated_measured) == 30_000
        record(6, ok, f"{registered} registered points -> {len(state.accumulated_measured)} kept")


def track_ring(data_dir):
    """ICP tracking against the simulator mesh from the true first pose; per-frame ADD and ADD-S."""
    data = FrameDirectory(data_dir)
    mesh = read_mesh(data.path / GT_MESH_NAME)
    model = sample_surface(mesh, 2000, np.random.default_rng(0)).positions
    refiner = IcpRefiner(TrackParams())
    prev = PoseEstimate(data.gt_pose(0), 0.0, 0, True)
    add, adds = [0.0], [0.0]
    for pos in range(1, len(data)):
        frame = data.load(pos)
        prev = refiner.refine(frame, prev.object_to_camera, mesh, prev)
        add.append(add_metric(model, prev.object_to_camera, frame.gt_pose))
        adds.append(adds_metric(model, prev.object_to_camera, frame.gt_pose))
    return np.array(add), np.array(adds)


class TestTracking:
    def test_criterion_7(self, rings):
        add, adds = track_ring(rings("box"))
        noisy_add, noisy_adds = track_ring(rings("box", 0.005))
        clean_auc, noisy_auc = auc(adds), auc(noisy_adds)
        ok = add.max() < 5e-3 and clean_auc > 0.95 and noisy_auc > 0.85
        record(
            7,
            ok,
            f"box: max ADD {1e3 * add.max():.2f} mm, AUC ADD-S {clean_auc:.3f}; "
            f"noise 0.005*d^2: max ADD {1e3 * noisy_add.max():.2f} mm, AUC ADD-S {noisy_auc:.3f}",
        )

    @pytest.mark.parametrize("kind", ("mug", "cylinder"))
    def test_other_primitives_reported(self, rings, kind):
        add, adds = track_ring(rings(kind))
        info(7, f"{kind}: max ADD {1e3 * add.max():.1f} mm, max ADD-S {1e3 * adds.max():.2f} mm, AUC ADD-S {auc(adds):.3f}")
        assert np.isfinite(add).all()


class TestPoisson:
    def test_criterion_8(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(5000, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        cloud = ColoredPointCloud(p, normals=p)
        sol = solve_indicator(cloud)
        mesh = poisson_reconstruct(cloud)
        # analytic oracle: squared distance to the unit sphere is (|x| - 1)^2
        s = sample_surface(mesh, 30_000, rng).positions
        ref = rng.normal(size=(30_000, 3))
        ref /= np.linalg.norm(ref, axis=1, keepdims=True)
        cd = 1e3 * (((np.linalg.norm(s, axis=1) - 1.0) ** 2).mean() + (KdTree(s).query(ref)[1] ** 2).mean())
        euler = mesh.euler_characteristic()
        res = sol.cg.relative_residual
        ok = mesh.is_watertight() and euler == 2 and cd <= 5.0 and res <= 1e-6
        record(8, ok, f"Euler characteristic {euler}, CD {cd:.3f}, CG residual {res:.1e}")


def strip_times(obj):
    if isinstance(obj, dict):
        return {k: strip_times(v) for k, v in obj.items() if k not in TIME_KEYS}
    if isinstance(obj, list):
        return [strip_times(v) for v in obj]
    return obj


def max_float_gap(a, b):
    """Largest float difference between two equal-shaped JSON trees; inf when structure or non-floats differ."""
    if isinstance(a, dict):
        if a.keys() != b.keys():
            return np.inf
        return max((max_float_gap(a[k], b[k]) for k in a), default=0.0)
    if isinstance(a, list):
        if len(a) != len(b):
            return np.inf
        return max((max_float_gap(x, y) for x, y in zip(a, b)), default=0.0)
    if isinstance(a, float) and isinstance(b, float):
        return abs(a - b)
    return 0.0 if a == b else np.inf


class TestDeterminism:
    def test_criterion_9(self, tmp_path):
        d = tmp_path / "box8"
        generate_scene(d, "box", 8)
        cfg = dataclasses.replace(PipelineConfig(), rng_seed=11)
        reports, sizes = [], []
        for name in ("a", "b"):
            res = run_pipeline(d, cfg, out_dir=tmp_path / name)
            reports.append(strip_times(json.loads((tmp_path / name / "report.json").read_text())))
            sizes.append((len(res.final_mesh.vertices), len(res.final_mesh.faces)))
        gap = max_float_gap(reports[0], reports[1])
        ok = gap <= 1e-9 and sizes[0] == sizes[1]
        record(9, ok, f"max report difference {gap:.1e}, final mesh {sizes[0][0]} vertices / {sizes[0][1]} faces in both runs")

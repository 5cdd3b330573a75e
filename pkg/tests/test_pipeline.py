import dataclasses
import json

import numpy as np
import pytest

from hippo.core import CameraIntrinsics
from hippo.core.ply import read_mesh
from hippo.fuse import init_fusion
from hippo.metrics import EvalReport
from hippo.pipeline import (
    CONFIG_NOTES,
    ConfigError,
    PipelineConfig,
    annotated_config,
    config_from_dict,
    config_to_dict,
    evaluate_run,
    load_config,
    run_ablation,
    run_pipeline,
)
from hippo.sim import GT_MESH_NAME, generate_scene
from hippo.tracker import IcpParams

K_SMALL = CameraIntrinsics.default(160, 160, 160.0)
TIME_KEYS = ("time_ms", "mesh_update_times_ms", "timing")


@pytest.fixture(scope="module")
def small_box(tmp_path_factory):
    d = tmp_path_factory.mktemp("box6")
    generate_scene(d, "box", 6, intrinsics=K_SMALL)
    return d


@pytest.fixture(scope="module")
def small_run(small_box, tmp_path_factory):
    out = tmp_path_factory.mktemp("run6")
    return out, run_pipeline(small_box, PipelineConfig(), out_dir=out, snapshot=True)


def strip_times(obj):
    if isinstance(obj, dict):
        return {k: strip_times(v) for k, v in obj.items() if k not in TIME_KEYS}
    if isinstance(obj, list):
        return [strip_times(v) for v in obj]
    return obj


def assert_close(a, b, tol=1e-9):
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        for k in a:
            assert_close(a[k], b[k], tol)
    elif isinstance(a, list):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert_close(x, y, tol)
    elif isinstance(a, float):
        assert a == pytest.approx(b, abs=tol)
    else:
        assert a == b


class TestConfig:
    def test_roundtrip(self):
        cfg = PipelineConfig(sphere_viewpoints=25, icp=IcpParams(max_iterations=12), pose_source="ground_truth")
        assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg

    def test_partial_file_takes_defaults(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"fps_cap": 5000, "recon": {"grid_resolution": 48}}))
        cfg = load_config(p)
        assert cfg.fps_cap == 5000 and cfg.recon.grid_resolution == 48
        assert cfg.sphere_viewpoints == 36

    @pytest.mark.parametrize(
        "data",
        [{"bogus": 1}, {"icp": {"variant": "plane"}}, {"sphere_viewpoints": 0}, {"dreamer": {"mode": "external"}}, {"pose_source": "x"}],
    )
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_missing_and_malformed_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "none.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError, match="bad.json"):
            load_config(tmp_path / "bad.json")

    def test_annotations(self):
        d = annotated_config(PipelineConfig())
        assert d["_notes"] == CONFIG_NOTES
        # annotated output loads back as a config
        assert config_from_dict(d) == PipelineConfig()

    def test_seed_reaches_corruption(self):
        assert PipelineConfig(rng_seed=7).corruption().rng_seed == 7


class TestRun:
    def test_missing_meta(self, tmp_path):
        with pytest.raises(ConfigError, match=str(tmp_path / "meta.json")):
            run_pipeline(tmp_path)

    def test_oracle_needs_gt_mesh(self, tmp_path):
        d = tmp_path / "d"
        generate_scene(d, "box", 2, intrinsics=K_SMALL)
        (d / GT_MESH_NAME).unlink()
        with pytest.raises(ConfigError, match=GT_MESH_NAME):
            run_pipeline(d)

    def test_outputs(self, small_run):
        out, res = small_run
        for name in ("report.json", "report.csv", "poses.json", "final.ply", "prior_metric.ply", "config.json"):
            assert (out / name).is_file()
        poses = json.loads((out / "poses.json").read_text())["frames"]
        assert len(poses) == 6 and [p["index"] for p in poses] == list(range(6))
        assert res.snapshots == [f"fused_{i:03d}.ply" for i in range(1, len(res.keyframes) + 1)]
        assert len(res.report.mesh_update_times_ms) == len(res.keyframes)
        assert res.report.per_frame[0].add == pytest.approx(0.0, abs=1e-12)

    def test_update_bound(self, small_run):
        _, res = small_run
        assert 0 < len(res.keyframes) <= PipelineConfig().sphere_viewpoints - 1

    def test_timing_stages(self, small_run):
        timing = small_run[1].report.extra["timing"]
        for key in ("prior_ms", "scale_ms", "init_ms", "load_ms", "track_ms", "fuse_ms"):
            assert timing[key] >= 0

    def test_eval_reproduces_report(self, small_run, small_box):
        out, res = small_run
        again = evaluate_run(out, small_box)
        saved = EvalReport.read_json(out / "report.json")
        assert again.per_frame == saved.per_frame
        assert again.auc_add == saved.auc_add and again.auc_adds == saved.auc_adds
        assert again.chamfer_e3 == saved.chamfer_e3

    def test_single_viewpoint_means_no_updates(self, small_box):
        cfg = PipelineConfig(sphere_viewpoints=1)
        res = run_pipeline(small_box, cfg)
        assert res.keyframes == [] and res.report.mesh_update_times_ms == []
        remesh = init_fusion(res.prior_metric, cfg.fuse_params()).current_mesh
        np.testing.assert_array_equal(res.final_mesh.vertices, remesh.vertices)
        np.testing.assert_array_equal(res.final_mesh.faces, remesh.faces)

    def test_deterministic(self, small_box, tmp_path):
        reports = []
        for name in ("a", "b"):
            res = run_pipeline(small_box, PipelineConfig(rng_seed=3), out_dir=tmp_path / name)
            reports.append(json.loads((tmp_path / name / "report.json").read_text()))
            assert len(read_mesh(tmp_path / name / "final.ply").vertices) == len(res.final_mesh.vertices)
        assert_close(strip_times(reports[0]), strip_times(reports[1]))

    def test_ground_truth_poses(self, small_box):
        res = run_pipeline(small_box, PipelineConfig(pose_source="ground_truth", sphere_viewpoints=1))
        assert max(f.add for f in res.report.per_frame) < 1e-9
        assert res.report.auc_add == pytest.approx(1.0)


class TestMugTrend:
    def test_ground_truth_poses_improve_mesh(self, tmp_path):
        generate_scene(tmp_path / "mug", "mug", 16)
        res = run_pipeline(tmp_path / "mug", PipelineConfig(pose_source="ground_truth"))
        trend = res.report.extra["chamfer_trend_e3"]
        assert len(trend) == len(res.keyframes) + 1 > 1
        assert all(b <= a * 1.1 for a, b in zip(trend, trend[1:]))
        assert trend[-1] < trend[0]
        assert res.report.chamfer_e3 == pytest.approx(trend[-1], rel=1e-3)


class TestAblation:
    def test_rows(self, small_box):
        cfg = dataclasses.replace(PipelineConfig(), recon=dataclasses.replace(PipelineConfig().recon, grid_resolution=32))
        rows = run_ablation(small_box, cfg, viewpoints=[1, 8], caps=[2000])
        assert [(r["axis"], r["value"]) for r in rows] == [("sphere_viewpoints", 1), ("sphere_viewpoints", 8), ("fps_cap", 2000)]
        assert rows[0]["n_updates"] == 0 and rows[1]["n_updates"] <= 7
        assert rows[2]["accumulated_points"] == 2000

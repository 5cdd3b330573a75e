"""End-to-end loop: prior from the first frame, metric scale, tracking, keyframe fusion, evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.camera import backproject
from .core.frames import DatasetError, FrameDirectory, pose_to_json
from .core.ply import read_mesh, write_mesh
from .core.sampling import sample_surface
from .core.transform import RigidTransform
from .core.types import TriangleMesh
from .dreamer import CANONICAL_FLIP, CorruptionParams, external_prior, first_view_partial, synth_prior, write_request
from .fuse import FuseParams, fuse_keyframe, init_fusion, make_sphere, mark_occupied, observe
from .metrics import AUC_MAX_THRESHOLD, EvalReport, FrameMetrics, add_metric, adds_metric, chamfer
from .recon import ReconParams
from .scale import apply_scale, recover_scale
from .sim.dataset import GT_MESH_NAME
from .spatial.sor import SorParams
from .tracker import ExternalRefiner, IcpParams, IcpRefiner, PoseEstimate, TrackingError, TrackParams, init_pose, measured_cloud

log = logging.getLogger(__name__)

REPORT_NAME = "report.json"
CSV_NAME = "report.csv"
POSES_NAME = "poses.json"
FINAL_NAME = "final.ply"
PRIOR_METRIC_NAME = "prior_metric.ply"
SNAPSHOT_PATTERN = "fused_%03d.ply"
CONFIG_NAME = "config.json"
POSE_SOURCES = ("tracked", "ground_truth")


class ConfigError(ValueError):
    """Invalid configuration or unusable input data."""


@dataclass(frozen=True)
class DreamerConfig:
    """``oracle`` corrupts the dataset's ground-truth mesh; ``external`` asks an adapter."""

    mode: str = "oracle"
    corruption: CorruptionParams = CorruptionParams()
    adapter: str | None = None
    adapter_mode: str = "directory"
    timeout_s: float = 600.0

    def __post_init__(self):
        if self.mode not in ("oracle", "external"):
            raise ValueError("dreamer.mode must be 'oracle' or 'external'")
        if self.adapter_mode not in ("directory", "command"):
            raise ValueError("dreamer.adapter_mode must be 'directory' or 'command'")
        if self.mode == "external" and not self.adapter:
            raise ValueError("dreamer.mode 'external' needs dreamer.adapter")


@dataclass(frozen=True)
class PipelineConfig:
    sphere_viewpoints: int = 36
    fps_cap: int = 30_000
    sor: SorParams = SorParams()
    icp: IcpParams = IcpParams(cutoff_schedule=(4.0, 2.0, 1.0), robust_scale=0.005)
    recon: ReconParams = ReconParams()
    dreamer: DreamerConfig = DreamerConfig()
    snapshot_every_keyframe: bool = False
    rng_seed: int = 0
    prior_samples: int = 10_000
    track_points: int = 3_000
    reference_samples: int = 6_000
    refiner_command: str | None = None
    eval_model_points: int = 2_000
    auc_threshold: float = AUC_MAX_THRESHOLD
    pose_source: str = "tracked"

    def __post_init__(self):
        if self.pose_source not in POSE_SOURCES:
            raise ValueError(f"pose_source must be one of {POSE_SOURCES}")
        if self.sphere_viewpoints < 1:
            raise ValueError("sphere_viewpoints must be >= 1")
        for name in ("fps_cap", "prior_samples", "track_points", "reference_samples", "eval_model_points"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.auc_threshold > 0:
            raise ValueError("auc_threshold must be positive")

    def fuse_params(self) -> FuseParams:
        return FuseParams(cap=self.fps_cap, sor=self.sor, recon=self.recon, prior_samples=self.prior_samples, seed=self.rng_seed)

    def track_params(self) -> TrackParams:
        return TrackParams(icp=self.icp, sor=self.sor, max_measured_points=self.track_points, reference_samples=self.reference_samples, seed=self.rng_seed)

    def corruption(self) -> CorruptionParams:
        return dataclasses.replace(self.dreamer.corruption, rng_seed=self.rng_seed)


# where each default comes from; shown by --print-config
CONFIG_NOTES = {
    "sphere_viewpoints": "36 key points on the viewpoint sphere (published setting)",
    "fps_cap": "farthest-point cap once accumulated points exceed 30,000 (published setting)",
    "sor": "statistical outlier removal, classic mean + k_sigma * std rule",
    "icp": "classical stand-in for the learned refiner; cutoff_schedule multiplies correspondence_cutoff",
    "recon": "unscreened Poisson on a regular grid; trim_distance in cells",
    "dreamer": "oracle corrupts the hidden side of the ground-truth mesh; external reads an image-to-3D result",
    "rng_seed": "seeds every sampler and the oracle corruption",
    "auc_threshold": "0.1 m upper bound of the ADD/ADD-S accuracy curve",
    "pose_source": "tracked runs the refiner; ground_truth replays dataset poses to isolate mesh updates",
}

_SECTIONS = {"sor": SorParams, "icp": IcpParams, "recon": ReconParams}


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(x) for x in obj]
    return obj


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(k for k in data if k not in names and not k.startswith("_"))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: v for k, v in data.items() if k in names}
    if "cutoff_schedule" in kwargs:
        kwargs["cutoff_schedule"] = tuple(kwargs["cutoff_schedule"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_to_dict(config: PipelineConfig) -> dict:
    d = _plain(config)
    d["dreamer"]["corruption"].pop("rng_seed")
    return d


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    for key, cls in _SECTIONS.items():
        if key in data:
            data[key] = _build(cls, data[key], key)
    if "dreamer" in data:
        dreamer = dict(data["dreamer"]) if isinstance(data["dreamer"], dict) else data["dreamer"]
        if isinstance(dreamer, dict) and "corruption" in dreamer:
            dreamer["corruption"] = _build(CorruptionParams, dreamer["corruption"], "dreamer.corruption")
        data["dreamer"] = _build(DreamerConfig, dreamer, "dreamer")
    return _build(PipelineConfig, data, "config")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def annotated_config(config: PipelineConfig) -> dict:
    d = config_to_dict(config)
    d["_notes"] = CONFIG_NOTES
    return d


@dataclass
class RunResult:
    report: EvalReport
    poses: list
    final_mesh: TriangleMesh
    prior_metric: TriangleMesh
    keyframes: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def _gt_mesh(data: FrameDirectory) -> TriangleMesh | None:
    name = data.meta.get("scene", {}).get("gt_mesh", GT_MESH_NAME)
    path = data.path / name
    return read_mesh(path) if path.is_file() else None


def acquire_prior(data: FrameDirectory, frame0, config: PipelineConfig, workdir: Path) -> TriangleMesh:
    d = config.dreamer
    if d.mode == "oracle":
        gt = _gt_mesh(data)
        if gt is None or frame0.gt_pose is None:
            raise ConfigError(f"{data.path}: the oracle dreamer needs {GT_MESH_NAME} and a first-frame gt_pose")
        return synth_prior(gt, frame0.gt_pose, config.corruption())
    request = write_request(workdir / "dreamer_request", frame0)
    return external_prior(request, d.adapter, d.adapter_mode, d.timeout_s)


def evaluation_anchor(est0: RigidTransform, gt0: RigidTransform) -> RigidTransform:
    """Ground-truth object frame -> estimated object frame, fixed by the first frame."""
    return est0.inverse() @ gt0


def pose_errors(model_points: np.ndarray, est: RigidTransform, gt: RigidTransform, anchor: RigidTransform):
    est_in_gt = est @ anchor
    return add_metric(model_points, est_in_gt, gt), adds_metric(model_points, est_in_gt, gt)


def run_pipeline(dataset_dir, config: PipelineConfig = PipelineConfig(), out_dir=None, snapshot: bool | None = None) -> RunResult:
    """Run the full loop over a frame directory; writes outputs when ``out_dir`` is given."""
    try:
        data = FrameDirectory(dataset_dir)
    except DatasetError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    snapshot = config.snapshot_every_keyframe if snapshot is None else snapshot
    timing = {}
    fparams, tparams = config.fuse_params(), config.track_params()

    t0 = time.perf_counter()
    frame0 = data.load(0)
    workdir = out if out is not None else Path(dataset_dir)
    prior = acquire_prior(data, frame0, config, workdir)
    timing["prior_ms"] = 1e3 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    measured0 = backproject(frame0)
    if len(measured0) == 0:
        raise ConfigError(f"{data.path}: first frame has an empty mask")
    partial = first_view_partial(prior, frame0.intrinsics)
    s = recover_scale(measured0, partial, config.sor)
    prior_metric = apply_scale(prior, s)
    timing["scale_ms"] = 1e3 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    first = init_pose(measured_cloud(frame0, tparams), prior_metric, config.icp, init_rotation=CANONICAL_FLIP, seed=config.rng_seed)
    state = init_fusion(prior_metric, fparams)
    sphere = make_sphere(config.sphere_viewpoints, first.object_to_camera)
    timing["init_ms"] = 1e3 * (time.perf_counter() - t0)
    log.info("prior scale %.5f, initial residual %.5f m", s, first.residual_rms)

    refiner = ExternalRefiner(config.refiner_command) if config.refiner_command else IcpRefiner(tparams)
    if config.pose_source == "ground_truth":
        if not data.has_gt():
            raise ConfigError(f"{data.path}: pose_source ground_truth needs ground-truth poses")
        to_gt_frame = evaluation_anchor(first.object_to_camera, frame0.gt_pose).inverse()
    poses = [{"index": frame0.timestamp, "pose": pose_to_json(first.object_to_camera), "converged": first.converged,
              "residual_rms": first.residual_rms, "keyframe": False, "time_ms": timing["init_ms"]}]
    meshes = [state.current_mesh]
    keyframes, snapshots, update_ms = [], [], []
    prev = first
    load_ms = 0.0
    for pos in range(1, len(data)):
        t0 = time.perf_counter()
        frame = data.load(pos)
        load_ms += 1e3 * (time.perf_counter() - t0)
        t0 = time.perf_counter()
        try:
            if config.pose_source == "ground_truth":
                est = PoseEstimate(frame.gt_pose @ to_gt_frame, 0.0, 0, True)
            else:
                est = refiner.refine(frame, prev.object_to_camera, state.current_mesh, prev)
        except TrackingError as exc:
            log.warning("frame %d: tracking failed (%s); coasting", frame.timestamp, exc)
            est = PoseEstimate(prev.object_to_camera, prev.residual_rms, 0, False)
        track_ms = 1e3 * (time.perf_counter() - t0)
        if not est.converged:
            log.warning("frame %d: pose not converged", frame.timestamp)
        is_key = False
        obs = observe(sphere, est.object_to_camera)
        if obs.trigger and est.converged:
            t0 = time.perf_counter()
            state = fuse_keyframe(state, frame, est, fparams)
            update_ms.append(1e3 * (time.perf_counter() - t0))
            sphere = mark_occupied(sphere, obs.viewpoint_index)
            keyframes.append(frame.timestamp)
            meshes.append(state.current_mesh)
            is_key = True
            log.info("frame %d: keyframe %d at viewpoint %d (%.0f ms)", frame.timestamp, len(keyframes), obs.viewpoint_index, update_ms[-1])
            if snapshot and out is not None:
                name = SNAPSHOT_PATTERN % len(keyframes)
                write_mesh(out / name, state.current_mesh)
                snapshots.append(name)
        poses.append({"index": frame.timestamp, "pose": pose_to_json(est.object_to_camera), "converged": est.converged,
                      "residual_rms": est.residual_rms, "keyframe": is_key, "time_ms": track_ms})
        prev = est

    # stage totals; frame loading includes applying the segmentation mask
    timing["load_ms"] = load_ms
    timing["track_ms"] = sum(p["time_ms"] for p in poses[1:])
    timing["fuse_ms"] = sum(update_ms)
    final_mesh = state.current_mesh
    extra = {
        "scale": s,
        "n_frames": len(data),
        "n_updates": len(keyframes),
        "keyframes": keyframes,
        "n_unconverged": sum(not p["converged"] for p in poses),
        "final_faces": len(final_mesh.faces),
        "final_vertices": len(final_mesh.vertices),
        "accumulated_points": len(state.accumulated_measured),
        "timing": timing,
    }
    if out is not None:
        write_mesh(out / FINAL_NAME, final_mesh)
        write_mesh(out / PRIOR_METRIC_NAME, prior_metric)
        final_for_eval = read_mesh(out / FINAL_NAME)
    else:
        final_for_eval = final_mesh
    report = evaluate(data, poses, final_for_eval, config, extra)
    report.mesh_update_times_ms = update_ms
    gt = _gt_mesh(data)
    if gt is not None and data.has_gt():
        anchor = evaluation_anchor(first.object_to_camera, frame0.gt_pose)
        gt_est = gt.transformed(anchor)
        report.extra["chamfer_prior_e3"] = chamfer(gt_est, prior_metric, seed=config.rng_seed)
        report.extra["chamfer_trend_e3"] = [chamfer(gt_est, m, seed=config.rng_seed) for m in meshes]
    if out is not None:
        report.write_json(out / REPORT_NAME)
        report.write_csv(out / CSV_NAME)
        (out / POSES_NAME).write_text(json.dumps({"frames": poses}, indent=1) + "\n")
        (out / CONFIG_NAME).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")
    return RunResult(report, poses, final_mesh, prior_metric, keyframes, snapshots)


def evaluate(data: FrameDirectory, poses: list, final_mesh: TriangleMesh, config: PipelineConfig, extra: dict | None = None) -> EvalReport:
    """Pose and mesh metrics against the dataset's ground truth (first-frame anchored)."""
    report = EvalReport(extra=dict(extra or {}))
    gt = _gt_mesh(data)
    if gt is None or not data.has_gt():
        log.info("no ground truth in %s; skipping evaluation", data.path)
        return report
    if len(poses) != len(data):
        raise ConfigError(f"{len(poses)} poses for {len(data)} frames")
    model = sample_surface(gt, config.eval_model_points, np.random.default_rng(config.rng_seed)).positions
    est = [RigidTransform.from_matrix(np.asarray(p["pose"], dtype=np.float64)) for p in poses]
    anchor = evaluation_anchor(est[0], data.gt_pose(0))
    for pos, p in enumerate(poses):
        add, adds = pose_errors(model, est[pos], data.gt_pose(pos), anchor)
        report.per_frame.append(FrameMetrics(int(p["index"]), add, adds, float(p.get("time_ms", 0.0))))
    report.chamfer_e3 = chamfer(gt.transformed(anchor), final_mesh, seed=config.rng_seed)
    return report.finalize(config.auc_threshold)


def evaluate_run(pred_dir, dataset_dir, config: PipelineConfig | None = None) -> EvalReport:
    """Recompute the metrics of a finished run from its poses.json and final.ply.

    Without ``config`` the run's saved config.json is used (defaults if absent).
    """
    pred = Path(pred_dir)
    if config is None:
        config = load_config(pred / CONFIG_NAME) if (pred / CONFIG_NAME).is_file() else PipelineConfig()
    for name in (POSES_NAME, FINAL_NAME):
        if not (pred / name).is_file():
            raise ConfigError(f"missing {pred / name}")
    try:
        poses = json.loads((pred / POSES_NAME).read_text())["frames"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"{pred / POSES_NAME}: unreadable ({exc})") from exc
    return evaluate(FrameDirectory(dataset_dir), poses, read_mesh(pred / FINAL_NAME), config)


ABLATE_VIEWPOINTS = (1, 25, 36, 64)
ABLATE_CAPS = (5_000, 10_000, 20_000, 30_000, 40_000)


def ablation_row(axis: str, value: int, result: RunResult) -> dict:
    rep = result.report
    track = [f.time_ms for f in rep.per_frame[1:]] or [0.0]
    upd = rep.mesh_update_times_ms or [0.0]
    return {
        "axis": axis,
        "value": value,
        "n_updates": rep.extra["n_updates"],
        "accumulated_points": rep.extra["accumulated_points"],
        "chamfer_e3": rep.chamfer_e3,
        "auc_add": rep.auc_add,
        "auc_adds": rep.auc_adds,
        "track_ms_median": float(np.median(track)),
        "track_ms_max": float(np.max(track)),
        "update_ms_mean": float(np.mean(upd)),
        "update_ms_max": float(np.max(upd)),
    }


def run_ablation(dataset_dir, config: PipelineConfig = PipelineConfig(), viewpoints=ABLATE_VIEWPOINTS, caps=ABLATE_CAPS) -> list:
    """Sweep sphere size (at the configured cap) and FPS cap (at the configured sphere size)."""
    rows = []
    for n in viewpoints:
        res = run_pipeline(dataset_dir, dataclasses.replace(config, sphere_viewpoints=int(n)))
        rows.append(ablation_row("sphere_viewpoints", int(n), res))
        log.info("sphere_viewpoints=%d: %d updates", n, rows[-1]["n_updates"])
    for cap in caps:
        res = run_pipeline(dataset_dir, dataclasses.replace(config, fps_cap=int(cap)))
        rows.append(ablation_row("fps_cap", int(cap), res))
        log.info("fps_cap=%d: max update %.0f ms", cap, rows[-1]["update_ms_max"])
    return rows

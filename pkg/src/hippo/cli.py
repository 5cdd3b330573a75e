"""Command line: generate scenes, run the loop, evaluate, sweep ablations, export meshes."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .core.frames import DatasetError
from .core.ply import PlyError, read_mesh, write_mesh
from .dreamer import PriorMissingError, PriorParseError
from .pipeline import (
    ABLATE_CAPS,
    ABLATE_VIEWPOINTS,
    FINAL_NAME,
    PRIOR_METRIC_NAME,
    SNAPSHOT_PATTERN,
    ConfigError,
    PipelineConfig,
    annotated_config,
    evaluate_run,
    load_config,
    run_ablation,
    run_pipeline,
)
from .sim import DEFAULT_DIMS, NoiseModel, generate_scene

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
INPUT_ERRORS = (ConfigError, DatasetError, PriorMissingError, PriorParseError, PlyError, FileNotFoundError)


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    return cfg


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6f}"


def summary_lines(report) -> list:
    """Headline metrics as printed by ``run`` and ``eval``."""
    return [
        f"{'metric':<12}{'value':>12}",
        f"{'AUC ADD':<12}{_fmt(report.auc_add):>12}",
        f"{'AUC ADD-S':<12}{_fmt(report.auc_adds):>12}",
        f"{'CD x1e3':<12}{_fmt(report.chamfer_e3):>12}",
    ]


def cmd_gen_scene(args) -> int:
    noise = None
    if args.noise_sigma > 0 or args.dropout > 0:
        noise = NoiseModel(args.noise_sigma, args.dropout, args.seed)
    try:
        n = generate_scene(args.out, args.kind, args.frames, radius=args.radius, height=args.height, noise=noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"wrote {n} frames of '{args.kind}' to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.print_effective:
        print(json.dumps(annotated_config(cfg), indent=2))
        return EXIT_OK
    if not args.data or not args.out:
        raise ConfigError("run needs --data and --out")
    res = run_pipeline(args.data, cfg, out_dir=args.out, snapshot=args.snapshot or None)
    print(f"{len(res.keyframes)} mesh updates at frames {res.keyframes}")
    print("\n".join(summary_lines(res.report)))
    print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else None
    rep = evaluate_run(args.pred, args.data, cfg)
    if args.json:
        print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    else:
        print("\n".join(summary_lines(rep)))
    return EXIT_OK


ABLATE_COLUMNS = (
    ("axis", "{:<18}"),
    ("value", "{:>7}"),
    ("n_updates", "{:>8}"),
    ("accumulated_points", "{:>9}"),
    ("chamfer_e3", "{:>9.4f}"),
    ("auc_adds", "{:>9.4f}"),
    ("track_ms_median", "{:>10.1f}"),
    ("update_ms_max", "{:>10.1f}"),
)
ABLATE_HEADERS = ("axis", "value", "updates", "points", "CD", "AUC-S", "track_ms", "update_ms")


def cmd_ablate(args) -> int:
    rows = run_ablation(args.data, _config(args), args.viewpoints, args.caps)
    widths = [len(fmt.format(0 if i else "")) for i, (_, fmt) in enumerate(ABLATE_COLUMNS)]
    print("".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(ABLATE_HEADERS, widths))))
    for row in rows:
        print("".join(fmt.format(row[key] if row[key] is not None else float("nan")) for key, fmt in ABLATE_COLUMNS))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "ablate.json").write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def cmd_export_mesh(args) -> int:
    pred = Path(args.pred)
    if args.which == "final":
        src = pred / FINAL_NAME
    elif args.which == "prior":
        src = pred / PRIOR_METRIC_NAME
    else:
        src = pred / (SNAPSHOT_PATTERN % int(args.which))
    if not src.is_file():
        raise FileNotFoundError(f"missing {src}")
    mesh = read_mesh(src)
    write_mesh(args.out, mesh, binary=not args.ascii)
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.faces)} faces to {args.out}")
    return EXIT_OK


def _keyframe_or_name(text: str) -> str:
    if text in ("final", "prior") or text.isdigit():
        return text
    raise argparse.ArgumentTypeError("expected 'final', 'prior' or a keyframe number")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hippo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap.add_argument("--print-config", action="store_true", help="print the default config with annotations and exit")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("gen-scene", help="render a primitive on a ring trajectory")
    p.add_argument("--kind", choices=sorted(DEFAULT_DIMS), default="mug")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=0.5, help="ring radius in meters")
    p.add_argument("--height", type=float, default=0.3, help="camera height above the object center")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="depth noise sigma: std = sigma * d^2")
    p.add_argument("--dropout", type=float, default=0.0, help="per-pixel depth dropout probability")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("run", help="run tracking and mesh updates over a dataset")
    p.add_argument("--data")
    p.add_argument("--config", help="JSON config; missing keys take defaults")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="overrides rng_seed")
    p.add_argument("--snapshot", action="store_true", help="write the mesh after every keyframe")
    p.add_argument("--print-config", dest="print_effective", action="store_true", help="print the effective config and exit")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="recompute metrics of a finished run")
    p.add_argument("--pred", required=True, help="run output directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="defaults to the run's saved config")
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep sphere size and FPS cap")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for ablate.json")
    p.add_argument("--viewpoints", type=_int_list, default=list(ABLATE_VIEWPOINTS), help="comma-separated; empty to skip")
    p.add_argument("--caps", type=_int_list, default=list(ABLATE_CAPS), help="comma-separated; empty to skip")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-mesh", help="copy a mesh out of a run directory")
    p.add_argument("--pred", required=True)
    p.add_argument("--which", type=_keyframe_or_name, default="final", help="final, prior or a keyframe number")
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_export_mesh)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.print_config and args.command is None:
        print(json.dumps(annotated_config(PipelineConfig()), indent=2))
        return EXIT_OK
    if args.command is None:
        ap.print_help()
        return EXIT_INPUT
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

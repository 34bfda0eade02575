"""Command-line entry point: routeflow synth|preprocess|animate|metrics|export|defaults."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .core import ensure_normalized, preprocess, trajectories_from_dict, trajectories_to_dict
from .errors import ParseError, RouteFlowError, UsageError
from .export import atomic_write, dump_json, export_html, export_svg, frames_from_dict
from .metrics import (
    MetricsReport,
    deformation,
    deviation,
    dispersion,
    ink_ratio,
    occlusion_overall,
    occlusion_within,
)
from .pipeline import frames_to_dict, group_assignment, sha256_bytes, timed_run
from .synthgen import ASSIGNMENTS, dataset_to_dict, generate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (see `routeflow defaults`)")
    common.add_argument("--seed", type=_seed, help="overrides the config seed")
    common.add_argument("--out", help="output path")

    p = _Parser(prog="routeflow", description="Trajectory-aware animated transitions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic trajectory dataset")
    s.add_argument("--bends", type=int, choices=(1, 2))
    s.add_argument("--assignment", help=f"one of {', '.join(sorted(ASSIGNMENTS))}")
    s.add_argument("--count", type=int, help="number of trajectories")
    s.add_argument("--perturbation", type=float, help="noise scale")

    s = sub.add_parser("preprocess", parents=[common], help="normalize, filter, simplify and merge trajectories")
    s.add_argument("input")

    s = sub.add_parser("animate", parents=[common], help="run the full pipeline and write frames")
    s.add_argument("input")
    s.add_argument("--frames", type=int, help="frame count")
    s.add_argument("--baseline", choices=("straight",), help="straight start-to-end motion instead")
    s.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    s.add_argument("--dump-paths", help="write bundled paths as trajectory JSON")
    s.add_argument("--dump-graph", help="write the hotspot graph in DOT format")
    s.add_argument("--dump-layout", help="write the layout plan as JSON")
    s.add_argument("--no-warm-up", action="store_true", help="skip JIT warm-up before timing")

    s = sub.add_parser("metrics", parents=[common], help="score frames and/or bundled paths")
    s.add_argument("--frames", dest="frames_path", help="frames JSON from `animate`")
    s.add_argument("--groups", help="take the group block from this frames file instead")
    s.add_argument("--original", help="original trajectory JSON")
    s.add_argument("--bundled", help="bundled trajectory JSON (e.g. from --dump-paths)")

    s = sub.add_parser("export", parents=[common], help="render frames to SVG files or an HTML player")
    s.add_argument("frames_path")
    s.add_argument("--format", choices=("svg", "html"), default="svg")

    sub.add_parser("defaults", parents=[common], help="print the default config")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "frames", None) is not None:
        try:
            cfg = dataclasses.replace(cfg, frame_count=args.frames)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return cfg


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _parse_bytes(data: bytes):
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    except UnicodeDecodeError:
        raise ParseError("input is not UTF-8 text") from None


def cmd_synth(args) -> None:
    cfg = _config(args)
    synth = cfg.synth_config()
    updates = {
        "trend_bends": args.bends,
        "hotspot_assignment": args.assignment,
        "trajectory_count": args.count,
        "perturbation_scale": args.perturbation,
    }
    try:
        synth = dataclasses.replace(synth, **{k: v for k, v in updates.items() if v is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _require_out(args)
    atomic_write(out, dump_json(dataset_to_dict(generate(synth))))


def cmd_preprocess(args) -> None:
    cfg = _config(args)
    tset = trajectories_from_dict(_parse_bytes(_read(args.input)))
    out = preprocess(ensure_normalized(tset), cfg.preprocess)
    atomic_write(_require_out(args), dump_json(trajectories_to_dict(out)))


def cmd_animate(args) -> None:
    cfg = _config(args)
    out = _require_out(args)
    raw = _read(args.input)
    tset = trajectories_from_dict(_parse_bytes(raw))
    result, manifest = timed_run(tset, cfg, raw, baseline=args.baseline == "straight", warm=not args.no_warm_up)
    atomic_write(out, dump_json(frames_to_dict(result)))
    if args.dump_paths:
        doc = {
            "trajectories": [
                {"id": oid, "points": p.tolist(), "weight": 1} for oid, p in sorted(result.bundled_paths().items())
            ],
            "normalized": True,
        }
        atomic_write(args.dump_paths, dump_json(doc))
    if args.dump_graph and result.graph is not None:
        atomic_write(args.dump_graph, result.graph.to_dot())
    if args.dump_layout and result.plan is not None:
        atomic_write(args.dump_layout, dump_json(result.plan.to_dict()))
    mpath = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    atomic_write(mpath, json.dumps(manifest.to_dict(), indent=2) + "\n")
    for msg in manifest.messages:
        print(f"warning: {msg}", file=sys.stderr)


def cmd_metrics(args) -> None:
    cfg = _config(args)
    if not args.frames_path and not (args.original and args.bundled):
        raise UsageError("give --frames and/or both --original and --bundled")
    if bool(args.original) != bool(args.bundled):
        raise UsageError("--original and --bundled go together")
    report = {}
    hashes = []
    if args.frames_path:
        raw = _read(args.frames_path)
        hashes.append(raw)
        frames, groups = frames_from_dict(_parse_bytes(raw))
        if args.groups:
            graw = _read(args.groups)
            hashes.append(graw)
            _, groups = frames_from_dict(_parse_bytes(graw))
        g = group_assignment(groups, frames)
        g.validate(frames)
        report.update(
            occlusion_overall=occlusion_overall(frames, frames.radius),
            occlusion_within=occlusion_within(frames, g, frames.radius),
            deformation=deformation(frames, g),
            dispersion=dispersion(frames, g),
        )
    if args.original:
        a_raw, b_raw = _read(args.original), _read(args.bundled)
        hashes += [a_raw, b_raw]
        original = ensure_normalized(trajectories_from_dict(_parse_bytes(a_raw)))
        bundled = trajectories_from_dict(_parse_bytes(b_raw))
        report.update(
            deviation=deviation(original, bundled, cfg.bundling.control_points),
            ink_ratio=ink_ratio(original, bundled, cfg.raster),
        )
    full = {f.name: report.get(f.name) for f in dataclasses.fields(MetricsReport)}
    full["provenance"] = {
        "dataset_id": sha256_bytes(b"".join(sha256_bytes(h).encode() for h in hashes)),
        "params_hash": cfg.digest(),
        "seed": cfg.seed,
    }
    text = json.dumps(full, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_export(args) -> None:
    out = _require_out(args)
    doc = _parse_bytes(_read(args.frames_path))
    frames, _ = frames_from_dict(doc)
    if args.format == "svg":
        export_svg(frames, out)
    else:
        export_html(frames, doc, out)


def cmd_defaults(args) -> None:
    text = PipelineConfig().to_json()
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "animate": cmd_animate,
    "metrics": cmd_metrics,
    "export": cmd_export,
    "defaults": cmd_defaults,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except RouteFlowError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 4
    return 0


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())

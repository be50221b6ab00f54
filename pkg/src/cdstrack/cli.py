"""Command-line entry point: synth, track, eval, reid, bench.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
Every command validates before creating outputs, and outputs are staged in
a temporary directory next to the destination, then moved into place.
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .affinity import TransitionModel, kernel_affinity, median_gamma
from .bench import BENCH_SIZES, rows_to_csv, run_speedup, summarize
from .data import (FormatError, load_features, read_detections, read_features_csv,
                   read_trajectories, trajectory_rows_to_csv, write_detections,
                   write_features_bin)
from .enumeration import rank_by_membership
from .metrics import identity_metrics
from .pipeline import PipelineConfig, run_pipeline
from .synth import SynthConfig, synth_generate

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2

# fields a synth config file has to spell out; seed may come from --seed
SYNTH_REQUIRED = ("cameras", "zones_per_camera", "identities", "visit_frames", "travel_frames",
                  "feature_dim", "appearance_noise", "drop_prob")


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    detections: Path
    features: Path | None
    topology: Path | None
    out: Path
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    seed: int = 0

    def validate(self):
        for name in ("detections", "features", "topology"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ValidationError(f"{name}: file not found: {p}")

    def as_dict(self):
        return {"detections": str(self.detections),
                "features": None if self.features is None else str(self.features),
                "topology": None if self.topology is None else str(self.topology),
                "pipeline": asdict(self.pipeline), "seed": self.seed}


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def _check_seed(seed):
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise ValidationError(f"--seed must be an unsigned 64-bit integer, got {seed}")


def synth_config(args) -> SynthConfig:
    doc = {}
    if args.config:
        doc = _load_json(args.config)
        if not isinstance(doc, dict):
            raise ValidationError("synth config must be a JSON object")
        missing = [k for k in SYNTH_REQUIRED if k not in doc]
        if missing:
            raise ValidationError(f"synth config is missing field(s): {', '.join(missing)}")
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        return SynthConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def _pipeline_config(doc, args) -> PipelineConfig:
    pipe = dict(doc.get("pipeline", {}))
    solver = dict(doc.get("solver", {}))
    known = {f.name for f in fields(PipelineConfig)}
    extra = set(pipe) - known
    if extra:
        raise ValidationError(f"unknown pipeline field(s): {', '.join(sorted(extra))}")
    extra = set(solver) - {"mode", "tol", "max_iter"}
    if extra:
        raise ValidationError(f"unknown solver field(s): {', '.join(sorted(extra))}")
    if "mode" in solver:
        pipe["alpha_mode"] = solver["mode"]
    for k in ("tol", "max_iter"):
        if k in solver:
            pipe[k] = solver[k]
    if args.solver is not None:
        pipe["alpha_mode"] = args.solver
    if args.jobs is not None:
        pipe["jobs"] = args.jobs
    try:
        return PipelineConfig(**pipe)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def run_config(args) -> RunConfig:
    doc = _load_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise ValidationError("run config must be a JSON object")
    extra = set(doc) - {"detections", "features", "topology", "pipeline", "solver", "seed"}
    if extra:
        raise ValidationError(f"unknown config field(s): {', '.join(sorted(extra))}")
    base = Path(args.dataset) if args.dataset else None

    def pick(flag, key, default_name):
        if flag:
            return Path(flag)
        if key in doc and doc[key] is not None:
            return Path(doc[key])
        if base is not None and (base / default_name).exists():
            return base / default_name
        return None

    det = pick(args.detections, "detections", "detections.csv")
    if det is None:
        raise ValidationError("no detections given (pass a dataset directory or --detections)")
    if args.out is None:
        raise ValidationError("--out is required")
    cfg = RunConfig(det, pick(args.features, "features", "features.bin"),
                    pick(args.topology, "topology", "topology.json"), Path(args.out),
                    _pipeline_config(doc, args),
                    args.seed if args.seed is not None else int(doc.get("seed", 0)))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- output staging

def publish(out_dir, files: dict):
    """Write ``{name: str | bytes}`` into ``out_dir`` through a staging directory."""
    out_dir = Path(out_dir)
    parent = out_dir.resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=parent))
    try:
        for name, content in files.items():
            p = stage / name
            p.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(content, bytes):
                p.write_bytes(content)
            else:
                p.write_text(content)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in files:
            dst = out_dir / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(stage / name, dst)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _render(writer, *a):
    """Run a path-based writer into a scratch file and return its bytes."""
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "f"
        writer(p, *a)
        out = {"": p.read_bytes()}
        hdr = Path(str(p) + ".hdr")
        if hdr.exists():
            out[".hdr"] = hdr.read_bytes()
        return out


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    cfg = synth_config(args)
    if args.out is None:
        raise ValidationError("--out is required")
    ds = synth_generate(cfg)
    files = {"detections.csv": _render(write_detections, ds.detections, False)[""]}
    feats = _render(write_features_bin, ds.features)
    files["features.bin"] = feats[""]
    files["features.bin.hdr"] = feats[".hdr"]
    files["topology.json"] = ds.model.to_json() + "\n"
    files["truth.csv"] = trajectory_rows_to_csv(ds.truth_rows())
    files["synth_config.json"] = json.dumps(cfg.as_dict(), indent=2, sort_keys=True) + "\n"
    publish(args.out, files)
    print(f"wrote {len(ds.detections)} detections of {cfg.identities} identities "
          f"over {cfg.cameras} camera(s) to {args.out}")
    return EXIT_OK


def _read_inputs(cfg: RunConfig):
    try:
        features = load_features(cfg.features) if cfg.features is not None else None
        detections = read_detections(cfg.detections, features)
        if cfg.topology is not None:
            model = TransitionModel.from_json(Path(cfg.topology).read_text())
        else:
            model = TransitionModel(sorted({d.camera for d in detections}))
    except (FormatError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(str(exc)) from None
    unknown = sorted({d.camera for d in detections} - set(model.cameras))
    if unknown:
        raise ValidationError(f"detections use camera(s) {unknown} missing from the topology")
    if features is None and detections:
        raise ValidationError("detections need appearance features (features file not found)")
    return detections, model


def cmd_track(args):
    cfg = run_config(args)
    detections, model = _read_inputs(cfg)
    res = run_pipeline(detections, model, cfg.pipeline)
    report = dict(res.report)
    report["config"] = cfg.as_dict()
    report["trajectories"] = [{"label": t.label, "tracks": sorted(x.track_id for x in t.tracks),
                               "cameras": sorted({x.camera for x in t.tracks}),
                               "flagged": t.flagged} for t in res.trajectories]
    publish(cfg.out, {"trajectories.csv": trajectory_rows_to_csv(res.rows()),
                      "report.json": json.dumps(report, indent=2, sort_keys=True) + "\n"})
    nc = sum(report["nonconverged"].values())
    print(f"{len(res.trajectories)} trajectories from {len(res.tracks)} tracks"
          + (f" ({nc} non-converged solve(s), see report.json)" if nc else ""))
    return EXIT_OK


def cmd_eval(args):
    try:
        pred = read_trajectories(args.predictions)
        truth = read_trajectories(args.truth)
    except FileNotFoundError as exc:
        raise ValidationError(f"file not found: {exc.filename}") from None
    except FormatError as exc:
        raise ValidationError(str(exc)) from None
    if not truth:
        raise ValidationError(f"{args.truth}: no truth rows")
    m = identity_metrics(pred, truth)
    print(m.table(), end="")
    if args.out is not None:
        publish(args.out, {"metrics.json": m.to_json(), "metrics.txt": m.table()})
    return EXIT_OK


def _gallery(path):
    try:
        if Path(path).suffix == ".csv":
            ids, X = read_features_csv(path)
        else:
            X = load_features(path)
            ids = list(range(len(X)))
    except FileNotFoundError as exc:
        raise ValidationError(f"file not found: {exc.filename}") from None
    except (FormatError, KeyError, ValueError) as exc:
        raise ValidationError(str(exc)) from None
    if len(ids) == 0:
        raise ValidationError("gallery is empty")
    if len(set(ids)) != len(ids):
        raise ValidationError("gallery ids are not unique")
    return list(ids), np.asarray(X, dtype=float)


def _parse_ids(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"--queries must be comma-separated integers, got {text!r}") from None


def cmd_reid(args):
    ids, X = _gallery(args.gallery)
    queries = _parse_ids(args.queries) if args.queries else list(ids)
    pos = {g: k for k, g in enumerate(ids)}
    missing = [q for q in queries if q not in pos]
    if missing:
        raise ValidationError(f"query id(s) {missing} not in the gallery")
    if args.out is None:
        raise ValidationError("--out is required")
    if args.gamma is not None and args.gamma <= 0:
        raise ValidationError("--gamma must be positive")
    modes = ["membership", "distance"] if args.mode == "both" else [args.mode]
    if len(X) < 2:
        A = np.zeros((len(X), len(X)))
    else:
        try:
            gamma = args.gamma if args.gamma is not None else median_gamma(X)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        A = kernel_affinity(X, gamma)
    D = cdist(X, X)
    solver = args.solver or "exact"
    files = {}
    for q in queries:
        for mode in modes:
            ranked = rank_by_membership(A, [pos[q]], mode, distances=D, alpha_mode=solver)
            lines = ["rank,id,score\n"] + [f"{r},{ids[v]},{s!r}\n" for r, (v, s) in enumerate(ranked, 1)]
            files[f"{mode}/query_{q}.csv"] = "".join(lines)
    publish(args.out, files)
    print(f"ranked {len(queries)} quer{'y' if len(queries) == 1 else 'ies'} "
          f"against {len(ids)} gallery items ({', '.join(modes)})")
    return EXIT_OK


def cmd_bench(args):
    sizes = _parse_ids(args.sizes) if args.sizes else list(BENCH_SIZES)
    if any(n < 100 for n in sizes):
        raise ValidationError("benchmark sizes must be at least 100")
    if args.instances <= 0:
        raise ValidationError("--instances must be positive")
    if not 0 < args.density <= 1:
        raise ValidationError("--density must lie in (0, 1]")

    def progress(r):
        print(f"n={r.n:5d} #{r.instance} full {r.time_full:8.3f}s fast {r.time_fast:8.4f}s "
              f"ratio {r.ratio:8.1f} gap {r.objective_gap:.2e}", file=sys.stderr)

    rows = run_speedup(sizes, args.instances, args.density, args.solver or "fast",
                       args.seed or 0, progress)
    text = rows_to_csv(rows)
    summary = summarize(rows)
    if args.out is not None:
        publish(args.out, {"speedup.csv": text,
                           "summary.json": json.dumps({str(k): v for k, v in summary.items()},
                                                      indent=2, sort_keys=True) + "\n"})
    else:
        sys.stdout.write(text)
    for n, s in summary.items():
        print(f"n={n}: median ratio {s['median_ratio']:.1f}, max objective gap "
              f"{s['max_objective_gap']:.1e}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON configuration file")
    p.add_argument("--seed", type=int, default=d(None), help="random seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=d(None), help="worker threads (1 = serial)")
    p.add_argument("--solver", choices=("exact", "fast"), default=d(None),
                   help="alpha bound: spectral (exact) or max-degree (fast)")
    p.add_argument("--out", default=d(None), help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="cdstrack", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic multi-camera dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", parents=[common], help="run the three tracking layers and refinement")
    p.add_argument("dataset", nargs="?", help="directory with detections.csv, features.bin, topology.json")
    p.add_argument("--detections")
    p.add_argument("--features")
    p.add_argument("--topology")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", parents=[common], help="identity metrics of predictions against truth")
    p.add_argument("predictions")
    p.add_argument("truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reid", parents=[common], help="rank gallery items for each query")
    p.add_argument("gallery", help="features file (.bin with .hdr sidecar, or .csv with ids)")
    p.add_argument("--queries", help="comma-separated gallery ids (default: all)")
    p.add_argument("--mode", choices=("membership", "distance", "both"), default="membership")
    p.add_argument("--gamma", type=float, help="kernel width (default: inverse median distance)")
    p.set_defaults(func=cmd_reid)

    p = sub.add_parser("bench", parents=[common], help="time fast vs full-graph constrained solves")
    p.add_argument("--sizes", help=f"comma-separated graph sizes (default {','.join(map(str, BENCH_SIZES))})")
    p.add_argument("--instances", type=int, default=3, help="random graphs per size")
    p.add_argument("--density", type=float, default=0.01)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_seed(args.seed)
        if args.jobs is not None and args.jobs <= 0:
            raise ValidationError("--jobs must be positive")
        return args.func(args)
    except ValidationError as exc:
        print(f"cdstrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"cdstrack {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line interface.

Subcommands: ``associate`` (track a sequence and write label files plus a run
manifest), ``evaluate`` (metric report for prediction vs ground-truth label
folders), ``synth`` (write a synthetic sequence with ground truth) and
``bench`` (registration timings and the Sinkhorn scaling exponent).

Exit status: 0 success, 1 internal error, 2 user or input error.
Set ``ICP4D_LOG`` (DEBUG, INFO, WARNING, ...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional


from . import __version__
from .assignment import CostWeights
from .bench import DEFAULT_SIZES, run_bench
from .errors import GeotrackError, IoError
from .geometry import Scan
from .icp import IcpConfig
from .io import (
    load_generic_sequence,
    load_kitti_sequence,
    load_label_dir,
    write_generic_sequence,
    write_labels,
)
from .metrics import EvalFrame, evaluate
from .static import StaticGateConfig
from .synthetic import generate_synthetic, make_scene
from .tracker import DbscanConfig, Tracker, TrackerConfig, default_threads, run_sequence

log = logging.getLogger("geotrack")

EXIT_OK, EXIT_INTERNAL, EXIT_USER = 0, 1, 2

# SemanticKITTI raw ids of thing classes, static and moving variants
KITTI_THINGS = (10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 252, 253, 254, 255, 256, 257, 258, 259)


class UserError(GeotrackError):
    """Bad flags, config values or inconsistent inputs."""


# ---------------------------------------------------------------- config


@dataclasses.dataclass
class Settings:
    """Every tunable, flat, with the shipped defaults."""

    tau_center: float = 0.1
    tau_cov: float = 0.1
    tau_dist: float = 0.1
    tau_iou: float = 0.2
    epsilon: float = 0.2
    max_iterations: int = 30
    correspondence: str = "sinkhorn"
    histogram_init: bool = True
    normalize_cost: bool = True
    mutual_filter: bool = True
    keep_best: bool = True
    subsample_limit: int = 1024
    matching: str = "greedy"
    gamma_t: float = 1.0
    gamma_r: float = 1.0
    gamma_s: float = 1.0
    w_mem: int = 3
    static_stage: bool = True
    dbscan: str = ""
    thing_classes: str = ",".join(str(c) for c in KITTI_THINGS)
    seed: int = 0

    def tracker_config(self, threads: int) -> TrackerConfig:
        dbscan = None
        if self.dbscan:
            eps, minpts = parse_dbscan(self.dbscan)
            dbscan = DbscanConfig(eps, minpts)
        things = tuple(int(c) for c in self.thing_classes.split(",") if c.strip()) if self.thing_classes else None
        icp = IcpConfig(
            max_iterations=self.max_iterations,
            correspondence_mode="nearest_neighbor" if self.correspondence in ("nn", "nearest_neighbor") else self.correspondence,
            epsilon=self.epsilon,
            tau_dist=self.tau_dist,
            tau_iou=self.tau_iou,
            use_histogram_init=self.histogram_init,
            normalize_cost=self.normalize_cost,
            mutual_filter=self.mutual_filter,
            keep_best=self.keep_best,
            subsample_limit=self.subsample_limit if self.subsample_limit > 0 else None,
            seed=self.seed,
        )
        return TrackerConfig(
            static=StaticGateConfig(self.tau_center, self.tau_cov),
            icp=icp,
            assignment=self.matching,
            cost_weights=CostWeights(self.gamma_t, self.gamma_r, self.gamma_s),
            w_mem=self.w_mem,
            dbscan=dbscan,
            thing_classes=things,
            enable_static_stage=self.static_stage,
            threads=threads,
        )


def parse_dbscan(text: str) -> tuple[float, int]:
    try:
        eps, minpts = text.split(",")
        return float(eps), int(minpts)
    except ValueError:
        raise UserError(f"--dbscan expects 'eps,minpts', got {text!r}") from None


def _coerce(field: dataclasses.Field, raw: str):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UserError(f"{field.name}: expected a boolean, got {raw!r}")
    try:
        return {"float": float, "int": int, "str": str}[kind](raw.strip())
    except ValueError:
        raise UserError(f"{field.name}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text: str, base: Optional[Settings] = None, source: str = "<config>") -> Settings:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    fields = {f.name: f for f in dataclasses.fields(Settings)}
    values = dataclasses.asdict(base or Settings())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise UserError(f"{source}:{lineno}: expected key = value")
        if key not in fields:
            raise UserError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(fields[key], raw)
    return Settings(**values)


def dump_config(settings: Settings) -> str:
    lines = ["# geotrack run configuration"]
    for f in dataclasses.fields(Settings):
        v = getattr(settings, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def load_settings(args) -> Settings:
    settings = Settings()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UserError(f"config file not found: {path}")
        settings = parse_config_text(path.read_text(encoding="utf-8"), settings, str(path))
    overrides = {}
    if getattr(args, "matching", None):
        overrides["matching"] = args.matching
    if getattr(args, "correspondence", None):
        overrides["correspondence"] = args.correspondence
    if getattr(args, "no_static_stage", False):
        overrides["static_stage"] = False
    if getattr(args, "no_bank", False):
        overrides["w_mem"] = 0
    if getattr(args, "dbscan", None):
        parse_dbscan(args.dbscan)
        overrides["dbscan"] = args.dbscan
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "thing_classes", None) is not None:
        overrides["thing_classes"] = args.thing_classes
    return dataclasses.replace(settings, **overrides)


# ---------------------------------------------------------------- helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(root: Path) -> dict:
    if root.is_file():
        return {root.name: _sha256(root)}
    return {str(p.relative_to(root)): _sha256(p) for p in sorted(root.rglob("*")) if p.is_file()}


def _write_json(path: Path, obj) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _standard_synth(seed: int, occlude: Optional[str]):
    occ = {}
    if occlude:
        try:
            body, frames = occlude.split(":")
            occ[int(body)] = [int(f) for f in frames.split(",")]
        except ValueError:
            raise UserError(f"--occlude expects 'body:f1,f2,...', got {occlude!r}") from None
    return generate_synthetic(make_scene(seed, occlusions=occ), seed)


def _load_input(args, settings: Settings) -> tuple[list[Scan], dict]:
    if args.format == "synth":
        scans, _ = _standard_synth(settings.seed, getattr(args, "occlude", None))
        return scans, {"synthetic_seed": settings.seed, "occlude": getattr(args, "occlude", None)}
    if not args.input:
        raise UserError("--input is required for this format")
    root = Path(args.input)
    if not root.exists():
        raise UserError(f"input not found: {root}")
    if args.format == "kitti":
        scans = load_kitti_sequence(root, args.labels)
        hashed = _input_hashes(root)
        if args.labels:
            hashed.update({f"labels/{k}": v for k, v in _input_hashes(Path(args.labels)).items()})
    else:
        scans = load_generic_sequence(root)
        hashed = _input_hashes(root)
    return scans, hashed


# --------------------------------------------------------------- commands


def cmd_associate(args) -> int:
    settings = load_settings(args)
    threads = args.threads or default_threads()
    cfg = settings.tracker_config(threads)
    out = Path(args.output)
    t0 = time.perf_counter()
    scans, inputs = _load_input(args, settings)
    t_load = time.perf_counter() - t0

    t0 = time.perf_counter()
    with Tracker(cfg) as tracker:
        ids = run_sequence(scans, cfg, tracker)
        stats = tracker.stats
    t_track = time.perf_counter() - t0

    t0 = time.perf_counter()
    for k, (scan, frame_ids) in enumerate(zip(scans, ids)):
        write_labels(scan, frame_ids, out / "labels" / f"{k:06d}.label")
    t_write = time.perf_counter() - t0

    count_keys = ("segments", "candidates", "static_matches", "dynamic_registrations", "dynamic_matches",
                  "bank_registrations", "bank_matches", "new_ids")
    totals = {k: int(sum(getattr(s, k) for s in stats)) for k in count_keys}
    manifest = {
        "command": "associate",
        "version": __version__,
        "format": args.format,
        "config": dataclasses.asdict(settings),
        "seed": settings.seed,
        "threads": threads,
        "inputs": inputs,
        "frames": len(scans),
        "tracks": int(max((int(i.max()) for i in ids if i.size), default=0)),
        "counts": totals,
        "per_frame": [{k: getattr(s, k) for k in ("frame",) + count_keys + ("bank_size",)} for s in stats],
        "timings": {
            "load_s": t_load,
            "track_s": t_track,
            "write_s": t_write,
            "static_s": float(sum(s.time_static for s in stats)),
            "dynamic_s": float(sum(s.time_dynamic for s in stats)),
            "bank_s": float(sum(s.time_bank for s in stats)),
        },
    }
    _write_json(out / "manifest.json", manifest)
    (out / "config.txt").write_text(dump_config(settings), encoding="utf-8")
    print(
        f"associated {len(scans)} frames: static {totals['static_matches']}, dynamic {totals['dynamic_matches']}, "
        f"bank {totals['bank_matches']}, new ids {totals['new_ids']} -> {out}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    settings = load_settings(args)
    gt = load_label_dir(args.gt)
    pred = load_label_dir(args.pred)
    if len(gt) != len(pred):
        raise UserError(f"{len(gt)} ground-truth frames but {len(pred)} prediction frames")
    frames = []
    for k, ((gs, gi), (ps, pi)) in enumerate(zip(gt, pred)):
        if gs.shape[0] != ps.shape[0]:
            raise UserError(f"frame {k}: {gs.shape[0]} ground-truth points but {ps.shape[0]} predicted")
        frames.append(EvalFrame(gs, gi, ps, pi))
    things = tuple(int(c) for c in settings.thing_classes.split(",") if c.strip()) or None
    report = evaluate(frames, thing_classes=things)
    if args.report == "structured":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        text = report.to_text()
    sys.stdout.write(text)
    if args.output:
        out = Path(args.output)
        _write_json(out / "report.json", report.to_dict())
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    scans, gts = _standard_synth(seed, args.occlude)
    out = Path(args.output)
    write_generic_sequence(scans, out / "scans")
    for k, (scan, gt) in enumerate(zip(scans, gts)):
        write_labels(scan, gt, out / "gt" / f"{k:06d}.label")
    print(f"wrote {len(scans)} synthetic frames to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    try:
        sizes = [int(s) for s in args.sizes.split(",")]
    except ValueError:
        raise UserError(f"--sizes expects integers, got {args.sizes!r}") from None
    for m in modes:
        if m not in ("sinkhorn", "nn"):
            raise UserError(f"unknown bench mode {m!r}")
    rows, exponent = run_bench(sizes, modes, seed=args.seed or 0)
    if args.report == "structured":
        payload = {"rows": [dataclasses.asdict(r) for r in rows], "sinkhorn_exponent": exponent}
        print(json.dumps(payload, indent=2))
    else:
        print(f"{'mode':<10}{'n':>6}{'register_ms':>14}{'per_iter_ms':>14}{'iters':>7}")
        for r in rows:
            print(f"{r.mode:<10}{r.n:>6}{r.seconds * 1e3:>14.3f}{r.per_iteration * 1e3:>14.4f}{r.iterations:>7}")
        if exponent is not None:
            print(f"sinkhorn per-iteration scaling exponent: {exponent:.3f}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _add_tracking_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--matching", choices=("greedy", "hungarian"))
    p.add_argument("--no-static-stage", action="store_true")
    p.add_argument("--no-bank", action="store_true", help="disable the memory bank (w_mem = 0)")
    p.add_argument("--correspondence", choices=("sinkhorn", "nn"))
    p.add_argument("--dbscan", metavar="EPS,MINPTS")
    p.add_argument("--thing-classes", metavar="C1,C2,...")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads (default: all cores; 1 = serial)")
    p.add_argument("--report", choices=("text", "structured"), default="text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geotrack", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("associate", help="assign temporally consistent instance ids")
    a.add_argument("--input", help="sequence folder (kitti or generic)")
    a.add_argument("--format", choices=("kitti", "generic", "synth"), default="kitti")
    a.add_argument("--labels", help="kitti prediction labels folder (default <input>/labels)")
    a.add_argument("--occlude", help="synth only: hide body B in frames F, as 'B:F1,F2'")
    a.add_argument("--output", required=True)
    _add_tracking_flags(a)
    a.set_defaults(func=cmd_associate)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("--gt", required=True, help="ground-truth label folder")
    e.add_argument("--pred", required=True, help="predicted label folder")
    e.add_argument("--output", help="folder for report.json / report.txt")
    e.add_argument("--input", help=argparse.SUPPRESS)
    _add_tracking_flags(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write a synthetic sequence with ground truth")
    s.add_argument("--output", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--occlude", help="hide body B in frames F, as 'B:F1,F2'")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="registration timings and Sinkhorn scaling")
    b.add_argument("--modes", default="sinkhorn,nn")
    b.add_argument("--sizes", default=",".join(str(n) for n in DEFAULT_SIZES))
    b.add_argument("--seed", type=int)
    b.add_argument("--report", choices=("text", "structured"), default="text")
    b.set_defaults(func=cmd_bench)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("ICP4D_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GeotrackError, ValueError, OverflowError) as exc:
        print(f"geotrack: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"geotrack: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

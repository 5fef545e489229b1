"""Command line entry points.

Subcommands: detect-groups, evaluate, sweep, synth, export-pairs. Every flag
can also be supplied through a JSON config file (--config); explicit flags win
over the file, which wins over built-in defaults. Exit codes: 0 success,
1 configuration or I/O problem, 2 remote classifier unreachable after retries.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, Optional

from .classifier import ENDPOINT_ENV_VAR, ClassifierEndpoint
from .errors import ConfigError, MingleError, RemoteUnavailableError
from .evaluation import EvalReport, SweepGrid, write_sweep_csv
from .geometry import ImageGeometry
from .grouping import AgreementWeights
from .pipeline import (
    BACKENDS,
    RunConfig,
    run_detect_groups,
    run_evaluate,
    run_export_pairs,
    run_sweep,
)
from .synth import SynthConfig, write_corpus

logger = logging.getLogger(__name__)

_GATE_NOTE = (
    "Candidate pairs are screened in two stages before classification: first "
    "the distance gate (--tau-d, normalized center distance in [0,1], i.e. "
    "pixel distance divided by the image diagonal), then the depth gate "
    "(--tau-z, absolute difference of median depth values in [0,255]). A pair "
    "is excluded as soon as one gate fails; only pairs passing both are sent "
    "to the classifier backend."
)

_BACKEND_DEFAULTS: Dict[str, object] = {
    "backend": "heuristic",
    "endpoint_url": None,
    "timeout": 30.0,
    "max_retries": 2,
    "max_inflight": 4,
    "heuristic_max_distance": 0.1,
    "heuristic_max_depth_diff": 20,
    "prompt_template": None,
    "pad_fraction": 0.1,
}

_FILTER_DEFAULTS: Dict[str, object] = {
    "tau_det": 0.5,
    "tau_d": 0.4,
    "tau_z": 80,
    "no_filter": False,
}

_WEIGHT_DEFAULTS: Dict[str, object] = {
    "w_yes": 1.0,
    "w_no": -1.0,
    "w_notsure": -1.0,
}

_COMMON_DEFAULTS: Dict[str, object] = {"jobs": 1, "seed": 0}


def _add(parser: argparse.ArgumentParser, *names, **kwargs) -> None:
    kwargs.setdefault("default", argparse.SUPPRESS)
    parser.add_argument(*names, **kwargs)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "--config", type=Path, metavar="JSON",
         help="JSON file with defaults for any flag of this subcommand "
              "(keys use underscores, e.g. \"tau_d\"); explicit flags win")
    _add(p, "--jobs", type=int, help="scenes processed in parallel (default 1)")
    _add(p, "--seed", type=int, help="seed for anything randomized (default 0)")


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "--backend", choices=BACKENDS,
         help="pairwise classifier: 'remote' HTTP service, geometric "
              "'heuristic', or ground-truth 'oracle' (default heuristic)")
    _add(p, "--endpoint-url",
         help=f"remote service base URL (or set {ENDPOINT_ENV_VAR})")
    _add(p, "--timeout", type=float, help="remote request timeout in seconds (default 30)")
    _add(p, "--max-retries", type=int,
         help="extra attempts per remote request after the first (default 2)")
    _add(p, "--max-inflight", type=int,
         help="cap on concurrent remote requests (default 4)")
    _add(p, "--heuristic-max-distance", type=float, metavar="FRAC",
         help="heuristic backend: max normalized center distance for a Yes (default 0.1)")
    _add(p, "--heuristic-max-depth-diff", type=int, metavar="LEVELS",
         help="heuristic backend: max median-depth difference for a Yes (default 20)")
    _add(p, "--prompt-template", type=Path, metavar="TXT",
         help="classifier prompt template with {z_a} {z_b} {z_diff} placeholders")
    _add(p, "--pad-fraction", type=float,
         help="padding added to each side of the pair's union box before "
              "cropping, as a fraction of the box dimension (default 0.1)")


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "--tau-det", type=float, metavar="CONF",
         help="drop detections with confidence strictly below this (default 0.5)")
    _add(p, "--tau-d", type=float, metavar="FRAC",
         help="distance gate: exclude pairs whose center distance, as a "
              "fraction of the image diagonal, exceeds this value; checked "
              "before the depth gate (default 0.4)")
    _add(p, "--tau-z", type=int, metavar="LEVELS",
         help="depth gate: exclude pairs whose median-depth difference "
              "exceeds this many 8-bit levels; checked after the distance "
              "gate (default 80)")
    _add(p, "--no-filter", action="store_true",
         help="skip both gates and classify every pair")


def _add_weight_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "--w-yes", type=float, help="agreement weight of a Yes pair (default 1.0)")
    _add(p, "--w-no", type=float, help="agreement weight of a No pair (default -1.0)")
    _add(p, "--w-notsure", type=float,
         help="agreement weight of a Not-sure pair (default -1.0)")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; reserve 2 for the remote backend."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mingle",
        description="Detect socially affiliated groups of people in street "
                    "scenes from person detections and a depth map, by "
                    "classifying person pairs and clustering the agreements.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser(
        "detect-groups",
        help="run the full pipeline over a manifest",
        description="Run the pipeline over every scene in the manifest and "
                    "write results.jsonl plus run_summary.json. " + _GATE_NOTE,
    )
    _add(p, "--manifest", type=Path, help="scene manifest (JSON lines)")
    _add(p, "--out-dir", type=Path, help="directory for results and summary")
    _add_backend_flags(p)
    _add_filter_flags(p)
    _add_weight_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_detect_groups)

    p = sub.add_parser(
        "evaluate",
        help="score a results file against an annotated manifest",
        description="Match predicted group boxes to ground-truth ones and "
                    "print precision/recall/F1 at the IoU threshold plus mean "
                    "IoU; also writes a JSON report.",
    )
    _add(p, "--manifest", type=Path, help="annotated scene manifest")
    _add(p, "--predictions", type=Path, help="results.jsonl from detect-groups")
    _add(p, "--iou-threshold", type=float,
         help="IoU needed for a match to count as a true positive (default 0.5)")
    _add(p, "--report", type=Path,
         help="where to write the JSON report (default: eval_report.json "
              "next to the predictions)")
    _add(p, "--config", type=Path, metavar="JSON", help="JSON config file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "sweep",
        help="score the corpus over a grid of gate thresholds",
        description="Classify every pair once with the gates disabled, then "
                    "re-derive and score the corpus at each grid point; "
                    "writes one CSV row per (tau_d, tau_z). " + _GATE_NOTE,
    )
    _add(p, "--manifest", type=Path, help="annotated scene manifest")
    _add(p, "--out", type=Path, help="CSV output path (default sweep.csv)")
    _add(p, "--distance-values", metavar="V,V,...",
         help="comma-separated tau_d grid (default 0.0,0.1,...,1.0)")
    _add(p, "--depth-values", metavar="V,V,...",
         help="comma-separated tau_z grid (default 0,20,...,240,255)")
    _add(p, "--tau-det", type=float, metavar="CONF",
         help="drop detections with confidence strictly below this (default 0.5)")
    _add(p, "--iou-threshold", type=float,
         help="true-positive IoU threshold for the scored metrics (default 0.5)")
    _add_backend_flags(p)
    _add_weight_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser(
        "synth",
        help="generate a synthetic corpus with known groups",
        description="Write a manifest plus RGB and depth PNGs with planted "
                    "social groups; group members stand close at similar "
                    "depth, everyone else far apart. Deterministic per seed.",
    )
    _add(p, "--out-dir", type=Path, help="corpus output directory")
    _add(p, "--n-scenes", type=int, help="number of scenes (default 200)")
    _add(p, "--seed", type=int, help="generation seed (default 7)")
    _add(p, "--width", type=int, help="image width in pixels (default 800)")
    _add(p, "--height", type=int, help="image height in pixels (default 600)")
    _add(p, "--min-persons", type=int, help="minimum persons per scene (default 4)")
    _add(p, "--max-persons", type=int, help="maximum persons per scene (default 12)")
    _add(p, "--singleton-rate", type=float,
         help="chance each placed entity is a loner instead of a group (default 0.3)")
    _add(p, "--config", type=Path, metavar="JSON",
         help="JSON config file; also accepts group_sizes, intra_spread, "
              "min_entity_separation, depth_jitter, flip_rate, notsure_rate")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "export-pairs",
        help="dump one record per classified person pair",
        description="Run the gates and the classifier, then write a JSON-lines "
                    "file with one pairwise judgment per record, e.g. to build "
                    "a pair-annotation corpus. " + _GATE_NOTE,
    )
    _add(p, "--manifest", type=Path, help="scene manifest (JSON lines)")
    _add(p, "--out", type=Path, help="output path (default pair_records.jsonl)")
    _add_backend_flags(p)
    _add_filter_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_export_pairs)

    return parser


def _load_config_file(path: Path) -> Dict[str, object]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj


def _merge(args: argparse.Namespace, defaults: Dict[str, object]) -> Dict[str, object]:
    """defaults < config file < explicit flags."""
    values = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        from_file = _load_config_file(Path(config_path))
        unknown = sorted(set(from_file) - set(defaults))
        if unknown:
            raise ConfigError(
                f"{config_path}: unknown config key(s): {', '.join(unknown)}"
            )
        values.update(from_file)
    for key in defaults:
        if hasattr(args, key):
            values[key] = getattr(args, key)
    return values


def _require(values: Dict[str, object], key: str, flag: str) -> None:
    if values.get(key) is None:
        raise ConfigError(f"{flag} is required (flag or config file)")


def _endpoint_from(values: Dict[str, object]) -> Optional[ClassifierEndpoint]:
    url = values["endpoint_url"] or os.environ.get(ENDPOINT_ENV_VAR)
    if not url:
        return None
    return ClassifierEndpoint(
        base_url=str(url),
        timeout=float(values["timeout"]),
        max_retries=int(values["max_retries"]),
        max_inflight=int(values["max_inflight"]),
    )


def _weights_from(values: Dict[str, object]) -> AgreementWeights:
    return AgreementWeights(
        w_yes=float(values["w_yes"]),
        w_no=float(values["w_no"]),
        w_notsure=float(values["w_notsure"]),
    )


def _run_config(values: Dict[str, object], out_dir: Path) -> RunConfig:
    return RunConfig(
        manifest=Path(values["manifest"]),
        out_dir=out_dir,
        backend=str(values["backend"]),
        tau_det=float(values.get("tau_det", 0.5)),
        tau_d=float(values.get("tau_d", 0.4)),
        tau_z=int(values.get("tau_z", 80)),
        no_filter=bool(values.get("no_filter", False)),
        pad_fraction=float(values["pad_fraction"]),
        weights=_weights_from(values) if "w_yes" in values else AgreementWeights(),
        prompt_template=values["prompt_template"],
        endpoint=_endpoint_from(values),
        heuristic_max_distance=float(values["heuristic_max_distance"]),
        heuristic_max_depth_diff=int(values["heuristic_max_depth_diff"]),
        iou_threshold=float(values.get("iou_threshold", 0.5)),
        jobs=int(values["jobs"]),
        seed=int(values["seed"]),
    )


def cmd_detect_groups(args: argparse.Namespace) -> int:
    defaults = {
        "manifest": None, "out_dir": None,
        **_BACKEND_DEFAULTS, **_FILTER_DEFAULTS, **_WEIGHT_DEFAULTS, **_COMMON_DEFAULTS,
    }
    values = _merge(args, defaults)
    _require(values, "manifest", "--manifest")
    _require(values, "out_dir", "--out-dir")
    cfg = _run_config(values, Path(values["out_dir"]))
    results_path, summary_path, summary = run_detect_groups(cfg)
    if summary.failed_scenes:
        print(
            f"warning: {len(summary.failed_scenes)} scene(s) failed: "
            + ", ".join(sorted(summary.failed_scenes)[:5])
            + ("..." if len(summary.failed_scenes) > 5 else ""),
            file=sys.stderr,
        )
    print(f"scenes        {summary.scenes_ok}/{summary.scenes_total}")
    print(f"persons kept  {summary.persons_kept}/{summary.persons_detected}")
    print(f"pairs         {summary.pairs_total} "
          f"(distance-gated {summary.filtered_distance}, "
          f"depth-gated {summary.filtered_depth}, "
          f"classified {summary.classified_pairs})")
    print(f"groups        {summary.groups_total}")
    print(f"results       {results_path}")
    print(f"summary       {summary_path}")
    return 0


def _print_report(report: EvalReport) -> None:
    print(f"scenes          {len(report.per_scene)}")
    print(f"gt groups       {report.n_gt}")
    print(f"pred groups     {report.n_pred}")
    print(f"matched         {report.n_matched}")
    print(f"true positives  {report.n_true_positive} (IoU >= {report.iou_threshold:g})")
    print(f"precision       {report.precision:.3f}")
    print(f"recall          {report.recall:.3f}")
    print(f"f1              {report.f1:.3f}")
    print(f"mIoU            {report.miou:.3f} (matched-only {report.miou_matched_only:.3f})")


def cmd_evaluate(args: argparse.Namespace) -> int:
    defaults = {"manifest": None, "predictions": None, "iou_threshold": 0.5, "report": None}
    values = _merge(args, defaults)
    _require(values, "manifest", "--manifest")
    _require(values, "predictions", "--predictions")
    predictions = Path(values["predictions"])
    report_path = (
        Path(values["report"]) if values["report"] is not None
        else predictions.parent / "eval_report.json"
    )
    report = run_evaluate(values["manifest"], predictions, float(values["iou_threshold"]))
    _print_report(report)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"report          {report_path}")
    return 0


def _parse_grid(values: Dict[str, object]) -> SweepGrid:
    kwargs = {}
    raw_d = values.get("distance_values")
    if raw_d:
        items = raw_d if isinstance(raw_d, (list, tuple)) else str(raw_d).split(",")
        kwargs["distance_values"] = tuple(float(v) for v in items)
    raw_z = values.get("depth_values")
    if raw_z:
        items = raw_z if isinstance(raw_z, (list, tuple)) else str(raw_z).split(",")
        kwargs["depth_values"] = tuple(int(v) for v in items)
    try:
        return SweepGrid(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad grid values: {exc}") from exc


def cmd_sweep(args: argparse.Namespace) -> int:
    defaults = {
        "manifest": None, "out": Path("sweep.csv"),
        "distance_values": None, "depth_values": None,
        "tau_det": 0.5, "iou_threshold": 0.5,
        **_BACKEND_DEFAULTS, **_WEIGHT_DEFAULTS, **_COMMON_DEFAULTS,
    }
    values = _merge(args, defaults)
    _require(values, "manifest", "--manifest")
    out = Path(values["out"])
    grid = _parse_grid(values)
    cfg = _run_config(values, out.parent)
    rows = run_sweep(cfg, grid)
    write_sweep_csv(rows, out)
    best = max(rows, key=lambda r: r.f1)
    print(f"wrote {len(rows)} rows to {out}")
    print(f"best f1 {best.f1:.3f} at tau_d={best.tau_d:g} tau_z={best.tau_z} "
          f"(miou {best.miou:.3f}, {best.classified_pairs} classified pairs)")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    defaults = {
        "out_dir": None, "n_scenes": 200, "seed": 7, "width": 800, "height": 600,
        "min_persons": 4, "max_persons": 12, "singleton_rate": 0.3,
        "group_sizes": None, "intra_spread": 0.06, "min_entity_separation": 0.22,
        "depth_jitter": 6, "flip_rate": 0.0, "notsure_rate": 0.0,
    }
    values = _merge(args, defaults)
    _require(values, "out_dir", "--out-dir")
    kwargs = dict(
        n_scenes=int(values["n_scenes"]),
        image=ImageGeometry(width=int(values["width"]), height=int(values["height"])),
        min_persons=int(values["min_persons"]),
        max_persons=int(values["max_persons"]),
        singleton_rate=float(values["singleton_rate"]),
        flip_rate=float(values["flip_rate"]),
        notsure_rate=float(values["notsure_rate"]),
        seed=int(values["seed"]),
        intra_spread=float(values["intra_spread"]),
        min_entity_separation=float(values["min_entity_separation"]),
        depth_jitter=int(values["depth_jitter"]),
    )
    if values["group_sizes"] is not None:
        kwargs["group_sizes"] = tuple(
            (int(s), float(p)) for s, p in values["group_sizes"]
        )
    manifest = write_corpus(SynthConfig(**kwargs), Path(values["out_dir"]))
    print(f"manifest      {manifest}")
    return 0


def cmd_export_pairs(args: argparse.Namespace) -> int:
    defaults = {
        "manifest": None, "out": Path("pair_records.jsonl"),
        **_BACKEND_DEFAULTS, **_FILTER_DEFAULTS, **_COMMON_DEFAULTS,
    }
    values = _merge(args, defaults)
    _require(values, "manifest", "--manifest")
    out = Path(values["out"])
    cfg = _run_config(values, out.parent)
    count = run_export_pairs(cfg, out)
    print(f"wrote {count} pair record(s) to {out}")
    return 0


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except RemoteUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MingleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

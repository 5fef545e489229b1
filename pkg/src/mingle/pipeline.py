"""End-to-end runs: manifest in, group regions and run summary out.

This module wires the stages together — load assets, drop low-confidence
detections, attach median depths, prune and classify pairs, cluster, extract
group boxes — and aggregates the bookkeeping the CLI reports. Scene failures
are isolated during corpus detection (logged, run continues); an unreachable
remote classifier always aborts the run.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .classifier import (
    ClassifierBackend,
    ClassifierEndpoint,
    HeuristicBackend,
    OracleBackend,
    RemoteBackend,
    build_pair_query,
    default_prompt_template,
    load_prompt_template,
    load_rgb,
)
from .depth import DepthMap, load_depth_map, median_depth
from .errors import ConfigError, MingleError, RemoteUnavailableError
from .evaluation import EvalReport, SweepGrid, SweepRow, score, sweep
from .grouping import AgreementWeights, GroupRegion, extract_groups, greedy_cluster
from .pair_filter import FilterParams, QueryBuilder, RelationMatrix, build_relation_matrix
from .scene_io import (
    Scene,
    export_pair_records,
    filter_detections,
    load_results,
    load_scenes,
    write_results,
)

logger = logging.getLogger(__name__)

BACKENDS = ("oracle", "heuristic", "remote")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs besides the scene assets themselves."""

    manifest: Path
    out_dir: Path
    backend: str = "heuristic"
    tau_det: float = 0.5
    tau_d: float = 0.4
    tau_z: int = 80
    no_filter: bool = False
    pad_fraction: float = 0.1
    weights: AgreementWeights = AgreementWeights()
    prompt_template: Optional[Path] = None
    endpoint: Optional[ClassifierEndpoint] = None
    heuristic_max_distance: float = 0.1
    heuristic_max_depth_diff: int = 20
    iou_threshold: float = 0.5
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "manifest", Path(self.manifest))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.prompt_template is not None:
            object.__setattr__(self, "prompt_template", Path(self.prompt_template))
        if self.backend not in BACKENDS:
            raise ConfigError(
                f"unknown backend {self.backend!r}, expected one of {', '.join(BACKENDS)}"
            )
        if not 0.0 <= self.tau_det <= 1.0:
            raise ConfigError(f"tau_det must be in [0, 1], got {self.tau_det}")
        FilterParams(tau_d=self.tau_d, tau_z=self.tau_z)  # range check
        if self.pad_fraction < 0.0:
            raise ConfigError(f"pad_fraction must be >= 0, got {self.pad_fraction}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError(
                f"iou_threshold must be in (0, 1], got {self.iou_threshold}"
            )
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.backend == "remote" and self.endpoint is None:
            raise ConfigError(
                "remote backend needs an endpoint (--endpoint-url or the "
                "MINGLE_CLASSIFIER_URL environment variable)"
            )

    @property
    def filter_params(self) -> Optional[FilterParams]:
        return None if self.no_filter else FilterParams(tau_d=self.tau_d, tau_z=self.tau_z)


@dataclass
class RunSummary:
    """Counters aggregated over the successfully processed scenes."""

    scenes_total: int = 0
    scenes_ok: int = 0
    failed_scenes: List[str] = field(default_factory=list)
    persons_detected: int = 0
    persons_kept: int = 0
    pairs_total: int = 0
    filtered_distance: int = 0
    filtered_depth: int = 0
    classified_pairs: int = 0
    parse_fallbacks: int = 0
    remote_attempts: int = 0
    groups_total: int = 0
    config: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "scenes_total": self.scenes_total,
            "scenes_ok": self.scenes_ok,
            "failed_scenes": sorted(self.failed_scenes),
            "persons_detected": self.persons_detected,
            "persons_kept": self.persons_kept,
            "pairs_total": self.pairs_total,
            "filtered_distance": self.filtered_distance,
            "filtered_depth": self.filtered_depth,
            "classified_pairs": self.classified_pairs,
            "parse_fallbacks": self.parse_fallbacks,
            "remote_attempts": self.remote_attempts,
            "groups_total": self.groups_total,
            "config": self.config,
        }


def _config_echo(cfg: RunConfig) -> Dict[str, object]:
    return {
        "backend": cfg.backend,
        "tau_det": cfg.tau_det,
        "tau_d": None if cfg.no_filter else cfg.tau_d,
        "tau_z": None if cfg.no_filter else cfg.tau_z,
        "pad_fraction": cfg.pad_fraction,
        "weights": [cfg.weights.w_yes, cfg.weights.w_no, cfg.weights.w_notsure],
        "seed": cfg.seed,
    }


def resolve_template(cfg: RunConfig) -> str:
    if cfg.prompt_template is not None:
        return load_prompt_template(cfg.prompt_template)
    return default_prompt_template()


BackendFactory = Callable[[Scene], ClassifierBackend]

_USE_CONFIG = object()  # sentinel: "take filter params from the RunConfig"


def make_backend_factory(cfg: RunConfig) -> Tuple[BackendFactory, Optional[RemoteBackend]]:
    """Per-scene backend constructor; the remote client is shared across scenes
    so its in-flight cap holds globally."""
    if cfg.backend == "oracle":
        return (lambda scene: OracleBackend(scene)), None
    if cfg.backend == "heuristic":
        return (
            lambda scene: HeuristicBackend(
                scene, cfg.heuristic_max_distance, cfg.heuristic_max_depth_diff
            )
        ), None
    assert cfg.endpoint is not None
    remote = RemoteBackend(cfg.endpoint)
    return (lambda scene: remote), remote


def prepare_scene(scene: Scene, depth: DepthMap, tau_det: float) -> Scene:
    """Confidence-filter detections and attach median depths from the map."""
    kept = filter_detections(scene.persons, tau_det)
    kept = [replace(p, median_depth=median_depth(depth, p.bbox)) for p in kept]
    return replace(scene, persons=tuple(kept))


def make_query_builder(
    scene: Scene,
    rgb: np.ndarray,
    depth: DepthMap,
    pad_fraction: float,
    template: str,
) -> QueryBuilder:
    def build(a: int, b: int):
        return build_pair_query(
            scene, rgb, depth, a, b, pad_fraction=pad_fraction, template=template
        )

    return build


@dataclass
class SceneResult:
    scene: Scene  # post-filter persons with median depths attached
    matrix: RelationMatrix
    groups: List[GroupRegion]


def detect_scene(
    scene: Scene,
    cfg: RunConfig,
    backend_factory: BackendFactory,
    template: str,
    params=_USE_CONFIG,
) -> SceneResult:
    """Run the full per-scene pipeline: assets, depths, pairs, clusters, boxes."""
    if params is _USE_CONFIG:
        params = cfg.filter_params
    rgb = load_rgb(scene.rgb_path, scene.image)
    depth = load_depth_map(scene.depth_path, scene.image)
    eff = prepare_scene(scene, depth, cfg.tau_det)
    builder = make_query_builder(eff, rgb, depth, cfg.pad_fraction, template)
    matrix = build_relation_matrix(eff, params, backend_factory(eff), builder)
    partition = greedy_cluster(matrix, cfg.weights)
    groups = extract_groups(partition, eff.persons)
    return SceneResult(scene=eff, matrix=matrix, groups=groups)


@dataclass
class CorpusResult:
    scenes: List[Scene]  # effective scenes of the successful runs, input order
    matrices: Dict[str, RelationMatrix]
    groups: Dict[str, List[GroupRegion]]
    summary: RunSummary


def detect_corpus(
    scenes: Sequence[Scene],
    cfg: RunConfig,
    *,
    params=_USE_CONFIG,
    isolate_failures: bool = True,
) -> CorpusResult:
    """Detect groups over a corpus with up to ``cfg.jobs`` scenes in flight.

    With ``isolate_failures`` a broken scene is logged and skipped; a remote
    classifier that stays unreachable is fatal either way.
    """
    if params is _USE_CONFIG:
        params = cfg.filter_params
    backend_factory, remote = make_backend_factory(cfg)
    template = resolve_template(cfg)
    summary = RunSummary(scenes_total=len(scenes), config=_config_echo(cfg))

    def work(scene: Scene) -> SceneResult:
        return detect_scene(scene, cfg, backend_factory, template, params)

    outcomes: List[Union[SceneResult, Exception]] = []
    if cfg.jobs > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(work, scene) for scene in scenes]
            for scene, future in zip(scenes, futures):
                try:
                    outcomes.append(future.result())
                except Exception as exc:  # sorted out below
                    outcomes.append(exc)
    else:
        for scene in scenes:
            try:
                outcomes.append(work(scene))
            except Exception as exc:
                outcomes.append(exc)

    result = CorpusResult(scenes=[], matrices={}, groups={}, summary=summary)
    for scene, outcome in zip(scenes, outcomes):
        if isinstance(outcome, RemoteUnavailableError):
            raise outcome
        if isinstance(outcome, Exception):
            if not isolate_failures or not isinstance(outcome, (MingleError, OSError)):
                raise outcome
            logger.error("scene %s failed: %s", scene.scene_id, outcome)
            summary.failed_scenes.append(scene.scene_id)
            continue
        summary.scenes_ok += 1
        summary.persons_detected += len(scene.persons)
        eff = outcome.scene
        summary.persons_kept += len(eff.persons)
        n = len(eff.persons)
        summary.pairs_total += n * (n - 1) // 2
        stats = outcome.matrix.stats
        summary.filtered_distance += stats.filtered_distance
        summary.filtered_depth += stats.filtered_depth
        summary.classified_pairs += stats.classified
        summary.groups_total += len(outcome.groups)
        result.scenes.append(eff)
        result.matrices[eff.scene_id] = outcome.matrix
        result.groups[eff.scene_id] = outcome.groups
    if remote is not None:
        summary.parse_fallbacks = remote.parse_fallbacks
        summary.remote_attempts = remote.attempts_made
    return result


def run_detect_groups(cfg: RunConfig) -> Tuple[Path, Path, RunSummary]:
    """Manifest -> results.jsonl + run_summary.json under cfg.out_dir."""
    scenes = load_scenes(cfg.manifest)
    result = detect_corpus(scenes, cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    results_path = cfg.out_dir / "results.jsonl"
    write_results(result.scenes, result.groups, results_path)
    summary_path = cfg.out_dir / "run_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(result.summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(
        "%d/%d scene(s) ok, %d group(s), results at %s",
        result.summary.scenes_ok,
        result.summary.scenes_total,
        result.summary.groups_total,
        results_path,
    )
    return results_path, summary_path, result.summary


def run_evaluate(
    manifest: Union[str, Path],
    predictions_path: Union[str, Path],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Score a results file against an annotated manifest (ids must align)."""
    scenes = load_scenes(manifest)
    predictions = load_results(predictions_path)
    manifest_ids = {s.scene_id for s in scenes}
    missing = sorted(manifest_ids - set(predictions))
    unknown = sorted(set(predictions) - manifest_ids)
    if missing or unknown:
        parts = []
        if missing:
            parts.append(f"missing from predictions: {missing}")
        if unknown:
            parts.append(f"not in manifest: {unknown}")
        raise ConfigError("scene ids do not align; " + "; ".join(parts))
    return score(predictions, scenes, iou_threshold)


def run_sweep(cfg: RunConfig, grid: SweepGrid) -> List[SweepRow]:
    """Classify every pair once (unfiltered), then score the whole grid."""
    scenes = load_scenes(cfg.manifest)
    corpus = detect_corpus(scenes, cfg, params=None, isolate_failures=False)
    return sweep(
        corpus.scenes,
        None,
        grid,
        cfg.weights,
        matrices=corpus.matrices,
        iou_threshold=cfg.iou_threshold,
    )


def run_export_pairs(cfg: RunConfig, out_path: Union[str, Path]) -> int:
    """Write one annotation record per classified pair; returns the count."""
    scenes = load_scenes(cfg.manifest)
    corpus = detect_corpus(scenes, cfg, isolate_failures=False)
    return export_pair_records(corpus.scenes, corpus.matrices, out_path)

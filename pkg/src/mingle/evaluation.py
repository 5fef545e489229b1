"""Scoring of predicted group regions against annotated ones.

Predictions and ground truth are matched greedily by descending IoU
(one-to-one), then counted into micro-averaged precision/recall/F1 at a fixed
IoU threshold plus a mean-IoU quality number. ``sweep`` re-scores a corpus
over a grid of filter thresholds, reusing cached judgments so the classifier
runs only once per pair.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Callable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

from .classifier import ClassifierBackend
from .errors import ValidationError
from .geometry import iou
from .grouping import AgreementWeights, GroupRegion, extract_groups, greedy_cluster
from .pair_filter import (
    FilterParams,
    QueryBuilder,
    RelationMatrix,
    build_relation_matrix,
    refilter_matrix,
)
from .scene_io import GroupAnnotation, Scene

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5


def _default_distance_values() -> Tuple[float, ...]:
    return tuple(round(k / 10, 1) for k in range(11))


def _default_depth_values() -> Tuple[int, ...]:
    return tuple(range(0, 241, 20)) + (255,)


@dataclass(frozen=True)
class SweepGrid:
    """Threshold grid: normalized center distances x absolute depth gaps."""

    distance_values: Tuple[float, ...] = field(default_factory=_default_distance_values)
    depth_values: Tuple[int, ...] = field(default_factory=_default_depth_values)

    def __post_init__(self):
        object.__setattr__(self, "distance_values", tuple(self.distance_values))
        object.__setattr__(self, "depth_values", tuple(self.depth_values))
        if not self.distance_values or not self.depth_values:
            raise ValidationError("sweep grid axes must be non-empty")
        if any(not 0.0 <= v <= 1.0 for v in self.distance_values):
            raise ValidationError(f"distance values outside [0, 1]: {self.distance_values}")
        if any(not 0 <= v <= 255 for v in self.depth_values):
            raise ValidationError(f"depth values outside [0, 255]: {self.depth_values}")
        for axis in (self.distance_values, self.depth_values):
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValidationError(f"grid axis not strictly ascending: {axis}")

    def __len__(self) -> int:
        return len(self.distance_values) * len(self.depth_values)


class Match(NamedTuple):
    pred_idx: int
    gt_idx: int
    iou: float


@dataclass(frozen=True)
class SceneScore:
    """Counts and metrics for one scene (same conventions as EvalReport)."""

    scene_id: str
    n_pred: int
    n_gt: int
    n_matched: int
    n_true_positive: int
    iou_sum: float
    miou: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    """Corpus metrics, micro-averaged over per-scene counts.

    ``miou`` is normalized by the number of ground-truth groups (an unmatched
    GT group contributes 0); ``miou_matched_only`` averages over matched pairs
    only and is carried along for comparison.
    """

    miou: float
    precision: float
    recall: float
    f1: float
    n_pred: int
    n_gt: int
    n_matched: int
    n_true_positive: int
    miou_matched_only: float
    iou_threshold: float
    per_scene: Tuple[SceneScore, ...]


def match_groups(
    pred: Sequence[GroupRegion], gt: Sequence[GroupAnnotation]
) -> List[Match]:
    """One-to-one greedy matching by descending IoU.

    Candidate (pred, gt) pairs with positive IoU are visited from highest IoU
    down (ties: smaller gt index, then smaller pred index) and accepted when
    neither side is matched yet.
    """
    candidates = []
    for gi, g in enumerate(gt):
        for pi, p in enumerate(pred):
            overlap = iou(p.bbox, g.bbox)
            if overlap > 0.0:
                candidates.append(Match(pi, gi, overlap))
    candidates.sort(key=lambda m: (-m.iou, m.gt_idx, m.pred_idx))
    matched_pred: set = set()
    matched_gt: set = set()
    matches: List[Match] = []
    for m in candidates:
        if m.pred_idx in matched_pred or m.gt_idx in matched_gt:
            continue
        matched_pred.add(m.pred_idx)
        matched_gt.add(m.gt_idx)
        matches.append(m)
    return matches


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def score_scene(
    scene_id: str,
    pred: Sequence[GroupRegion],
    gt: Sequence[GroupAnnotation],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> SceneScore:
    """Match and count a single scene."""
    matches = match_groups(pred, gt)
    tp = sum(1 for m in matches if m.iou >= iou_threshold)
    iou_sum = sum(m.iou for m in matches)
    n_pred, n_gt = len(pred), len(gt)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return SceneScore(
        scene_id=scene_id,
        n_pred=n_pred,
        n_gt=n_gt,
        n_matched=len(matches),
        n_true_positive=tp,
        iou_sum=iou_sum,
        miou=iou_sum / n_gt if n_gt else 0.0,
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
    )


def score(
    predictions: Mapping[str, Sequence[GroupRegion]],
    scenes: Sequence[Scene],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> EvalReport:
    """Micro-averaged corpus metrics.

    ``predictions`` maps scene id to predicted regions; scenes absent from the
    mapping count as zero predictions. Every scene must carry ground-truth
    groups.
    """
    seen: set = set()
    per_scene: List[SceneScore] = []
    for scene in scenes:
        if scene.scene_id in seen:
            raise ValidationError(f"duplicate scene id {scene.scene_id!r}")
        seen.add(scene.scene_id)
        if scene.gt_groups is None:
            raise ValidationError(
                f"scene {scene.scene_id!r} has no ground-truth groups to score against"
            )
        per_scene.append(
            score_scene(
                scene.scene_id,
                predictions.get(scene.scene_id, ()),
                scene.gt_groups,
                iou_threshold,
            )
        )
    unknown = sorted(set(predictions) - seen)
    if unknown:
        logger.warning(
            "ignoring predictions for %d scene(s) not in the corpus: %s",
            len(unknown),
            ", ".join(unknown[:5]) + ("..." if len(unknown) > 5 else ""),
        )

    n_pred = sum(s.n_pred for s in per_scene)
    n_gt = sum(s.n_gt for s in per_scene)
    n_matched = sum(s.n_matched for s in per_scene)
    tp = sum(s.n_true_positive for s in per_scene)
    iou_sum = sum(s.iou_sum for s in per_scene)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    miou = iou_sum / n_gt if n_gt else 0.0
    miou_matched = iou_sum / n_matched if n_matched else 0.0
    logger.debug(
        "mIoU %.4f over %d GT groups (matched-only mean %.4f over %d matches)",
        miou,
        n_gt,
        miou_matched,
        n_matched,
    )
    return EvalReport(
        miou=miou,
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        n_pred=n_pred,
        n_gt=n_gt,
        n_matched=n_matched,
        n_true_positive=tp,
        miou_matched_only=miou_matched,
        iou_threshold=iou_threshold,
        per_scene=tuple(per_scene),
    )


@dataclass(frozen=True)
class SweepRow:
    tau_d: float
    tau_z: int
    miou: float
    f1: float
    precision: float
    recall: float
    classified_pairs: int


def sweep(
    scenes: Sequence[Scene],
    backend: Optional[ClassifierBackend],
    grid: SweepGrid,
    weights: AgreementWeights = AgreementWeights(),
    *,
    query_builder_factory: Optional[Callable[[Scene], QueryBuilder]] = None,
    matrices: Optional[Mapping[str, RelationMatrix]] = None,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> List[SweepRow]:
    """Score the corpus at every grid point, classifying each pair only once.

    The unfiltered relation matrix per scene is either taken from
    ``matrices`` or built here (which needs ``backend`` plus a
    ``query_builder_factory`` producing a query builder per scene). Each grid
    point then overwrites the pairs its thresholds exclude with No and
    re-clusters — equivalent to a fresh run because excluded pairs never reach
    the classifier anyway.
    """
    if matrices is None:
        if backend is None or query_builder_factory is None:
            raise ValidationError(
                "sweep needs either cached matrices or a backend with a query builder factory"
            )
        logger.info("building unfiltered relation matrices for %d scene(s)", len(scenes))
        matrices = {
            scene.scene_id: build_relation_matrix(
                scene, None, backend, query_builder_factory(scene)
            )
            for scene in scenes
        }
    else:
        missing = [s.scene_id for s in scenes if s.scene_id not in matrices]
        if missing:
            raise ValidationError(f"no cached matrix for scene(s): {missing}")

    rows: List[SweepRow] = []
    for tau_d in grid.distance_values:
        for tau_z in grid.depth_values:
            params = FilterParams(tau_d=tau_d, tau_z=tau_z)
            predictions = {}
            classified = 0
            for scene in scenes:
                refiltered = refilter_matrix(scene, matrices[scene.scene_id], params)
                classified += refiltered.stats.classified
                partition = greedy_cluster(refiltered, weights)
                predictions[scene.scene_id] = extract_groups(partition, scene.persons)
            report = score(predictions, scenes, iou_threshold)
            rows.append(
                SweepRow(
                    tau_d=tau_d,
                    tau_z=tau_z,
                    miou=report.miou,
                    f1=report.f1,
                    precision=report.precision,
                    recall=report.recall,
                    classified_pairs=classified,
                )
            )
            logger.debug(
                "sweep tau_d=%.2f tau_z=%d: f1=%.4f miou=%.4f classified=%d",
                tau_d,
                tau_z,
                rows[-1].f1,
                rows[-1].miou,
                classified,
            )
    return rows


SWEEP_CSV_HEADER = ("tau_d", "tau_z", "miou", "f1", "precision", "recall", "classified_pairs")


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    """Write sweep rows as CSV with a fixed header and column order."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    f"{row.tau_d:g}",
                    row.tau_z,
                    f"{row.miou:.6f}",
                    f"{row.f1:.6f}",
                    f"{row.precision:.6f}",
                    f"{row.recall:.6f}",
                    row.classified_pairs,
                ]
            )


def read_sweep_csv(path) -> List[SweepRow]:
    """Parse a CSV produced by :func:`write_sweep_csv`."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SWEEP_CSV_HEADER:
            raise ValidationError(
                f"{path}: unexpected sweep CSV header {reader.fieldnames}"
            )
        return [
            SweepRow(
                tau_d=float(rec["tau_d"]),
                tau_z=int(rec["tau_z"]),
                miou=float(rec["miou"]),
                f1=float(rec["f1"]),
                precision=float(rec["precision"]),
                recall=float(rec["recall"]),
                classified_pairs=int(rec["classified_pairs"]),
            )
            for rec in reader
        ]

"""Scene manifests, detections, annotations, and pipeline outputs (JSON lines).

One scene or record per line so 100K-scale corpora stream without loading
everything into memory. All paths inside a manifest are relative to the
manifest's directory. Emitted files are byte-identical across runs given
identical inputs: records are sorted by scene id and serialized with sorted
keys and fixed separators.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import (
    TYPE_CHECKING,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from .classifier import Judgment
from .errors import ParseError, ValidationError
from .geometry import BBox, ImageGeometry

if TYPE_CHECKING:
    from .grouping import GroupRegion
    from .pair_filter import RelationMatrix

logger = logging.getLogger(__name__)

ANNOTATOR_SOURCES = ("human", "pipeline")


@dataclass(frozen=True)
class PersonDetection:
    """One detected person; ``median_depth`` is filled by the depth stage."""

    person_id: int
    bbox: BBox
    confidence: float
    median_depth: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"confidence must be in [0, 1], got {self.confidence} "
                f"for person {self.person_id}"
            )
        if self.median_depth is not None and not 0 <= self.median_depth <= 255:
            raise ValidationError(
                f"median_depth must be in [0, 255], got {self.median_depth}"
            )


@dataclass(frozen=True)
class GroupAnnotation:
    """A ground-truth group; ``member_ids`` may be None for box-only annotations."""

    group_id: int
    bbox: BBox
    member_ids: Optional[frozenset] = None

    def __post_init__(self):
        if self.member_ids is not None and len(self.member_ids) < 2:
            raise ValidationError(
                f"group {self.group_id} must have >= 2 members, "
                f"got {sorted(self.member_ids)}"
            )


@dataclass(frozen=True)
class Scene:
    """One street-view scene: image geometry, asset paths, detections, optional GT."""

    scene_id: str
    image: ImageGeometry
    rgb_path: Path
    depth_path: Path
    persons: Tuple[PersonDetection, ...]
    gt_groups: Optional[Tuple[GroupAnnotation, ...]] = None


@dataclass(frozen=True)
class PairAnnotationRecord:
    """One pairwise judgment in the annotation-export format (canonical a < b)."""

    scene_id: str
    person_a: int
    person_b: int
    label: Judgment
    annotator_source: str = "pipeline"

    def __post_init__(self):
        if not self.person_a < self.person_b:
            raise ValidationError(
                f"pair must be canonical (person_a < person_b), got "
                f"({self.person_a}, {self.person_b})"
            )
        if self.annotator_source not in ANNOTATOR_SOURCES:
            raise ValidationError(
                f"annotator_source must be one of {ANNOTATOR_SOURCES}, "
                f"got {self.annotator_source!r}"
            )


def _scene_from_dict(obj: dict, base_dir: Path) -> Scene:
    try:
        scene_id = obj["scene_id"]
        image = ImageGeometry(width=int(obj["width"]), height=int(obj["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad scene header: {exc}") from exc
    if not isinstance(scene_id, str) or not scene_id:
        raise ValidationError(f"scene_id must be a non-empty string, got {scene_id!r}")

    def fail(msg: str) -> ValidationError:
        return ValidationError(f"scene {scene_id}: {msg}")

    try:
        rgb_path = base_dir / obj["rgb_path"]
        depth_path = base_dir / obj["depth_path"]
    except (KeyError, TypeError) as exc:
        raise fail(f"missing asset path: {exc}") from exc

    persons: List[PersonDetection] = []
    seen_ids = set()
    for entry in obj.get("persons", []):
        try:
            pid = int(entry["person_id"])
            bbox = BBox.from_sequence(entry["bbox"])
            confidence = float(entry["confidence"])
        except ValidationError as exc:
            raise fail(str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise fail(f"bad person entry {entry!r}: {exc}") from exc
        if pid in seen_ids:
            raise fail(f"duplicate person_id {pid}")
        seen_ids.add(pid)
        if bbox.x2 > image.width or bbox.y2 > image.height:
            raise fail(
                f"person {pid} box {bbox.as_list()} exceeds image "
                f"{image.width}x{image.height}"
            )
        try:
            persons.append(PersonDetection(person_id=pid, bbox=bbox, confidence=confidence))
        except ValidationError as exc:
            raise fail(str(exc)) from exc

    gt_raw = obj.get("gt_groups")
    gt_groups: Optional[Tuple[GroupAnnotation, ...]] = None
    if gt_raw is not None:
        groups: List[GroupAnnotation] = []
        for entry in gt_raw:
            try:
                gid = int(entry["group_id"])
                bbox = BBox.from_sequence(entry["bbox"])
                raw_members = entry.get("member_ids")
            except ValidationError as exc:
                raise fail(str(exc)) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise fail(f"bad group entry {entry!r}: {exc}") from exc
            members = None if raw_members is None else frozenset(int(m) for m in raw_members)
            if members is not None and not members <= seen_ids:
                raise fail(
                    f"group {gid} references unknown persons {sorted(members - seen_ids)}"
                )
            try:
                groups.append(GroupAnnotation(group_id=gid, bbox=bbox, member_ids=members))
            except ValidationError as exc:
                raise fail(str(exc)) from exc
        gt_groups = tuple(groups)

    return Scene(
        scene_id=scene_id,
        image=image,
        rgb_path=rgb_path,
        depth_path=depth_path,
        persons=tuple(persons),
        gt_groups=gt_groups,
    )


def scene_to_dict(scene: Scene, base_dir: Optional[Path] = None) -> dict:
    """Inverse of the manifest line parser; paths are made relative to base_dir."""

    def rel(p: Path) -> str:
        return str(p.relative_to(base_dir)) if base_dir is not None else str(p)

    obj: dict = {
        "scene_id": scene.scene_id,
        "width": scene.image.width,
        "height": scene.image.height,
        "rgb_path": rel(scene.rgb_path),
        "depth_path": rel(scene.depth_path),
        "persons": [
            {
                "person_id": p.person_id,
                "bbox": p.bbox.as_list(),
                "confidence": p.confidence,
            }
            for p in scene.persons
        ],
    }
    if scene.gt_groups is not None:
        obj["gt_groups"] = [
            {
                "group_id": g.group_id,
                "member_ids": sorted(g.member_ids) if g.member_ids is not None else None,
                "bbox": g.bbox.as_list(),
            }
            for g in scene.gt_groups
        ]
    return obj


def iter_scenes(manifest: Union[str, Path]) -> Iterator[Scene]:
    """Stream scenes from a JSON-lines manifest, validating each line."""
    manifest = Path(manifest)
    base_dir = manifest.parent
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{manifest}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{manifest}:{lineno}: expected an object")
            try:
                yield _scene_from_dict(obj, base_dir)
            except ValidationError as exc:
                raise ValidationError(f"{manifest}:{lineno}: {exc}") from exc


def load_scenes(manifest: Union[str, Path]) -> List[Scene]:
    """Read and validate a whole manifest."""
    return list(iter_scenes(manifest))


def write_manifest(scenes: Iterable[Scene], path: Union[str, Path]) -> None:
    """Write scenes as a JSON-lines manifest with paths relative to its directory."""
    path = Path(path)
    base_dir = path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(_dumps(scene_to_dict(scene, base_dir)))
            fh.write("\n")


def filter_detections(
    persons: Sequence[PersonDetection], tau_det: float
) -> List[PersonDetection]:
    """Keep detections with confidence >= tau_det, preserving order and ids.

    The boundary is retained: only confidences strictly below the threshold
    are discarded.
    """
    if not 0.0 <= tau_det <= 1.0:
        raise ValidationError(f"tau_det must be in [0, 1], got {tau_det}")
    return [p for p in persons if p.confidence >= tau_det]


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_results(
    scenes: Sequence[Scene],
    groups_by_scene: Mapping[str, Sequence["GroupRegion"]],
    path: Union[str, Path],
) -> None:
    """Write one record per scene with its detected group regions.

    Scenes with zero groups still get a record; output is sorted by scene id
    and byte-identical across runs for identical inputs.
    """
    ids = [s.scene_id for s in scenes]
    unknown = set(groups_by_scene) - set(ids)
    if unknown:
        raise ValidationError(f"groups for unknown scenes: {sorted(unknown)}")
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(ids):
            groups = groups_by_scene.get(sid, ())
            record = {
                "scene_id": sid,
                "groups": [
                    {"member_ids": sorted(g.member_ids), "bbox": g.bbox.as_list()}
                    for g in groups
                ],
            }
            fh.write(_dumps(record))
            fh.write("\n")


def load_results(path: Union[str, Path]) -> Dict[str, List["GroupRegion"]]:
    """Read a results file back into group regions keyed by scene id."""
    from .grouping import GroupRegion  # deferred: grouping depends on this module

    path = Path(path)
    out: Dict[str, List[GroupRegion]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid = obj["scene_id"]
                groups = [
                    GroupRegion(
                        member_ids=frozenset(int(m) for m in g["member_ids"]),
                        bbox=BBox.from_sequence(g["bbox"]),
                    )
                    for g in obj["groups"]
                ]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad results record: {exc}") from exc
            if sid in out:
                raise ValidationError(f"{path}:{lineno}: duplicate scene_id {sid}")
            out[sid] = groups
    return out


def export_pair_records(
    scenes: Sequence[Scene],
    matrices: Mapping[str, "RelationMatrix"],
    path: Union[str, Path],
) -> int:
    """Write one record per classified (non-filtered) unordered pair.

    Records carry annotator_source "pipeline" and canonical person_a < person_b.
    Returns the number of records written.
    """
    ids = [s.scene_id for s in scenes]
    unknown = set(matrices) - set(ids)
    if unknown:
        raise ValidationError(f"matrices for unknown scenes: {sorted(unknown)}")
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(ids):
            matrix = matrices.get(sid)
            if matrix is None:
                continue
            for a, b, judgment in matrix.classified_pairs():
                record = {
                    "scene_id": sid,
                    "person_a": min(a, b),
                    "person_b": max(a, b),
                    "label": judgment.value,
                    "annotator_source": "pipeline",
                }
                fh.write(_dumps(record))
                fh.write("\n")
                n += 1
    return n


def load_pair_records(path: Union[str, Path]) -> List[PairAnnotationRecord]:
    """Read a pair-records file back into memory."""
    path = Path(path)
    records: List[PairAnnotationRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = PairAnnotationRecord(
                    scene_id=obj["scene_id"],
                    person_a=int(obj["person_a"]),
                    person_b=int(obj["person_b"]),
                    label=Judgment(obj["label"]),
                    annotator_source=obj["annotator_source"],
                )
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad pair record: {exc}") from exc
            records.append(record)
    return records

"""Pair pruning by distance and depth, producing the pairwise relation matrix.

For each unordered pair the distance check runs first, then the depth check;
a pair failing either is written as NO without consulting the classifier.
Thresholds at their maxima (tau_d = 1.0, tau_z = 255) filter nothing, and the
exclusion test is strict (> tau), so boundary-equal pairs are still classified.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterator, List, Optional, Sequence, Tuple

from .classifier import ClassifierBackend, Judgment, PairQuery, classify
from .errors import MingleError, RemoteUnavailableError, ValidationError
from .geometry import center_distance

if TYPE_CHECKING:
    from .scene_io import Scene

logger = logging.getLogger(__name__)

# Builds the classifier query for one unordered person pair (by person id).
QueryBuilder = Callable[[int, int], PairQuery]


class Provenance(Enum):
    """How a matrix entry got its value."""

    DEFAULT = "default"  # diagonal / untouched initialization
    FILTERED = "filtered"  # pruned by distance or depth, entry forced to NO
    CLASSIFIED = "classified"  # judged by the classifier backend


@dataclass
class FilterStats:
    """Unordered-pair counts per outcome for one matrix build."""

    filtered_distance: int = 0
    filtered_depth: int = 0
    classified: int = 0

    @property
    def total(self) -> int:
        return self.filtered_distance + self.filtered_depth + self.classified


@dataclass(frozen=True)
class FilterParams:
    """Thresholds: tau_d is normalized center distance in [0, 1], tau_z is a
    median-depth difference in [0, 255]."""

    tau_d: float = 0.4
    tau_z: int = 80

    def __post_init__(self):
        if not 0.0 <= self.tau_d <= 1.0:
            raise ValidationError(f"tau_d must be in [0, 1], got {self.tau_d}")
        if not 0 <= self.tau_z <= 255:
            raise ValidationError(f"tau_z must be in [0, 255], got {self.tau_z}")


class RelationMatrix:
    """Symmetric pairwise judgment matrix with per-entry provenance.

    Rows/columns follow ``person_ids`` order. Diagonal entries stay at their
    NOT_SURE/DEFAULT initialization and are never consumed downstream.
    Equality compares person ids, entries, and provenance (not stats).
    """

    def __init__(self, person_ids: Sequence[int]):
        ids = tuple(int(p) for p in person_ids)
        if len(set(ids)) != len(ids):
            raise ValidationError(f"person ids must be unique, got {ids}")
        self.person_ids = ids
        self._index = {pid: i for i, pid in enumerate(ids)}
        n = len(ids)
        self.entries: List[List[Judgment]] = [
            [Judgment.NOT_SURE] * n for _ in range(n)
        ]
        self.provenance: List[List[Provenance]] = [
            [Provenance.DEFAULT] * n for _ in range(n)
        ]
        self.stats = FilterStats()

    @property
    def n(self) -> int:
        return len(self.person_ids)

    def index_of(self, person_id: int) -> int:
        try:
            return self._index[person_id]
        except KeyError:
            raise ValidationError(f"person {person_id} not in matrix") from None

    def judgment_between(self, person_a: int, person_b: int) -> Judgment:
        return self.entries[self.index_of(person_a)][self.index_of(person_b)]

    def set_pair(self, i: int, j: int, judgment: Judgment, provenance: Provenance) -> None:
        """Write one unordered pair, mirrored symmetrically. Indices, not ids."""
        if i == j:
            raise ValidationError("diagonal entries are fixed")
        self.entries[i][j] = judgment
        self.entries[j][i] = judgment
        self.provenance[i][j] = provenance
        self.provenance[j][i] = provenance

    def pairs(self) -> Iterator[Tuple[int, int]]:
        """Canonical unordered index pairs, i < j."""
        n = self.n
        for i in range(n):
            for j in range(i + 1, n):
                yield i, j

    def classified_pairs(self) -> Iterator[Tuple[int, int, Judgment]]:
        """(person_a, person_b, judgment) for every classified pair, a < b by id."""
        for i, j in self.pairs():
            if self.provenance[i][j] is Provenance.CLASSIFIED:
                a, b = self.person_ids[i], self.person_ids[j]
                if a > b:
                    a, b = b, a
                yield a, b, self.entries[i][j]

    def copy(self) -> "RelationMatrix":
        other = RelationMatrix(self.person_ids)
        other.entries = [row[:] for row in self.entries]
        other.provenance = [row[:] for row in self.provenance]
        other.stats = FilterStats(
            self.stats.filtered_distance, self.stats.filtered_depth, self.stats.classified
        )
        return other

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RelationMatrix):
            return NotImplemented
        return (
            self.person_ids == other.person_ids
            and self.entries == other.entries
            and self.provenance == other.provenance
        )


def _pair_metrics(scene: "Scene", i: int, j: int) -> Tuple[float, int]:
    a, b = scene.persons[i], scene.persons[j]
    if a.median_depth is None or b.median_depth is None:
        raise ValidationError(
            f"scene {scene.scene_id}: median_depth missing for pair "
            f"({a.person_id}, {b.person_id}); run the depth stage first"
        )
    dist = center_distance(a.bbox, b.bbox, scene.image)
    return dist, abs(a.median_depth - b.median_depth)


def build_relation_matrix(
    scene: "Scene",
    params: Optional[FilterParams],
    backend: ClassifierBackend,
    query_builder: QueryBuilder,
) -> RelationMatrix:
    """Prune pairs by distance then depth; classify the survivors.

    ``params=None`` bypasses the filter entirely and classifies every pair.
    Surviving pairs are dispatched to the backend with bounded parallelism
    (``backend.parallelism``); the matrix is assembled in canonical pair order
    so the result is independent of completion order.
    """
    matrix = RelationMatrix([p.person_id for p in scene.persons])
    survivors: List[Tuple[int, int]] = []
    for i, j in matrix.pairs():
        if params is not None:
            dist, depth_diff = _pair_metrics(scene, i, j)
            if dist > params.tau_d:
                matrix.set_pair(i, j, Judgment.NO, Provenance.FILTERED)
                matrix.stats.filtered_distance += 1
                continue
            if depth_diff > params.tau_z:
                matrix.set_pair(i, j, Judgment.NO, Provenance.FILTERED)
                matrix.stats.filtered_depth += 1
                continue
        survivors.append((i, j))

    for (i, j), judgment in zip(survivors, _classify_pairs(scene, survivors, backend, query_builder)):
        matrix.set_pair(i, j, judgment, Provenance.CLASSIFIED)
        matrix.stats.classified += 1
    return matrix


def _classify_pairs(
    scene: "Scene",
    index_pairs: Sequence[Tuple[int, int]],
    backend: ClassifierBackend,
    query_builder: QueryBuilder,
) -> List[Judgment]:
    def one(pair: Tuple[int, int]) -> Judgment:
        i, j = pair
        a, b = scene.persons[i].person_id, scene.persons[j].person_id
        try:
            return classify(query_builder(a, b), backend)
        except RemoteUnavailableError:
            raise
        except MingleError as exc:
            raise type(exc)(
                f"pair ({a}, {b}) of scene {scene.scene_id}: {exc}"
            ) from exc

    parallelism = min(getattr(backend, "parallelism", 1), len(index_pairs))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(one, index_pairs))
    return [one(pair) for pair in index_pairs]


def refilter_matrix(
    scene: "Scene", base: RelationMatrix, params: Optional[FilterParams]
) -> RelationMatrix:
    """Re-derive the matrix for new thresholds from cached judgments.

    Pairs violating the thresholds are overwritten with NO/FILTERED; the rest
    keep their cached entry. Because filtering never consults the classifier
    for excluded pairs, this equals rebuilding the matrix at those thresholds.
    """
    expected = tuple(p.person_id for p in scene.persons)
    if base.person_ids != expected:
        raise ValidationError(
            f"matrix persons {base.person_ids} do not match scene "
            f"{scene.scene_id} persons {expected}"
        )
    out = RelationMatrix(base.person_ids)
    for i, j in base.pairs():
        if params is not None:
            dist, depth_diff = _pair_metrics(scene, i, j)
            if dist > params.tau_d:
                out.set_pair(i, j, Judgment.NO, Provenance.FILTERED)
                out.stats.filtered_distance += 1
                continue
            if depth_diff > params.tau_z:
                out.set_pair(i, j, Judgment.NO, Provenance.FILTERED)
                out.stats.filtered_depth += 1
                continue
        out.set_pair(i, j, base.entries[i][j], base.provenance[i][j])
        if base.provenance[i][j] is Provenance.CLASSIFIED:
            out.stats.classified += 1
    return out


def count_classifier_calls(matrix: RelationMatrix) -> int:
    """Number of unordered pairs that were actually classified."""
    return sum(
        1 for i, j in matrix.pairs() if matrix.provenance[i][j] is Provenance.CLASSIFIED
    )

"""Greedy agreement clustering of pairwise judgments into social groups.

Clusters start as singletons and the pair of clusters whose merge yields the
largest positive gain in agreement score is merged, repeating until no merge
strictly improves the score. An exhaustive all-partitions maximizer is
provided as a small-n test oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, FrozenSet, Iterable, Iterator, List, Sequence, Tuple

from .classifier import Judgment
from .errors import CoverageMismatchError, TooLargeError, ValidationError
from .geometry import BBox, enclosing_bbox

if TYPE_CHECKING:
    from .pair_filter import RelationMatrix
    from .scene_io import PersonDetection

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_PERSONS = 10  # Bell(10) = 115 975 partitions


@dataclass(frozen=True)
class AgreementWeights:
    """Per-judgment score contribution of an intra-cluster pair."""

    w_yes: float = 1.0
    w_no: float = -1.0
    w_notsure: float = -1.0

    def __post_init__(self):
        if not self.w_yes > 0:
            raise ValidationError(f"w_yes must be > 0, got {self.w_yes}")
        if self.w_no > 0:
            raise ValidationError(f"w_no must be <= 0, got {self.w_no}")
        if self.w_notsure > 0:
            raise ValidationError(f"w_notsure must be <= 0, got {self.w_notsure}")

    def weight(self, judgment: Judgment) -> float:
        if judgment is Judgment.YES:
            return self.w_yes
        if judgment is Judgment.NO:
            return self.w_no
        return self.w_notsure


@dataclass(frozen=True)
class Partition:
    """Disjoint non-empty clusters of person ids, sorted by min member."""

    clusters: Tuple[FrozenSet[int], ...]

    def __post_init__(self):
        seen: set = set()
        for cluster in self.clusters:
            if not cluster:
                raise ValidationError("clusters must be non-empty")
            if cluster & seen:
                raise ValidationError(f"clusters overlap on {sorted(cluster & seen)}")
            seen |= cluster
        object.__setattr__(
            self, "clusters", tuple(sorted(self.clusters, key=min))
        )

    @classmethod
    def from_sets(cls, clusters: Iterable[Iterable[int]]) -> "Partition":
        return cls(tuple(frozenset(c) for c in clusters))

    @property
    def members(self) -> FrozenSet[int]:
        return frozenset().union(*self.clusters) if self.clusters else frozenset()

    def __iter__(self) -> Iterator[FrozenSet[int]]:
        return iter(self.clusters)

    def __len__(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class GroupRegion:
    """A detected social group: >= 2 members and their enclosing box."""

    member_ids: FrozenSet[int]
    bbox: BBox

    def __post_init__(self):
        if len(self.member_ids) < 2:
            raise ValidationError(
                f"a group needs >= 2 members, got {sorted(self.member_ids)}"
            )


def _check_coverage(partition: Partition, matrix: "RelationMatrix") -> None:
    have = partition.members
    want = frozenset(matrix.person_ids)
    if have != want:
        raise CoverageMismatchError(
            f"partition covers {sorted(have)}, matrix indexes {sorted(want)}"
        )


def agreement_score(
    partition: Partition, matrix: "RelationMatrix", weights: AgreementWeights
) -> float:
    """Sum of judgment weights over all intra-cluster unordered pairs."""
    _check_coverage(partition, matrix)
    score = 0.0
    for cluster in partition:
        idx = sorted(matrix.index_of(pid) for pid in cluster)
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                score += weights.weight(matrix.entries[idx[a]][idx[b]])
    return score


def greedy_cluster(
    matrix: "RelationMatrix", weights: AgreementWeights = AgreementWeights()
) -> Partition:
    """Merge the cluster pair with the largest positive gain until none remains."""
    partition, _ = greedy_cluster_trace(matrix, weights)
    return partition


def greedy_cluster_trace(
    matrix: "RelationMatrix", weights: AgreementWeights = AgreementWeights()
) -> Tuple[Partition, List[float]]:
    """Like ``greedy_cluster`` but also returns the accepted merge gains in order.

    Ties on the gain are broken toward the lexicographically smallest
    (min id of first cluster, min id of second cluster), so the result is
    deterministic.
    """
    ids = sorted(matrix.person_ids)
    index = {pid: matrix.index_of(pid) for pid in ids}
    # kept sorted by min member; merging into the earlier cluster preserves that
    clusters: List[List[int]] = [[pid] for pid in ids]
    gains: List[float] = []

    def merge_gain(a: List[int], b: List[int]) -> float:
        total = 0.0
        for pid_a in a:
            row = matrix.entries[index[pid_a]]
            for pid_b in b:
                total += weights.weight(row[index[pid_b]])
        return total

    while len(clusters) > 1:
        best_gain = None
        best = None
        for ia in range(len(clusters)):
            for ib in range(ia + 1, len(clusters)):
                gain = merge_gain(clusters[ia], clusters[ib])
                if best_gain is None or gain > best_gain:
                    best_gain = gain
                    best = (ia, ib)
        if best_gain is None or not best_gain > 0:
            break
        ia, ib = best
        clusters[ia] = clusters[ia] + clusters[ib]
        del clusters[ib]
        gains.append(best_gain)
    return Partition.from_sets(clusters), gains


def _iter_partitions(items: Sequence[int]) -> Iterator[List[List[int]]]:
    """All set partitions of ``items``, by recursive block assignment."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in _iter_partitions(rest):
        for k in range(len(sub)):
            yield sub[:k] + [[first] + sub[k]] + sub[k + 1 :]
        yield [[first]] + sub


def exhaustive_cluster(
    matrix: "RelationMatrix", weights: AgreementWeights = AgreementWeights()
) -> Partition:
    """Agreement-score maximizer over all set partitions (test oracle, n <= 10).

    Ties prefer more clusters, then the partition whose sorted tuple of
    cluster minima keeps low ids grouped together (i.e. the greatest such
    tuple); any remaining tie falls to the canonical-form maximum. This makes
    the oracle deterministic and consistent with the greedy tie-breaks on the
    documented worked examples.
    """
    if matrix.n > EXHAUSTIVE_MAX_PERSONS:
        raise TooLargeError(
            f"exhaustive clustering enumerates at most "
            f"{EXHAUSTIVE_MAX_PERSONS} persons, got {matrix.n}"
        )
    ids = sorted(matrix.person_ids)
    index = {pid: matrix.index_of(pid) for pid in ids}

    def score_of(blocks: List[List[int]]) -> float:
        total = 0.0
        for block in blocks:
            for a in range(len(block)):
                row = matrix.entries[index[block[a]]]
                for b in range(a + 1, len(block)):
                    total += weights.weight(row[index[block[b]]])
        return total

    best_key = None
    best_blocks = None
    for blocks in _iter_partitions(ids):
        canon = tuple(sorted(tuple(sorted(block)) for block in blocks))
        key = (
            score_of(blocks),
            len(blocks),
            tuple(sorted(min(block) for block in blocks)),
            canon,
        )
        if best_key is None or key > best_key:
            best_key = key
            best_blocks = blocks
    assert best_blocks is not None
    return Partition.from_sets(best_blocks)


def extract_groups(
    partition: Partition, persons: Sequence["PersonDetection"]
) -> List[GroupRegion]:
    """One region per cluster with >= 2 members; singletons are dropped.

    Regions come back sorted by smallest member id, each with the enclosing
    box of its members' boxes.
    """
    boxes: Dict[int, BBox] = {p.person_id: p.bbox for p in persons}
    missing = partition.members - set(boxes)
    if missing:
        raise CoverageMismatchError(
            f"partition references persons without detections: {sorted(missing)}"
        )
    groups = []
    for cluster in partition:
        if len(cluster) < 2:
            continue
        groups.append(
            GroupRegion(
                member_ids=frozenset(cluster),
                bbox=enclosing_bbox([boxes[pid] for pid in cluster]),
            )
        )
    groups.sort(key=lambda g: min(g.member_ids))
    return groups

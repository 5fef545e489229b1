from __future__ import annotations

import random
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import pytest

from mingle.classifier import Judgment, PairQuery, default_prompt_template
from mingle.geometry import BBox, ImageGeometry
from mingle.pair_filter import Provenance, RelationMatrix
from mingle.pipeline import make_query_builder
from mingle.scene_io import GroupAnnotation, PersonDetection, Scene
from mingle.synth import render_depth, render_rgb


def make_scene(
    boxes: Mapping[int, BBox],
    medians: Optional[Mapping[int, int]] = None,
    image: ImageGeometry = ImageGeometry(200, 150),
    gt: Optional[Sequence[Tuple[int, Iterable[int]]]] = None,
    scene_id: str = "test-scene",
    confidence: float = 0.9,
) -> Scene:
    """In-memory scene; gt entries are (group_id, member_ids)."""
    persons = tuple(
        PersonDetection(
            person_id=pid,
            bbox=box,
            confidence=confidence,
            median_depth=None if medians is None else medians.get(pid),
        )
        for pid, box in sorted(boxes.items())
    )
    gt_groups = None
    if gt is not None:
        gt_groups = tuple(
            GroupAnnotation(
                group_id=gid,
                member_ids=frozenset(members),
                bbox=_enclosing(boxes, members),
            )
            for gid, members in gt
        )
    return Scene(
        scene_id=scene_id,
        image=image,
        rgb_path=Path("unused-rgb.png"),
        depth_path=Path("unused-depth.png"),
        persons=persons,
        gt_groups=gt_groups,
    )


def _enclosing(boxes: Mapping[int, BBox], members: Iterable[int]) -> BBox:
    subset = [boxes[m] for m in members]
    return BBox(
        x1=min(b.x1 for b in subset),
        y1=min(b.y1 for b in subset),
        x2=max(b.x2 for b in subset),
        y2=max(b.y2 for b in subset),
    )


def build_matrix(
    ids: Sequence[int], judgments: Mapping[Tuple[int, int], Judgment]
) -> RelationMatrix:
    """Matrix with the given classified judgments; unlisted pairs stay Not-sure."""
    matrix = RelationMatrix(ids)
    for (a, b), judgment in judgments.items():
        matrix.set_pair(
            matrix.index_of(a), matrix.index_of(b), judgment, Provenance.CLASSIFIED
        )
        matrix.stats.classified += 1
    return matrix


def random_matrix(rng: random.Random, n: int) -> RelationMatrix:
    ids = list(range(n))
    judgments: Dict[Tuple[int, int], Judgment] = {}
    for i in range(n):
        for j in range(i + 1, n):
            judgments[(i, j)] = rng.choices(
                [Judgment.YES, Judgment.NO, Judgment.NOT_SURE], [0.4, 0.4, 0.2]
            )[0]
    return build_matrix(ids, judgments)


class ScriptedBackend:
    """Replays judgments from a {(person_a, person_b): Judgment} table."""

    parallelism = 1

    def __init__(self, table: Mapping[Tuple[int, int], Judgment]):
        self.table = dict(table)
        self.calls = 0

    def classify(self, query: PairQuery) -> Judgment:
        self.calls += 1
        key = (query.person_a, query.person_b)
        return self.table.get(key, self.table.get((key[1], key[0]), Judgment.NOT_SURE))


def inmem_query_builder(scene: Scene, pad_fraction: float = 0.1):
    """Query builder backed by rendered in-memory buffers (no files needed)."""
    rgb = render_rgb(scene)
    depth = render_depth(scene)
    return make_query_builder(scene, rgb, depth, pad_fraction, default_prompt_template())


@pytest.fixture
def three_person_scene() -> Scene:
    boxes = {
        1: BBox(10, 10, 22, 40),
        2: BBox(30, 12, 42, 44),
        3: BBox(150, 100, 162, 130),
    }
    medians = {1: 100, 2: 104, 3: 220}
    return make_scene(boxes, medians, gt=[(0, (1, 2))])

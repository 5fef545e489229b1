"""Manifest parsing, confidence filtering, and results/pair-record round trips."""

import json
from pathlib import Path

import pytest

from mingle import (
    BBox,
    GroupAnnotation,
    ImageGeometry,
    ParseError,
    PersonDetection,
    Scene,
    ValidationError,
    filter_detections,
    load_results,
    load_scenes,
    write_manifest,
    write_results,
)
from mingle.classifier import Judgment
from mingle.grouping import GroupRegion
from mingle.pair_filter import Provenance, RelationMatrix
from mingle.scene_io import (
    PairAnnotationRecord,
    export_pair_records,
    load_pair_records,
    scene_to_dict,
)

from conftest import build_matrix, make_scene


def sample_scenes(base: Path):
    def scene(idx: str, persons, gt_groups=None) -> Scene:
        return Scene(
            scene_id=f"scene-{idx}",
            image=ImageGeometry(640, 480),
            rgb_path=base / "rgb" / f"{idx}.png",
            depth_path=base / "depth" / f"{idx}.png",
            persons=persons,
            gt_groups=gt_groups,
        )

    a = scene(
        "a",
        (
            PersonDetection(0, BBox(10, 10, 50, 120), 0.97),
            PersonDetection(1, BBox(60, 12, 100, 118), 0.88),
            PersonDetection(4, BBox(300, 20, 340, 130), 0.61),
        ),
        (
            GroupAnnotation(0, BBox(10, 10, 100, 120), frozenset({0, 1})),
        ),
    )
    b = scene(
        "b",
        (PersonDetection(2, BBox(5.5, 3.25, 41.5, 99.75), 0.5),),
        (),
    )
    c = scene("c", ())  # unannotated: gt_groups stays None
    return [a, b, c]


class TestManifestRoundTrip:
    def test_write_then_load_is_identity(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        path = tmp_path / "manifest.jsonl"
        write_manifest(scenes, path)
        assert load_scenes(path) == scenes

    def test_round_trip_keeps_annotated_empty_distinct_from_missing(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        path = tmp_path / "manifest.jsonl"
        write_manifest(scenes, path)
        loaded = {s.scene_id: s for s in load_scenes(path)}
        assert loaded["scene-b"].gt_groups == ()
        assert loaded["scene-c"].gt_groups is None

    def test_write_is_deterministic(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        write_manifest(scenes, p1)
        write_manifest(scenes, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_scenes(path) == []

    def test_blank_lines_are_skipped(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        path = tmp_path / "manifest.jsonl"
        write_manifest(scenes, path)
        padded = tmp_path / "padded.jsonl"
        padded.write_text("\n" + path.read_text().replace("\n", "\n\n"))
        assert load_scenes(padded) == scenes

    def test_member_ids_may_be_absent(self, tmp_path):
        line = {
            "scene_id": "s",
            "width": 100,
            "height": 100,
            "rgb_path": "r.png",
            "depth_path": "d.png",
            "persons": [],
            "gt_groups": [{"group_id": 0, "bbox": [1, 1, 9, 9], "member_ids": None}],
        }
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(line) + "\n")
        (scene,) = load_scenes(path)
        assert scene.gt_groups[0].member_ids is None


def write_lines(tmp_path, *objs):
    path = tmp_path / "manifest.jsonl"
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return path


def valid_line(**overrides):
    line = {
        "scene_id": "s-1",
        "width": 100,
        "height": 100,
        "rgb_path": "r.png",
        "depth_path": "d.png",
        "persons": [
            {"person_id": 0, "bbox": [1, 1, 20, 40], "confidence": 0.9},
        ],
    }
    line.update(overrides)
    return line


class TestManifestValidation:
    def test_malformed_json_reports_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(valid_line()) + "\n{oops\n")
        with pytest.raises(ParseError, match=r"m\.jsonl:2"):
            load_scenes(path)

    def test_non_object_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("[1, 2, 3]\n")
        with pytest.raises(ParseError, match="expected an object"):
            load_scenes(path)

    def test_confidence_out_of_range_names_the_scene(self, tmp_path):
        bad = valid_line(
            persons=[{"person_id": 3, "bbox": [1, 1, 20, 40], "confidence": 1.7}]
        )
        path = write_lines(tmp_path, bad)
        with pytest.raises(ValidationError, match="scene s-1") as exc_info:
            load_scenes(path)
        assert "1.7" in str(exc_info.value)

    def test_missing_required_key(self, tmp_path):
        line = valid_line()
        del line["depth_path"]
        with pytest.raises(ValidationError, match="missing asset path"):
            load_scenes(write_lines(tmp_path, line))

    def test_duplicate_person_id(self, tmp_path):
        bad = valid_line(
            persons=[
                {"person_id": 5, "bbox": [1, 1, 20, 40], "confidence": 0.9},
                {"person_id": 5, "bbox": [30, 1, 50, 40], "confidence": 0.8},
            ]
        )
        with pytest.raises(ValidationError, match="duplicate person_id 5"):
            load_scenes(write_lines(tmp_path, bad))

    def test_box_outside_image(self, tmp_path):
        bad = valid_line(
            persons=[{"person_id": 0, "bbox": [1, 1, 120, 40], "confidence": 0.9}]
        )
        with pytest.raises(ValidationError, match="exceeds image"):
            load_scenes(write_lines(tmp_path, bad))

    def test_flipped_bbox_is_wrapped_with_line_context(self, tmp_path):
        bad = valid_line(
            persons=[{"person_id": 0, "bbox": [20, 1, 1, 40], "confidence": 0.9}]
        )
        with pytest.raises(ValidationError, match=r"m.*\.jsonl:1.*scene s-1"):
            load_scenes(write_lines(tmp_path, bad))

    def test_group_with_unknown_member(self, tmp_path):
        bad = valid_line(
            gt_groups=[{"group_id": 0, "bbox": [1, 1, 40, 40], "member_ids": [0, 9]}]
        )
        with pytest.raises(ValidationError, match=r"unknown persons \[9\]"):
            load_scenes(write_lines(tmp_path, bad))

    def test_single_member_group(self, tmp_path):
        bad = valid_line(
            gt_groups=[{"group_id": 0, "bbox": [1, 1, 40, 40], "member_ids": [0]}]
        )
        with pytest.raises(ValidationError, match="must have >= 2 members"):
            load_scenes(write_lines(tmp_path, bad))

    def test_empty_scene_id(self, tmp_path):
        with pytest.raises(ValidationError, match="scene_id"):
            load_scenes(write_lines(tmp_path, valid_line(scene_id="")))


class TestFilterDetections:
    def test_threshold_is_inclusive(self):
        persons = [
            PersonDetection(0, BBox(0, 0, 10, 10), 0.9),
            PersonDetection(1, BBox(20, 0, 30, 10), 0.5),
            PersonDetection(2, BBox(40, 0, 50, 10), 0.3),
        ]
        kept = filter_detections(persons, 0.5)
        assert [p.person_id for p in kept] == [0, 1]

    def test_zero_threshold_keeps_everything(self):
        persons = [PersonDetection(0, BBox(0, 0, 10, 10), 0.0)]
        assert filter_detections(persons, 0.0) == persons

    def test_order_and_ids_are_preserved(self):
        persons = [
            PersonDetection(7, BBox(0, 0, 10, 10), 0.8),
            PersonDetection(2, BBox(20, 0, 30, 10), 0.2),
            PersonDetection(5, BBox(40, 0, 50, 10), 0.95),
        ]
        assert [p.person_id for p in filter_detections(persons, 0.5)] == [7, 5]

    def test_rejects_threshold_outside_unit_interval(self):
        with pytest.raises(ValidationError):
            filter_detections([], 1.5)


class TestResultsFile:
    def groups(self):
        return {
            "scene-a": [
                GroupRegion(frozenset({0, 1}), BBox(10, 10, 100, 120)),
            ],
            "scene-b": [],
        }

    def test_round_trip(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        path = tmp_path / "results.jsonl"
        write_results(scenes, self.groups(), path)
        loaded = load_results(path)
        assert loaded == {
            "scene-a": [GroupRegion(frozenset({0, 1}), BBox(10, 10, 100, 120))],
            "scene-b": [],
            "scene-c": [],
        }

    def test_every_scene_gets_a_record(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        path = tmp_path / "results.jsonl"
        write_results(scenes, self.groups(), path)
        records = [json.loads(l) for l in path.read_text().splitlines()]
        assert [r["scene_id"] for r in records] == ["scene-a", "scene-b", "scene-c"]
        assert records[1]["groups"] == [] and records[2]["groups"] == []

    def test_output_is_byte_stable(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        p1, p2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
        write_results(scenes, self.groups(), p1)
        write_results(list(reversed(scenes)), self.groups(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_groups_for_unknown_scene(self, tmp_path):
        scenes = sample_scenes(tmp_path)
        with pytest.raises(ValidationError, match="unknown scenes"):
            write_results(scenes, {"nope": []}, tmp_path / "r.jsonl")

    def test_load_rejects_duplicate_scene(self, tmp_path):
        record = {"scene_id": "s", "groups": []}
        path = tmp_path / "r.jsonl"
        path.write_text(json.dumps(record) + "\n" + json.dumps(record) + "\n")
        with pytest.raises(ValidationError, match="duplicate scene_id"):
            load_results(path)

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text('{"scene_id": "s"}\n')
        with pytest.raises(ParseError, match=r"r\.jsonl:1"):
            load_results(path)


class TestPairRecords:
    def test_exports_each_classified_pair_once(self, tmp_path):
        scene = make_scene(
            {1: BBox(0, 0, 10, 10), 2: BBox(20, 0, 30, 10), 3: BBox(40, 0, 50, 10)},
            scene_id="s",
        )
        matrix = build_matrix(
            [1, 2, 3],
            {
                (1, 2): Judgment.YES,
                (1, 3): Judgment.NO,
                (2, 3): Judgment.NOT_SURE,
            },
        )
        path = tmp_path / "pairs.jsonl"
        n = export_pair_records([scene], {"s": matrix}, path)
        assert n == 3
        records = load_pair_records(path)
        assert len(records) == 3
        assert all(r.person_a < r.person_b for r in records)
        assert all(r.annotator_source == "pipeline" for r in records)
        by_pair = {(r.person_a, r.person_b): r.label for r in records}
        assert by_pair == {
            (1, 2): Judgment.YES,
            (1, 3): Judgment.NO,
            (2, 3): Judgment.NOT_SURE,
        }

    def test_filtered_pairs_are_not_exported(self, tmp_path):
        scene = make_scene(
            {1: BBox(0, 0, 10, 10), 2: BBox(20, 0, 30, 10)}, scene_id="s"
        )
        matrix = RelationMatrix([1, 2])
        matrix.set_pair(0, 1, Judgment.NO, Provenance.FILTERED)
        path = tmp_path / "pairs.jsonl"
        assert export_pair_records([scene], {"s": matrix}, path) == 0
        assert path.read_text() == ""

    def test_rejects_matrix_for_unknown_scene(self, tmp_path):
        scene = make_scene({1: BBox(0, 0, 10, 10)}, scene_id="s")
        with pytest.raises(ValidationError, match="unknown scenes"):
            export_pair_records(
                [scene], {"other": RelationMatrix([1])}, tmp_path / "p.jsonl"
            )

    def test_record_must_be_canonical(self):
        with pytest.raises(ValidationError, match="canonical"):
            PairAnnotationRecord("s", person_a=4, person_b=2, label=Judgment.YES)

    def test_record_rejects_unknown_source(self):
        with pytest.raises(ValidationError, match="annotator_source"):
            PairAnnotationRecord(
                "s", person_a=1, person_b=2, label=Judgment.YES, annotator_source="bot"
            )

    def test_load_rejects_bad_label(self, tmp_path):
        record = {
            "scene_id": "s",
            "person_a": 1,
            "person_b": 2,
            "label": "maybe",
            "annotator_source": "human",
        }
        path = tmp_path / "p.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ParseError, match="bad pair record"):
            load_pair_records(path)

    def test_load_wraps_canonical_violation_with_line(self, tmp_path):
        record = {
            "scene_id": "s",
            "person_a": 9,
            "person_b": 2,
            "label": "yes",
            "annotator_source": "human",
        }
        path = tmp_path / "p.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ValidationError, match=r"p\.jsonl:1"):
            load_pair_records(path)


class TestSceneToDict:
    def test_paths_relative_to_base(self, tmp_path):
        (scene, *_rest) = sample_scenes(tmp_path)
        obj = scene_to_dict(scene, base_dir=tmp_path)
        assert obj["rgb_path"] == "rgb/a.png"
        assert obj["depth_path"] == "depth/a.png"

    def test_absolute_paths_without_base(self, tmp_path):
        (scene, *_rest) = sample_scenes(tmp_path)
        obj = scene_to_dict(scene)
        assert obj["rgb_path"] == str(tmp_path / "rgb" / "a.png")

"""Synthetic corpus generation, depth/RGB rendering, and judgment corruption."""

import dataclasses
import itertools
import random

import pytest

from mingle import (
    ConfigError,
    FilterParams,
    HeuristicBackend,
    ImageGeometry,
    Judgment,
    OracleBackend,
    Provenance,
    RelationMatrix,
    SynthConfig,
    ValidationError,
    build_relation_matrix,
    corrupt_judgments,
    extract_groups,
    generate_scenes,
    greedy_cluster,
    load_scenes,
    median_depth,
)
from mingle.geometry import center_distance
from mingle.synth import render_depth, render_rgb, write_corpus

from conftest import build_matrix, inmem_query_builder

YES, NO, NOT_SURE = Judgment.YES, Judgment.NO, Judgment.NOT_SURE

SMALL = SynthConfig(n_scenes=6, seed=13)


class TestSynthConfig:
    def test_defaults_are_valid(self):
        cfg = SynthConfig()
        assert cfg.n_scenes == 200
        assert cfg.image == ImageGeometry(800, 600)

    def test_rejects_negative_scene_count(self):
        with pytest.raises(ConfigError):
            SynthConfig(n_scenes=-1)

    def test_rejects_bad_person_range(self):
        with pytest.raises(ConfigError):
            SynthConfig(min_persons=5, max_persons=4)
        with pytest.raises(ConfigError):
            SynthConfig(min_persons=0)

    def test_rejects_undersized_groups(self):
        with pytest.raises(ConfigError, match=">= 2"):
            SynthConfig(group_sizes=((1, 1.0),))

    def test_rejects_probabilities_not_summing_to_one(self):
        with pytest.raises(ConfigError, match="sum"):
            SynthConfig(group_sizes=((2, 0.5), (3, 0.4)))

    def test_rejects_out_of_range_rates(self):
        with pytest.raises(ConfigError):
            SynthConfig(singleton_rate=1.5)
        with pytest.raises(ConfigError):
            SynthConfig(flip_rate=-0.1)
        with pytest.raises(ConfigError, match="exceed 1"):
            SynthConfig(flip_rate=0.6, notsure_rate=0.6)

    def test_rejects_image_too_small_for_separation(self):
        with pytest.raises(ConfigError, match="min_entity_separation"):
            SynthConfig(
                image=ImageGeometry(120, 120),
                intra_spread=0.25,
                min_entity_separation=0.9,
            )

    def test_rejects_members_that_would_overlap(self):
        with pytest.raises(ConfigError, match="overlap"):
            SynthConfig(image=ImageGeometry(300, 200), intra_spread=0.02)


class TestGenerateScenes:
    def test_zero_scenes(self):
        assert generate_scenes(dataclasses.replace(SMALL, n_scenes=0)) == []

    def test_same_seed_is_identical(self):
        assert generate_scenes(SMALL) == generate_scenes(SMALL)

    def test_different_seeds_differ(self):
        other = dataclasses.replace(SMALL, seed=14)
        assert generate_scenes(SMALL) != generate_scenes(other)

    def test_scene_shape_invariants(self):
        for scene in generate_scenes(SMALL):
            assert SMALL.min_persons <= len(scene.persons) <= SMALL.max_persons
            assert [p.person_id for p in scene.persons] == list(range(len(scene.persons)))
            for person in scene.persons:
                assert 0.55 <= person.confidence <= 0.99
                assert person.median_depth is not None
                box = person.bbox
                assert 0 <= box.x1 < box.x2 <= SMALL.image.width
                assert 0 <= box.y1 < box.y2 <= SMALL.image.height
            for group in scene.gt_groups:
                assert len(group.member_ids) >= 2

    def test_grouped_members_are_close_and_depth_aligned(self):
        for scene in generate_scenes(SMALL):
            boxes = {p.person_id: p.bbox for p in scene.persons}
            depths = {p.person_id: p.median_depth for p in scene.persons}
            for group in scene.gt_groups:
                for a, b in itertools.combinations(sorted(group.member_ids), 2):
                    assert center_distance(boxes[a], boxes[b], scene.image) <= 0.061
                    assert abs(depths[a] - depths[b]) <= 12

    def test_distinct_entities_are_spatially_separated(self):
        for scene in generate_scenes(SMALL):
            entity_of = {}
            for group in scene.gt_groups:
                for pid in group.member_ids:
                    entity_of[pid] = group.group_id
            boxes = {p.person_id: p.bbox for p in scene.persons}
            for a, b in itertools.combinations(sorted(boxes), 2):
                if entity_of.get(a, f"loner-{a}") == entity_of.get(b, f"loner-{b}"):
                    continue
                assert center_distance(boxes[a], boxes[b], scene.image) > 0.1

    def test_oracle_recovers_planted_groups_exactly(self):
        for scene in generate_scenes(SMALL):
            matrix = build_relation_matrix(
                scene, None, OracleBackend(scene), inmem_query_builder(scene)
            )
            groups = extract_groups(greedy_cluster(matrix), scene.persons)
            assert [g.member_ids for g in groups] == [
                g.member_ids for g in scene.gt_groups
            ]
            assert [g.bbox for g in groups] == [g.bbox for g in scene.gt_groups]

    def test_heuristic_also_recovers_planted_groups(self):
        # Placement margins keep intra-group gaps under the heuristic
        # thresholds and inter-entity gaps above them.
        for scene in generate_scenes(SMALL):
            matrix = build_relation_matrix(
                scene,
                FilterParams(),
                HeuristicBackend(scene),
                inmem_query_builder(scene),
            )
            groups = extract_groups(greedy_cluster(matrix), scene.persons)
            assert [g.member_ids for g in groups] == [
                g.member_ids for g in scene.gt_groups
            ]


class TestRenderers:
    def scene(self):
        return generate_scenes(SMALL)[0]

    def test_depth_render_reproduces_planted_medians(self):
        for scene in generate_scenes(SMALL)[:3]:
            depth = render_depth(scene)
            assert depth.geometry == scene.image
            for person in scene.persons:
                assert median_depth(depth, person.bbox) == person.median_depth

    def test_depth_render_needs_planted_values(self):
        scene = self.scene()
        stripped = dataclasses.replace(
            scene,
            persons=tuple(
                dataclasses.replace(p, median_depth=None) for p in scene.persons
            ),
        )
        with pytest.raises(ValidationError, match="planted depth"):
            render_depth(stripped)

    def test_rgb_render_shape_and_person_fill(self):
        scene = self.scene()
        rgb = render_rgb(scene)
        assert rgb.shape == (scene.image.height, scene.image.width, 3)
        assert rgb.dtype.name == "uint8"
        background = rgb[0, 0].tolist()
        from mingle.geometry import pixel_bounds

        for person in scene.persons:
            x0, y0, x1, y1 = pixel_bounds(person.bbox, scene.image)
            interior = rgb[(y0 + y1) // 2, (x0 + x1) // 2].tolist()
            assert interior != background


class TestWriteCorpus:
    def test_layout_and_round_trip(self, tmp_path):
        manifest = write_corpus(SMALL, tmp_path)
        assert manifest == tmp_path / "manifest.jsonl"
        assert len(list((tmp_path / "rgb").glob("*.png"))) == SMALL.n_scenes
        assert len(list((tmp_path / "depth").glob("*.png"))) == SMALL.n_scenes

        generated = generate_scenes(SMALL, tmp_path)
        loaded = load_scenes(manifest)
        # The manifest intentionally omits planted median depths; everything
        # else must survive the round trip.
        assert loaded == [
            dataclasses.replace(
                s,
                persons=tuple(
                    dataclasses.replace(p, median_depth=None) for p in s.persons
                ),
            )
            for s in generated
        ]

    def test_written_depth_pngs_reproduce_planted_medians(self, tmp_path):
        from mingle import load_depth_map

        manifest = write_corpus(dataclasses.replace(SMALL, n_scenes=3), tmp_path)
        planted = generate_scenes(dataclasses.replace(SMALL, n_scenes=3), tmp_path)
        for scene, expected in zip(load_scenes(manifest), planted):
            depth = load_depth_map(scene.depth_path, scene.image)
            for person, source in zip(scene.persons, expected.persons):
                assert median_depth(depth, person.bbox) == source.median_depth

    def test_same_config_twice_is_byte_identical(self, tmp_path):
        m1 = write_corpus(SMALL, tmp_path / "one")
        m2 = write_corpus(SMALL, tmp_path / "two")
        assert m1.read_bytes() == m2.read_bytes()
        for name in ("rgb", "depth"):
            files1 = sorted((tmp_path / "one" / name).glob("*.png"))
            files2 = sorted((tmp_path / "two" / name).glob("*.png"))
            assert [f.name for f in files1] == [f.name for f in files2]
            assert all(a.read_bytes() == b.read_bytes() for a, b in zip(files1, files2))


def classified_square(n: int, judgment=YES) -> RelationMatrix:
    ids = list(range(n))
    return build_matrix(
        ids, {(a, b): judgment for a in ids for b in ids if a < b}
    )


class TestCorruptJudgments:
    def test_zero_rates_are_identity(self):
        matrix = classified_square(6)
        out = corrupt_judgments(matrix, 0.0, 0.0, seed=1)
        assert out == matrix
        assert out is not matrix

    def test_full_flip_swaps_yes_and_no(self):
        matrix = build_matrix(
            [1, 2, 3], {(1, 2): YES, (1, 3): NO, (2, 3): NOT_SURE}
        )
        out = corrupt_judgments(matrix, 1.0, 0.0, seed=5)
        assert out.judgment_between(1, 2) is NO
        assert out.judgment_between(1, 3) is YES
        assert out.judgment_between(2, 3) is NOT_SURE  # flip keeps Not-sure
        for i, j in out.pairs():
            assert out.provenance[i][j] is Provenance.CLASSIFIED

    def test_full_notsure_replaces_everything(self):
        out = corrupt_judgments(classified_square(5), 0.0, 1.0, seed=2)
        for i, j in out.pairs():
            assert out.entries[i][j] is NOT_SURE

    def test_non_classified_entries_are_untouched(self):
        matrix = RelationMatrix([1, 2, 3])
        matrix.set_pair(0, 1, NO, Provenance.FILTERED)
        matrix.set_pair(0, 2, YES, Provenance.CLASSIFIED)
        matrix.stats.classified = 1
        out = corrupt_judgments(matrix, 1.0, 0.0, seed=3)
        assert out.judgment_between(1, 2) is NO
        assert out.provenance[0][1] is Provenance.FILTERED
        assert out.judgment_between(1, 3) is NO  # the classified YES flipped
        assert out.entries[1][2] is NOT_SURE  # default diagonal-ish entry kept

    def test_result_stays_symmetric(self):
        out = corrupt_judgments(classified_square(7), 0.35, 0.2, seed=9)
        for i, j in out.pairs():
            assert out.entries[i][j] is out.entries[j][i]
            assert out.provenance[i][j] is out.provenance[j][i]

    def test_same_seed_same_noise(self):
        matrix = classified_square(8)
        assert corrupt_judgments(matrix, 0.3, 0.1, seed=4) == corrupt_judgments(
            matrix, 0.3, 0.1, seed=4
        )
        assert corrupt_judgments(matrix, 0.3, 0.1, seed=4) != corrupt_judgments(
            matrix, 0.3, 0.1, seed=5
        )

    def test_source_matrix_is_not_mutated(self):
        matrix = classified_square(5)
        before = matrix.copy()
        corrupt_judgments(matrix, 1.0, 0.0, seed=6)
        assert matrix == before

    def test_empirical_flip_rate(self):
        # 142 persons give C(142,2) = 10011 classified pairs.
        matrix = classified_square(142)
        out = corrupt_judgments(matrix, 0.1, 0.0, seed=123)
        flipped = sum(
            1 for i, j in out.pairs() if out.entries[i][j] is not matrix.entries[i][j]
        )
        assert flipped / 10011 == pytest.approx(0.1, abs=0.01)

    def test_flip_sets_are_nested_across_rates(self):
        # One uniform draw per pair means epsilon-0.05 flips are a subset of
        # epsilon-0.1 flips under the same seed.
        matrix = classified_square(40)
        low = corrupt_judgments(matrix, 0.05, 0.0, seed=11)
        high = corrupt_judgments(matrix, 0.10, 0.0, seed=11)
        flips_low = {
            (i, j) for i, j in matrix.pairs() if low.entries[i][j] is not matrix.entries[i][j]
        }
        flips_high = {
            (i, j) for i, j in matrix.pairs() if high.entries[i][j] is not matrix.entries[i][j]
        }
        assert flips_low <= flips_high
        assert len(flips_low) < len(flips_high)

    def test_rate_validation(self):
        matrix = classified_square(3)
        with pytest.raises(ValidationError):
            corrupt_judgments(matrix, 1.2, 0.0)
        with pytest.raises(ValidationError):
            corrupt_judgments(matrix, 0.0, -0.5)
        with pytest.raises(ValidationError, match="exceed 1"):
            corrupt_judgments(matrix, 0.7, 0.7)

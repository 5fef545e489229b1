"""Synthetic street-scene corpora with planted social groups.

Scenes are laid out so that the planted structure is unambiguous for every
backend: group members stand close together at nearly equal depth, while
distinct groups (and loners) are far apart. Rendering paints each person's
box with a constant depth value, so the median depth recovered from the PNG
equals the planted value exactly. ``corrupt_judgments`` provides seeded noise
for robustness experiments.
"""

from __future__ import annotations

import logging
import random
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .classifier import Judgment
from .depth import DepthMap
from .errors import ConfigError, ValidationError
from .geometry import BBox, ImageGeometry, enclosing_bbox, pixel_bounds
from .pair_filter import Provenance, RelationMatrix
from .scene_io import GroupAnnotation, PersonDetection, Scene, write_manifest

logger = logging.getLogger(__name__)

# entity = one planted group or one loner; slots keep entities apart
_DEPTH_LEVELS = (40, 90, 140, 190, 240)
_PALETTE = (
    (220, 80, 60),
    (60, 140, 220),
    (70, 180, 90),
    (230, 180, 50),
    (170, 90, 200),
    (240, 130, 170),
    (90, 200, 190),
    (150, 110, 70),
)


def _default_group_sizes() -> Tuple[Tuple[int, float], ...]:
    return ((2, 0.55), (3, 0.30), (4, 0.15))


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for corpus generation; defaults give easily separable scenes."""

    n_scenes: int = 200
    image: ImageGeometry = ImageGeometry(width=800, height=600)
    min_persons: int = 4
    max_persons: int = 12
    group_sizes: Tuple[Tuple[int, float], ...] = field(default_factory=_default_group_sizes)
    singleton_rate: float = 0.3
    flip_rate: float = 0.0
    notsure_rate: float = 0.0
    seed: int = 7
    # placement margins; the defaults keep intra-group gaps well inside the
    # heuristic backend's thresholds and inter-entity gaps well outside them
    intra_spread: float = 0.06
    min_entity_separation: float = 0.22
    depth_jitter: int = 6

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", tuple((int(s), float(p)) for s, p in self.group_sizes))
        if self.n_scenes < 0:
            raise ConfigError(f"n_scenes must be >= 0, got {self.n_scenes}")
        if not 1 <= self.min_persons <= self.max_persons:
            raise ConfigError(
                f"need 1 <= min_persons <= max_persons, got "
                f"{self.min_persons}..{self.max_persons}"
            )
        if not self.group_sizes:
            raise ConfigError("group_sizes must not be empty")
        for size, prob in self.group_sizes:
            if size < 2:
                raise ConfigError(f"group sizes must be >= 2, got {size}")
            if prob < 0:
                raise ConfigError(f"group size probabilities must be >= 0, got {prob}")
        total = sum(p for _, p in self.group_sizes)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"group size probabilities sum to {total}, expected 1")
        for name in ("singleton_rate", "flip_rate", "notsure_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.flip_rate + self.notsure_rate > 1.0 + 1e-9:
            raise ConfigError("flip_rate + notsure_rate must not exceed 1")
        if not 0.0 < self.intra_spread < 1.0:
            raise ConfigError(f"intra_spread must be in (0, 1), got {self.intra_spread}")
        if not 0.0 < self.min_entity_separation < 1.0:
            raise ConfigError(
                f"min_entity_separation must be in (0, 1), got {self.min_entity_separation}"
            )
        if not 0 <= self.depth_jitter <= 20:
            raise ConfigError(f"depth_jitter must be in [0, 20], got {self.depth_jitter}")
        max_size = max(s for s, _ in self.group_sizes)
        if self._member_spacing(max_size) < 12:
            raise ConfigError(
                "image too small for intra_spread and the largest group size "
                "(members would overlap)"
            )
        if len(_grid_slots(self)) < 2:
            raise ConfigError("image too small for min_entity_separation")

    def _member_spacing(self, size: int) -> float:
        """Pixel gap between adjacent members of a group of ``size``."""
        return self.intra_spread * self.image.diagonal / max(size - 1, 1)


_SLOT_JITTER = 12
_MAX_BOX_HALF_HEIGHT = 23  # ceil of (3.2 aspect x 14 px max width) / 2


def _grid_slots(cfg: SynthConfig) -> List[Tuple[int, int]]:
    """Anchor positions far enough apart that entities never look affiliated.

    Margins cover slot jitter plus the widest possible formation, so every
    member box provably stays inside the image.
    """
    spacing = int(cfg.min_entity_separation * cfg.image.diagonal) + 2 * _SLOT_JITTER
    margin_x = _SLOT_JITTER + int(cfg.intra_spread * cfg.image.diagonal / 2) + 9
    margin_y = _SLOT_JITTER + _MAX_BOX_HALF_HEIGHT + 1
    xs = list(range(margin_x, cfg.image.width - margin_x + 1, spacing))
    ys = list(range(margin_y, cfg.image.height - margin_y + 1, spacing))
    return [(x, y) for y in ys for x in xs]


def _draw_composition(cfg: SynthConfig, rng: random.Random, n_slots: int) -> List[int]:
    """Entity sizes for one scene: groups (>= 2) and loners (1)."""
    sizes = [s for s, _ in cfg.group_sizes]
    weights = [p for _, p in cfg.group_sizes]
    for _ in range(1000):
        target = rng.randint(cfg.min_persons, cfg.max_persons)
        entities: List[int] = []
        remaining = target
        while remaining > 0:
            if remaining == 1 or rng.random() < cfg.singleton_rate:
                entities.append(1)
                remaining -= 1
                continue
            feasible = [(s, w) for s, w in zip(sizes, weights) if s <= remaining]
            if not feasible or sum(w for _, w in feasible) <= 0:
                entities.append(1)
                remaining -= 1
                continue
            size = rng.choices([s for s, _ in feasible], [w for _, w in feasible])[0]
            entities.append(size)
            remaining -= size
        if len(entities) <= n_slots:
            return entities
    raise ConfigError(
        f"cannot place {cfg.max_persons} persons on {n_slots} anchor slots; "
        "reduce max_persons or min_entity_separation, or enlarge the image"
    )


def _place_entity(
    cfg: SynthConfig, rng: random.Random, anchor: Tuple[int, int], size: int
) -> Tuple[List[BBox], List[int]]:
    """Boxes and planted depth values for one entity at ``anchor``."""
    ax = anchor[0] + rng.randint(-_SLOT_JITTER, _SLOT_JITTER)
    ay = anchor[1] + rng.randint(-_SLOT_JITTER, _SLOT_JITTER)
    spacing = cfg._member_spacing(size)
    level = rng.choice(_DEPTH_LEVELS)
    boxes: List[BBox] = []
    depths: List[int] = []
    for k in range(size):
        w = rng.randint(8, max(8, min(14, int(spacing) - 4)))
        h = int(w * rng.uniform(2.2, 3.2))
        cx = ax + (k - (size - 1) / 2) * spacing
        cy = ay
        boxes.append(
            BBox(
                x1=round(cx - w / 2, 1),
                y1=round(cy - h / 2, 1),
                x2=round(cx + w / 2, 1),
                y2=round(cy + h / 2, 1),
            )
        )
        jitter = rng.randint(-cfg.depth_jitter, cfg.depth_jitter)
        depths.append(max(0, min(255, level + jitter)))
    return boxes, depths


def _scene_rng(cfg: SynthConfig, index: int) -> random.Random:
    # one stream per scene so scenes stay stable if n_scenes changes
    return random.Random(cfg.seed * 1_000_003 + index)


def generate_scenes(cfg: SynthConfig, base_dir: Union[str, Path] = Path(".")) -> List[Scene]:
    """Plant groups and loners on anchor slots; deterministic under cfg.seed.

    Returned scenes carry planted ``median_depth`` values (which rendering
    reproduces exactly) and ground-truth groups with member ids. Image paths
    point under ``base_dir`` but nothing is written; see :func:`write_corpus`.
    """
    base_dir = Path(base_dir)
    slots = _grid_slots(cfg)
    scenes: List[Scene] = []
    for index in range(cfg.n_scenes):
        rng = _scene_rng(cfg, index)
        scene_id = f"synth-{cfg.seed}-{index:04d}"
        entities = _draw_composition(cfg, rng, len(slots))
        order = rng.sample(range(len(slots)), len(entities))
        persons: List[PersonDetection] = []
        gt_groups: List[GroupAnnotation] = []
        next_id = 0
        for entity_idx, size in enumerate(entities):
            boxes, depths = _place_entity(cfg, rng, slots[order[entity_idx]], size)
            member_ids = []
            for box, depth_value in zip(boxes, depths):
                persons.append(
                    PersonDetection(
                        person_id=next_id,
                        bbox=box,
                        confidence=round(rng.uniform(0.55, 0.99), 4),
                        median_depth=depth_value,
                    )
                )
                member_ids.append(next_id)
                next_id += 1
            if size >= 2:
                gt_groups.append(
                    GroupAnnotation(
                        group_id=len(gt_groups),
                        member_ids=frozenset(member_ids),
                        bbox=enclosing_bbox(boxes),
                    )
                )
        scenes.append(
            Scene(
                scene_id=scene_id,
                image=cfg.image,
                rgb_path=base_dir / "rgb" / f"{scene_id}.png",
                depth_path=base_dir / "depth" / f"{scene_id}.png",
                persons=tuple(persons),
                gt_groups=tuple(gt_groups),
            )
        )
    return scenes


def render_depth(scene: Scene) -> DepthMap:
    """Gradient background with each person's box painted at its planted depth."""
    h, w = scene.image.height, scene.image.width
    rows = np.linspace(250, 200, h).astype(np.uint8)
    data = np.repeat(rows[:, None], w, axis=1)
    for person in scene.persons:
        if person.median_depth is None:
            raise ValidationError(
                f"scene {scene.scene_id}: person {person.person_id} has no planted depth"
            )
        x0, y0, x1, y1 = pixel_bounds(person.bbox, scene.image)
        data[y0:y1, x0:x1] = person.median_depth
    return DepthMap(values=data)


def render_rgb(scene: Scene) -> np.ndarray:
    """Flat-color stand-in image: tinted background, one filled box per person."""
    h, w = scene.image.height, scene.image.width
    tint = zlib.crc32(scene.scene_id.encode()) % 40
    data = np.full((h, w, 3), (100 + tint, 105 + tint, 115 + tint), dtype=np.uint8)
    for idx, person in enumerate(scene.persons):
        x0, y0, x1, y1 = pixel_bounds(person.bbox, scene.image)
        data[y0:y1, x0:x1] = _PALETTE[idx % len(_PALETTE)]
        data[y0, x0:x1] = (250, 250, 250)
        data[max(y1 - 1, y0), x0:x1] = (250, 250, 250)
    return data


def write_corpus(cfg: SynthConfig, out_dir: Union[str, Path]) -> Path:
    """Generate, render, and write a corpus; returns the manifest path.

    Layout: ``out_dir/manifest.jsonl`` plus ``rgb/`` and ``depth/`` PNGs.
    Same config (including seed) twice gives byte-identical files.
    """
    out_dir = Path(out_dir)
    (out_dir / "rgb").mkdir(parents=True, exist_ok=True)
    (out_dir / "depth").mkdir(parents=True, exist_ok=True)
    scenes = generate_scenes(cfg, out_dir)
    for scene in scenes:
        Image.fromarray(render_rgb(scene), mode="RGB").save(scene.rgb_path)
        Image.fromarray(render_depth(scene).values, mode="L").save(scene.depth_path)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(scenes, manifest)
    logger.info("wrote %d scene(s) under %s", len(scenes), out_dir)
    return manifest


def _flip(judgment: Judgment) -> Judgment:
    if judgment is Judgment.YES:
        return Judgment.NO
    if judgment is Judgment.NO:
        return Judgment.YES
    return judgment


def corrupt_judgments(
    matrix: RelationMatrix,
    flip_rate: float,
    notsure_rate: float = 0.0,
    seed: int = 0,
) -> RelationMatrix:
    """Noise model over classified entries; filtered/default entries untouched.

    Each classified unordered pair draws once from ``Random(seed)`` in
    canonical order: with probability ``flip_rate`` its Yes/No is inverted,
    else with probability ``notsure_rate`` it becomes Not-sure. Using a single
    draw per pair keeps corruption sets nested as ``flip_rate`` grows (same
    seed), which makes degradation-vs-noise curves well behaved.
    """
    for name, value in (("flip_rate", flip_rate), ("notsure_rate", notsure_rate)):
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"{name} must be in [0, 1], got {value}")
    if flip_rate + notsure_rate > 1.0 + 1e-9:
        raise ValidationError("flip_rate + notsure_rate must not exceed 1")
    rng = random.Random(seed)
    out = matrix.copy()
    for i, j in matrix.pairs():
        if matrix.provenance[i][j] is not Provenance.CLASSIFIED:
            continue
        u = rng.random()
        if u < flip_rate:
            out.set_pair(i, j, _flip(matrix.entries[i][j]), Provenance.CLASSIFIED)
        elif u < flip_rate + notsure_rate:
            out.set_pair(i, j, Judgment.NOT_SURE, Provenance.CLASSIFIED)
    return out

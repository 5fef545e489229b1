"""Pairwise-affiliation classification: query construction and pluggable backends.

A query packages everything a backend may need to judge one person pair:
aligned RGB/depth crops of the padded union box with both persons outlined,
the numeric depth cue, and the rendered prompt. Backends turn a query into a
three-valued judgment; the remote backend speaks the HTTP wire protocol, the
heuristic and oracle backends are deterministic local stand-ins.
"""

from __future__ import annotations

import base64
import io
import logging
import random
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Protocol, Tuple, Union

import numpy as np
import requests
from PIL import Image, UnidentifiedImageError

from .depth import DepthCue, DepthMap, depth_cue
from .errors import (
    BackendError,
    ConfigError,
    DimensionMismatchError,
    EmptyRegionError,
    MissingAssetError,
    RemoteUnavailableError,
    TemplateError,
    ValidationError,
)
from .geometry import BBox, ImageGeometry, bbox_union, center_distance, pad_bbox, pixel_bounds

if TYPE_CHECKING:
    from .scene_io import Scene

logger = logging.getLogger(__name__)

ENDPOINT_ENV_VAR = "MINGLE_CLASSIFIER_URL"

# Overlay colors: first person red, second person blue.
COLOR_PERSON_A = (255, 0, 0)
COLOR_PERSON_B = (0, 0, 255)

_PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")
_REQUIRED_PLACEHOLDERS = frozenset({"z_a", "z_b", "z_diff"})

_NOT_SURE_RE = re.compile(r"not\s+sure", re.IGNORECASE)
_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


class Judgment(Enum):
    """Three-valued pairwise affiliation answer."""

    YES = "yes"
    NO = "no"
    NOT_SURE = "not_sure"


def default_prompt_template() -> str:
    """The prompt template shipped with the package."""
    return (
        resources.files("mingle").joinpath("prompts/default.txt").read_text("utf-8")
    )


def load_prompt_template(path: Union[str, Path]) -> str:
    """Read a template file and check its placeholders."""
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(f"prompt template not found: {path}")
    template = path.read_text("utf-8")
    _check_placeholders(template)
    return template


def _check_placeholders(template: str) -> None:
    found = set(_PLACEHOLDER_RE.findall(template))
    unknown = found - _REQUIRED_PLACEHOLDERS
    if unknown:
        raise TemplateError(f"unknown placeholders in template: {sorted(unknown)}")
    missing = _REQUIRED_PLACEHOLDERS - found
    if missing:
        raise TemplateError(f"template is missing placeholders: {sorted(missing)}")


def build_prompt(template: str, cue: DepthCue) -> str:
    """Substitute the depth cue into a template with {z_a}/{z_b}/{z_diff} placeholders."""
    _check_placeholders(template)
    return template.format(z_a=cue.z_a, z_b=cue.z_b, z_diff=cue.abs_diff)


def parse_answer(raw: str) -> Judgment:
    """Map free-form answer text to a judgment. Total: never raises.

    "not sure" is checked first so it can never be misread as "no"; then the
    first standalone "yes"/"no" wins; anything else degrades to NOT_SURE with
    a logged warning.
    """
    judgment, matched = _parse_answer(raw)
    if not matched:
        logger.warning("unparseable classifier answer %r, degrading to NOT_SURE", raw)
    return judgment


def _parse_answer(raw: str) -> Tuple[Judgment, bool]:
    if _NOT_SURE_RE.search(raw):
        return Judgment.NOT_SURE, True
    m = _YES_NO_RE.search(raw)
    if m:
        return (Judgment.YES if m.group(1).lower() == "yes" else Judgment.NO), True
    return Judgment.NOT_SURE, False


@dataclass(frozen=True, eq=False)
class PairQuery:
    """Everything sent to a backend to judge one unordered person pair.

    ``rgb_crop`` and ``depth_crop`` are uint8 (h, w, 3) buffers covering the
    identical pixel region, with 1-pixel rectangles drawn for both persons.
    """

    scene_id: str
    person_a: int
    person_b: int
    union_box: BBox  # padded
    rgb_crop: np.ndarray
    depth_crop: np.ndarray
    cue: DepthCue
    prompt: str

    def __post_init__(self):
        if self.rgb_crop.shape != self.depth_crop.shape:
            raise ValidationError(
                f"rgb and depth crops must cover the identical region, got "
                f"{self.rgb_crop.shape} vs {self.depth_crop.shape}"
            )
        if self.rgb_crop.ndim != 3 or self.rgb_crop.shape[2] != 3:
            raise ValidationError(f"crops must be (h, w, 3), got {self.rgb_crop.shape}")

    @property
    def pair_id(self) -> str:
        return f"{self.scene_id}:{self.person_a}:{self.person_b}"


def load_rgb(path: Union[str, Path], expected: ImageGeometry) -> np.ndarray:
    """Read an RGB image into a uint8 (h, w, 3) array and verify its size."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise MissingAssetError(f"unreadable RGB image {path}: {exc}") from exc
    h, w = arr.shape[:2]
    if (w, h) != (expected.width, expected.height):
        raise DimensionMismatchError(
            f"RGB image {path} is {w}x{h}, expected {expected.width}x{expected.height}"
        )
    return arr


def _draw_rect(img: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    # 1-pixel outline on the pixel window [x0, x1) x [y0, y1)
    img[y0, x0:x1] = color
    img[y1 - 1, x0:x1] = color
    img[y0:y1, x0] = color
    img[y0:y1, x1 - 1] = color


def build_pair_query(
    scene: "Scene",
    rgb: np.ndarray,
    depth: DepthMap,
    a: int,
    b: int,
    pad_fraction: float = 0.1,
    template: Optional[str] = None,
) -> PairQuery:
    """Crop the padded union box identically from RGB and depth, overlay both
    person boxes, and assemble the depth cue and prompt.

    The cue is computed from the unpadded person boxes.
    """
    persons = {p.person_id: p for p in scene.persons}
    for pid in (a, b):
        if pid not in persons:
            raise ValidationError(f"person {pid} not in scene {scene.scene_id}")
    box_a = persons[a].bbox
    box_b = persons[b].bbox

    h, w = rgb.shape[:2]
    if (w, h) != (scene.image.width, scene.image.height):
        raise DimensionMismatchError(
            f"RGB buffer is {w}x{h}, scene {scene.scene_id} says "
            f"{scene.image.width}x{scene.image.height}"
        )

    padded = pad_bbox(bbox_union(box_a, box_b), pad_fraction, scene.image)
    x0, y0, x1, y1 = pixel_bounds(padded, scene.image)
    if x1 <= x0 or y1 <= y0:
        raise EmptyRegionError(
            f"pair ({a}, {b}) of scene {scene.scene_id} crops to zero pixels"
        )

    rgb_crop = np.ascontiguousarray(rgb[y0:y1, x0:x1])
    depth_crop = np.repeat(depth.values[y0:y1, x0:x1, np.newaxis], 3, axis=2)

    for box, color in ((box_a, COLOR_PERSON_A), (box_b, COLOR_PERSON_B)):
        bx0, by0, bx1, by1 = pixel_bounds(box, scene.image)
        for crop in (rgb_crop, depth_crop):
            _draw_rect(crop, bx0 - x0, by0 - y0, bx1 - x0, by1 - y0, color)

    cue = depth_cue(depth, box_a, box_b)
    prompt = build_prompt(template if template is not None else default_prompt_template(), cue)
    return PairQuery(
        scene_id=scene.scene_id,
        person_a=a,
        person_b=b,
        union_box=padded,
        rgb_crop=rgb_crop,
        depth_crop=depth_crop,
        cue=cue,
        prompt=prompt,
    )


class ClassifierBackend(Protocol):
    """Anything that can turn a PairQuery into a Judgment."""

    parallelism: int

    def classify(self, query: PairQuery) -> Judgment: ...


def classify(query: PairQuery, backend: ClassifierBackend) -> Judgment:
    """Obtain one judgment from the configured backend."""
    return backend.classify(query)


class OracleBackend:
    """Ground-truth oracle: YES iff both persons share an annotated group.

    Requires member ids on every ground-truth group of the scene.
    """

    parallelism = 1

    def __init__(self, scene: "Scene"):
        if scene.gt_groups is None:
            raise ConfigError(
                f"oracle backend needs ground-truth groups, scene {scene.scene_id} has none"
            )
        self._group_of: dict = {}
        for group in scene.gt_groups:
            if group.member_ids is None:
                raise ConfigError(
                    f"oracle backend needs member ids, group {group.group_id} of "
                    f"scene {scene.scene_id} is box-only"
                )
            for pid in group.member_ids:
                self._group_of[pid] = group.group_id

    def classify(self, query: PairQuery) -> Judgment:
        ga = self._group_of.get(query.person_a)
        gb = self._group_of.get(query.person_b)
        if ga is not None and ga == gb:
            return Judgment.YES
        return Judgment.NO


class HeuristicBackend:
    """Geometric stand-in: YES when centers are close and median depths agree.

    Exists so the full pipeline runs with zero network dependencies; makes no
    accuracy claim.
    """

    parallelism = 1

    def __init__(
        self,
        scene: "Scene",
        max_center_distance: float = 0.1,
        max_depth_diff: int = 20,
    ):
        if not 0.0 <= max_center_distance <= 1.0:
            raise ConfigError(
                f"max_center_distance must be in [0, 1], got {max_center_distance}"
            )
        if not 0 <= max_depth_diff <= 255:
            raise ConfigError(f"max_depth_diff must be in [0, 255], got {max_depth_diff}")
        self.max_center_distance = max_center_distance
        self.max_depth_diff = max_depth_diff
        self._image = scene.image
        self._boxes = {p.person_id: p.bbox for p in scene.persons}

    def classify(self, query: PairQuery) -> Judgment:
        dist = center_distance(
            self._boxes[query.person_a], self._boxes[query.person_b], self._image
        )
        if dist <= self.max_center_distance and query.cue.abs_diff <= self.max_depth_diff:
            return Judgment.YES
        return Judgment.NO


@dataclass(frozen=True)
class ClassifierEndpoint:
    """Connection settings for the remote classifier service."""

    base_url: str
    timeout: float = 30.0
    max_retries: int = 2
    max_inflight: int = 4
    backoff_base: float = 0.25  # seconds; doubles per attempt, jittered

    def __post_init__(self):
        if not self.base_url:
            raise ConfigError("endpoint base_url must be non-empty")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_inflight < 1:
            raise ConfigError(f"max_inflight must be >= 1, got {self.max_inflight}")


def _png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class RemoteBackend:
    """HTTP client for the inference service.

    POSTs {base_url}/classify with base64-PNG crops and the prompt; retries
    non-200 responses and timeouts with jittered exponential backoff, then
    raises RemoteUnavailableError. At most ``max_inflight`` requests are in
    flight at once, enforced with a semaphore so the cap holds across
    concurrent scenes.
    """

    def __init__(self, endpoint: ClassifierEndpoint, session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.parallelism = endpoint.max_inflight
        self._session = session or requests.Session()
        self._inflight = threading.BoundedSemaphore(endpoint.max_inflight)
        self._lock = threading.Lock()
        self.parse_fallbacks = 0
        self.attempts_made = 0

    def classify(self, query: PairQuery) -> Judgment:
        payload = {
            "rgb_b64": _png_b64(query.rgb_crop),
            "depth_b64": _png_b64(query.depth_crop),
            "prompt": query.prompt,
            "pair_id": query.pair_id,
        }
        url = self.endpoint.base_url.rstrip("/") + "/classify"
        attempts = self.endpoint.max_retries + 1
        last_error: object = None
        response = None
        for attempt in range(attempts):
            with self._lock:
                self.attempts_made += 1
            try:
                with self._inflight:
                    r = self._session.post(url, json=payload, timeout=self.endpoint.timeout)
                if r.status_code == 200:
                    response = r
                    break
                last_error = f"HTTP {r.status_code}"
            except requests.RequestException as exc:
                last_error = exc
            if attempt < attempts - 1:
                delay = self.endpoint.backoff_base * (2 ** attempt)
                time.sleep(delay * random.uniform(0.5, 1.5))
        if response is None:
            raise RemoteUnavailableError(
                f"classifier at {url} failed {attempts} attempts for pair "
                f"{query.pair_id}: {last_error}"
            )

        try:
            answer = response.json()["answer"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(
                f"malformed classifier response for pair {query.pair_id}: {exc}"
            ) from exc
        if not isinstance(answer, str):
            raise BackendError(
                f"classifier answer for pair {query.pair_id} is not text: {answer!r}"
            )
        judgment, matched = _parse_answer(answer)
        if not matched:
            logger.warning(
                "unparseable answer %r for pair %s, degrading to NOT_SURE",
                answer,
                query.pair_id,
            )
            with self._lock:
                self.parse_fallbacks += 1
        return judgment

"""Social-group region detection from person detections and depth maps.

The pipeline prunes person pairs by screen distance and depth agreement,
asks a pluggable classifier whether the remaining pairs are socially
affiliated, clusters the answers greedily, and emits one enclosing box per
group of two or more people. See the README for the CLI; the modules are
importable directly for programmatic use.
"""

from .classifier import (
    ClassifierBackend,
    ClassifierEndpoint,
    HeuristicBackend,
    Judgment,
    OracleBackend,
    PairQuery,
    RemoteBackend,
    build_pair_query,
    classify,
    parse_answer,
)
from .depth import DepthCue, DepthMap, depth_cue, load_depth_map, median_depth
from .errors import (
    BackendError,
    ConfigError,
    CoverageMismatchError,
    DimensionMismatchError,
    EmptyGroupError,
    EmptyRegionError,
    MingleError,
    MissingAssetError,
    MissingFileError,
    ParseError,
    RemoteUnavailableError,
    TemplateError,
    TooLargeError,
    UnsupportedFormatError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    Match,
    SceneScore,
    SweepGrid,
    SweepRow,
    match_groups,
    score,
    sweep,
    write_sweep_csv,
)
from .geometry import (
    BBox,
    ImageGeometry,
    bbox_union,
    center_distance,
    enclosing_bbox,
    iou,
    pad_bbox,
    pixel_bounds,
)
from .grouping import (
    AgreementWeights,
    GroupRegion,
    Partition,
    agreement_score,
    exhaustive_cluster,
    extract_groups,
    greedy_cluster,
)
from .pair_filter import (
    FilterParams,
    Provenance,
    RelationMatrix,
    build_relation_matrix,
    count_classifier_calls,
    refilter_matrix,
)
from .pipeline import (
    RunConfig,
    RunSummary,
    detect_corpus,
    detect_scene,
    run_detect_groups,
    run_evaluate,
    run_export_pairs,
    run_sweep,
)
from .scene_io import (
    GroupAnnotation,
    PersonDetection,
    Scene,
    filter_detections,
    load_results,
    load_scenes,
    write_manifest,
    write_results,
)
from .synth import SynthConfig, corrupt_judgments, generate_scenes, write_corpus

__version__ = "0.1.0"

__all__ = [
    "AgreementWeights",
    "BBox",
    "BackendError",
    "ClassifierBackend",
    "ClassifierEndpoint",
    "ConfigError",
    "CoverageMismatchError",
    "DepthCue",
    "DepthMap",
    "DimensionMismatchError",
    "EmptyGroupError",
    "EmptyRegionError",
    "EvalReport",
    "FilterParams",
    "GroupAnnotation",
    "GroupRegion",
    "HeuristicBackend",
    "ImageGeometry",
    "Judgment",
    "Match",
    "MingleError",
    "MissingAssetError",
    "MissingFileError",
    "OracleBackend",
    "PairQuery",
    "ParseError",
    "Partition",
    "PersonDetection",
    "Provenance",
    "RelationMatrix",
    "RemoteBackend",
    "RemoteUnavailableError",
    "RunConfig",
    "RunSummary",
    "Scene",
    "SceneScore",
    "SweepGrid",
    "SweepRow",
    "SynthConfig",
    "TemplateError",
    "TooLargeError",
    "UnsupportedFormatError",
    "ValidationError",
    "agreement_score",
    "bbox_union",
    "build_pair_query",
    "build_relation_matrix",
    "center_distance",
    "classify",
    "corrupt_judgments",
    "count_classifier_calls",
    "depth_cue",
    "detect_corpus",
    "detect_scene",
    "enclosing_bbox",
    "exhaustive_cluster",
    "extract_groups",
    "filter_detections",
    "generate_scenes",
    "greedy_cluster",
    "iou",
    "load_depth_map",
    "load_results",
    "load_scenes",
    "match_groups",
    "median_depth",
    "pad_bbox",
    "parse_answer",
    "pixel_bounds",
    "refilter_matrix",
    "run_detect_groups",
    "run_evaluate",
    "run_export_pairs",
    "run_sweep",
    "score",
    "sweep",
    "write_corpus",
    "write_manifest",
    "write_results",
    "write_sweep_csv",
]

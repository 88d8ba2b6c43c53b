"""Two-level geometric graph pipeline for human-object interaction recognition."""

from .errors import (
    CheckpointError,
    ContractError,
    EvaluationError,
    SchemaError,
    SegmentationError,
    ShapeError,
    TapeStateError,
    VocabularyError,
)
from .tape import Tensor, ParamStore, backward, finite_difference_check
from .geometry import KeypointTrack, GeometricContext, build_context, compute_velocity, normalize_positions
from .geo_graph import GeoGraphParams, GeoGraphOutput, embed_keypoints, adjacency, gcn_forward
from .fusion import (
    EntityFeatureSequence,
    FusionTopology,
    FusionParams,
    FusedNodeSet,
    attend,
    fuse,
    embed_entities,
    pool_geometry,
)
from .backbone import BackboneParams, classify_sequence, label_given_segmentation, train_step
from .segeval import (
    Segment,
    LabelTimeline,
    F1Score,
    f1_at_k,
    match_counts,
    timeline_to_segments,
    segments_to_timeline,
    cross_validate,
    evaluate_folds,
)
from .data_io import (
    VideoAnnotation,
    SynthConfig,
    load_annotation,
    save_annotation,
    load_dataset,
    generate_synthetic,
    generate_benchmark,
    synth_visual_features,
)
from .config import RunConfig
from .model import InteractionRecognizer

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ContractError",
    "EvaluationError",
    "SchemaError",
    "SegmentationError",
    "ShapeError",
    "TapeStateError",
    "VocabularyError",
    "Tensor",
    "ParamStore",
    "backward",
    "finite_difference_check",
    "KeypointTrack",
    "GeometricContext",
    "build_context",
    "compute_velocity",
    "normalize_positions",
    "GeoGraphParams",
    "GeoGraphOutput",
    "embed_keypoints",
    "adjacency",
    "gcn_forward",
    "EntityFeatureSequence",
    "FusionTopology",
    "FusionParams",
    "FusedNodeSet",
    "attend",
    "fuse",
    "embed_entities",
    "pool_geometry",
    "BackboneParams",
    "classify_sequence",
    "label_given_segmentation",
    "train_step",
    "Segment",
    "LabelTimeline",
    "F1Score",
    "f1_at_k",
    "match_counts",
    "timeline_to_segments",
    "segments_to_timeline",
    "cross_validate",
    "evaluate_folds",
    "VideoAnnotation",
    "SynthConfig",
    "load_annotation",
    "save_annotation",
    "load_dataset",
    "generate_synthetic",
    "generate_benchmark",
    "synth_visual_features",
    "RunConfig",
    "InteractionRecognizer",
]

"""Annotation schema, loaders, and a deterministic synthetic sequence generator.

One structured-text (JSON) annotation file per video holds skeleton tracks,
object box corners, frame-wise labels, and vocabulary references; visual
features live in a small binary sidecar format. The synthetic generator
scripts hand/object motion patterns (idle, approach, retreat, lift, place)
so the full pipeline is testable at desk scale without the real datasets.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, LengthError, SchemaError, VocabularyError
from .fusion import EntityFeatureSequence
from .geometry import HUMAN, OBJECT, KeypointTrack
from .seeding import substream as _substream

ANNOTATION_SCHEMA = "hoi-video-annotation"
VOCABULARY_SCHEMA = "hoi-vocabulary"
MANIFEST_SCHEMA = "hoi-dataset-manifest"
SCHEMA_VERSION = 1

FEATURE_MAGIC = b"HOIVFT"
FEATURE_VERSION = 1

MOTION_PATTERNS = ("idle", "approach", "retreat", "lift", "place")


def canonical_json_bytes(payload) -> bytes:
    """The one true byte encoding: sorted keys, 2-space indent, trailing newline."""
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# typed records


@dataclass
class TrackRecord:
    """One keypoint's per-frame pixel coordinates and validity flags."""

    xs: np.ndarray
    ys: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64).reshape(-1)
        self.ys = np.asarray(self.ys, dtype=np.float64).reshape(-1)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)

    @property
    def frame_count(self) -> int:
        return self.xs.shape[0]

    def positions(self) -> np.ndarray:
        return np.stack([self.xs, self.ys], axis=1)


@dataclass
class EntityRecord:
    """One human (K joint tracks) or object (2 corner tracks) with its labels."""

    kind: str
    index: int
    category: str
    tracks: list
    labels: list | None
    feature_file: str | None = None


@dataclass
class VideoAnnotation:
    video_id: str
    subject_ids: tuple
    frame_count: int
    frame_width: int
    frame_height: int
    vocabularies: dict
    humans: list
    objects: list
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    @property
    def n_humans(self) -> int:
        return len(self.humans)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_joints(self) -> int:
        return len(self.humans[0].tracks) if self.humans else 0

    def entities(self):
        yield from self.humans
        yield from self.objects

    def labeled_entities(self):
        """Yield ((kind, index), 0-based class ids, vocabulary) per labeled entity."""
        for entity in self.entities():
            if entity.labels is None:
                continue
            vocab = tuple(self.vocabularies[entity.kind])
            index_of = {name: i for i, name in enumerate(vocab)}
            ids = np.array([index_of[name] for name in entity.labels], dtype=np.intp)
            yield (entity.kind, entity.index), ids, vocab

    def keypoint_tracks(self) -> tuple[list, list]:
        """Pixel-space KeypointTracks (humans, objects) for geometry building."""
        humans, objects = [], []
        for entity in self.humans:
            for j, track in enumerate(entity.tracks, start=1):
                humans.append(KeypointTrack(entity_kind=HUMAN, entity_index=entity.index,
                                            keypoint_index=j, positions=track.positions(),
                                            valid=track.valid.copy()))
        for entity in self.objects:
            for c, track in enumerate(entity.tracks, start=1):
                objects.append(KeypointTrack(entity_kind=OBJECT, entity_index=entity.index,
                                             keypoint_index=c, positions=track.positions(),
                                             valid=track.valid.copy()))
        return humans, objects

    def validate(self) -> "VideoAnnotation":
        _validate_annotation(self)
        return self


# ---------------------------------------------------------------------------
# payload <-> records

_PATH_KINDS = {HUMAN: "humans", OBJECT: "objects"}


def _expect(payload, key: str, kind, path: str):
    if not isinstance(payload, dict):
        raise SchemaError(f"{path}: expected an object, got {type(payload).__name__}")
    if key not in payload:
        raise SchemaError(f"{path}: missing field {key!r}")
    value = payload[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}.{key}: expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{path}.{key}: expected an integer, got {type(value).__name__}")
        return value
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _number_list(payload, key: str, path: str) -> list:
    values = _expect(payload, key, list, path)
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{path}.{key}[{i}]: expected a number, got {type(v).__name__}")
        if not np.isfinite(v):
            raise SchemaError(f"{path}.{key}[{i}]: value is not finite")
        out.append(float(v))
    return out


def _bool_list(payload, key: str, path: str) -> list:
    values = _expect(payload, key, list, path)
    for i, v in enumerate(values):
        if not isinstance(v, bool):
            raise SchemaError(f"{path}.{key}[{i}]: expected a boolean, got {type(v).__name__}")
    return list(values)


def _track_from_payload(payload, path: str) -> TrackRecord:
    return TrackRecord(xs=_number_list(payload, "x", path),
                       ys=_number_list(payload, "y", path),
                       valid=_bool_list(payload, "valid", path))


def _entity_from_payload(payload, kind: str, i: int) -> EntityRecord:
    path = f"{_PATH_KINDS[kind]}[{i}]"
    tracks_key = "joints" if kind == HUMAN else "corners"
    track_payloads = _expect(payload, tracks_key, list, path)
    tracks = [_track_from_payload(t, f"{path}.{tracks_key}[{j}]")
              for j, t in enumerate(track_payloads)]
    labels = payload.get("labels")
    if labels is not None:
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise SchemaError(f"{path}.labels: expected a list of strings")
    feature_file = payload.get("feature_file")
    if feature_file is not None and (not isinstance(feature_file, str) or not feature_file):
        raise SchemaError(f"{path}.feature_file: expected a nonempty string or null")
    return EntityRecord(kind=kind, index=_expect(payload, "index", int, path),
                        category=_expect(payload, "category", str, path),
                        tracks=tracks, labels=labels, feature_file=feature_file)


def annotation_from_payload(payload) -> VideoAnnotation:
    if not isinstance(payload, dict):
        raise SchemaError(f"annotation: expected a JSON object, got {type(payload).__name__}")
    schema = _expect(payload, "schema", str, "annotation")
    if schema != ANNOTATION_SCHEMA:
        raise SchemaError(f"annotation.schema: expected {ANNOTATION_SCHEMA!r}, got {schema!r}")
    version = _expect(payload, "version", int, "annotation")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"annotation.version: unsupported version {version}")
    vocab_payload = _expect(payload, "vocabularies", dict, "annotation")
    vocabularies = {}
    for kind, names in vocab_payload.items():
        if kind not in (HUMAN, OBJECT):
            raise SchemaError(f"vocabularies.{kind}: unknown entity kind")
        if not isinstance(names, list) or not all(isinstance(n, str) and n for n in names):
            raise SchemaError(f"vocabularies.{kind}: expected a list of nonempty strings")
        vocabularies[kind] = tuple(names)
    subject_ids = _expect(payload, "subject_ids", list, "annotation")
    if not subject_ids or not all(isinstance(s, str) and s for s in subject_ids):
        raise SchemaError("annotation.subject_ids: expected a nonempty list of nonempty strings")
    humans = [_entity_from_payload(p, HUMAN, i)
              for i, p in enumerate(_expect(payload, "humans", list, "annotation"))]
    objects = [_entity_from_payload(p, OBJECT, i)
               for i, p in enumerate(_expect(payload, "objects", list, "annotation"))]
    annotation = VideoAnnotation(
        video_id=_expect(payload, "video_id", str, "annotation"),
        subject_ids=tuple(subject_ids),
        frame_count=_expect(payload, "frame_count", int, "annotation"),
        frame_width=_expect(payload, "frame_width", int, "annotation"),
        frame_height=_expect(payload, "frame_height", int, "annotation"),
        vocabularies=vocabularies,
        humans=humans,
        objects=objects,
    )
    return annotation.validate()


def _track_payload(track: TrackRecord) -> dict:
    return {"x": [float(v) for v in track.xs],
            "y": [float(v) for v in track.ys],
            "valid": [bool(v) for v in track.valid]}


def annotation_to_payload(annotation: VideoAnnotation) -> dict:
    def entity_payload(entity: EntityRecord) -> dict:
        tracks_key = "joints" if entity.kind == HUMAN else "corners"
        return {"index": entity.index,
                "category": entity.category,
                tracks_key: [_track_payload(t) for t in entity.tracks],
                "labels": list(entity.labels) if entity.labels is not None else None,
                "feature_file": entity.feature_file}

    return {"schema": ANNOTATION_SCHEMA,
            "version": SCHEMA_VERSION,
            "video_id": annotation.video_id,
            "subject_ids": list(annotation.subject_ids),
            "frame_count": annotation.frame_count,
            "frame_width": annotation.frame_width,
            "frame_height": annotation.frame_height,
            "vocabularies": {k: list(v) for k, v in annotation.vocabularies.items()},
            "humans": [entity_payload(e) for e in annotation.humans],
            "objects": [entity_payload(e) for e in annotation.objects]}


def _validate_annotation(annotation: VideoAnnotation) -> None:
    if not annotation.video_id:
        raise SchemaError("annotation.video_id: must be nonempty")
    if len(set(annotation.subject_ids)) != len(annotation.subject_ids):
        raise SchemaError("annotation.subject_ids: duplicate subject id")
    t_count = annotation.frame_count
    if t_count < 1:
        raise SchemaError(f"annotation.frame_count: must be >= 1, got {t_count}")
    if annotation.frame_width < 1 or annotation.frame_height < 1:
        raise SchemaError("annotation.frame_width/frame_height: must be >= 1")
    for kind, names in annotation.vocabularies.items():
        if len(set(names)) != len(names):
            raise SchemaError(f"vocabularies.{kind}: duplicate class name")

    joint_counts = {len(e.tracks) for e in annotation.humans}
    if len(joint_counts) > 1:
        raise SchemaError(f"humans: all humans must share one joint count, got {sorted(joint_counts)}")
    if annotation.humans and min(joint_counts) < 1:
        raise SchemaError("humans: need at least one joint per human")

    for entity in annotation.entities():
        path = f"{_PATH_KINDS[entity.kind]}[{entity.index - 1}]"
        tracks_key = "joints" if entity.kind == HUMAN else "corners"
        if entity.kind == OBJECT and len(entity.tracks) != 2:
            raise SchemaError(f"{path}.corners: objects need exactly 2 corners, "
                              f"got {len(entity.tracks)}")
        if not entity.category:
            raise SchemaError(f"{path}.category: must be nonempty")
        for j, track in enumerate(entity.tracks):
            for key, n in (("x", track.xs.shape[0]), ("y", track.ys.shape[0]),
                           ("valid", track.valid.shape[0])):
                if n != t_count:
                    raise LengthError(f"{path}.{tracks_key}[{j}].{key}: expected "
                                      f"{t_count} values, got {n}")
        if entity.labels is not None:
            if len(entity.labels) != t_count:
                raise LengthError(f"{path}.labels: expected {t_count} values, "
                                  f"got {len(entity.labels)}")
            vocab = annotation.vocabularies.get(entity.kind)
            if vocab is None:
                raise VocabularyError(f"{path}.labels: no {entity.kind!r} vocabulary declared")
            known = set(vocab)
            for f, name in enumerate(entity.labels):
                if name not in known:
                    raise VocabularyError(f"{path}.labels[{f}]: unknown label {name!r}")

    indexes = [e.index for e in annotation.humans]
    if indexes != list(range(1, len(indexes) + 1)):
        raise SchemaError(f"humans: indexes must be 1..{len(indexes)} in order, got {indexes}")
    indexes = [e.index for e in annotation.objects]
    if indexes != list(range(1, len(indexes) + 1)):
        raise SchemaError(f"objects: indexes must be 1..{len(indexes)} in order, got {indexes}")

    for entity in annotation.objects:
        tl, br = entity.tracks
        both = tl.valid & br.valid
        for f in np.flatnonzero(both):
            if tl.xs[f] > br.xs[f] or tl.ys[f] > br.ys[f]:
                axis = "x1 > x2" if tl.xs[f] > br.xs[f] else "y1 > y2"
                raise SchemaError(f"objects[{entity.index - 1}]: frame {f + 1} box corners "
                                  f"inverted ({axis})")


def load_annotation(path) -> VideoAnnotation:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: not valid JSON: {exc}") from exc
    annotation = annotation_from_payload(payload)
    annotation.base_dir = path.parent
    return annotation


def save_annotation(annotation: VideoAnnotation, path) -> Path:
    annotation.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_json_bytes(annotation_to_payload(annotation)))
    return path


# ---------------------------------------------------------------------------
# vocabulary and feature files


def save_vocabulary(kind: str, classes, path) -> Path:
    if kind not in (HUMAN, OBJECT):
        raise ContractError(f"unknown entity kind {kind!r}")
    classes = list(classes)
    if not classes or len(set(classes)) != len(classes):
        raise ContractError("vocabulary must be a nonempty list of unique names")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_json_bytes({"schema": VOCABULARY_SCHEMA,
                                           "version": SCHEMA_VERSION,
                                           "kind": kind, "classes": classes}))
    return path


def load_vocabulary(path) -> tuple[str, tuple]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: not valid JSON: {exc}") from exc
    if _expect(payload, "schema", str, "vocabulary") != VOCABULARY_SCHEMA:
        raise SchemaError(f"{path.name}: not a vocabulary file")
    if _expect(payload, "version", int, "vocabulary") != SCHEMA_VERSION:
        raise SchemaError(f"{path.name}: unsupported vocabulary version")
    kind = _expect(payload, "kind", str, "vocabulary")
    classes = _expect(payload, "classes", list, "vocabulary")
    if kind not in (HUMAN, OBJECT):
        raise SchemaError(f"vocabulary.kind: unknown entity kind {kind!r}")
    if not classes or not all(isinstance(c, str) and c for c in classes):
        raise SchemaError("vocabulary.classes: expected nonempty strings")
    if len(set(classes)) != len(classes):
        raise SchemaError("vocabulary.classes: duplicate class name")
    return kind, tuple(classes)


def save_features(matrix, path) -> Path:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ContractError(f"feature matrix must be (T, dim) with both >= 1, got {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ContractError("feature matrix contains non-finite values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FEATURE_MAGIC + struct.pack("<HII", FEATURE_VERSION, *matrix.shape)
    path.write_bytes(header + matrix.astype("<f4").tobytes(order="C"))
    return path


def load_features(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    head = len(FEATURE_MAGIC) + struct.calcsize("<HII")
    if len(blob) < head or not blob.startswith(FEATURE_MAGIC):
        raise SchemaError(f"{path.name}: not a feature file (bad magic)")
    version, t_count, dim = struct.unpack("<HII", blob[len(FEATURE_MAGIC):head])
    if version != FEATURE_VERSION:
        raise SchemaError(f"{path.name}: unsupported feature file version {version}")
    expected = head + 4 * t_count * dim
    if len(blob) != expected:
        raise LengthError(f"{path.name}: expected {expected} bytes for {t_count}x{dim} "
                          f"features, got {len(blob)}")
    data = np.frombuffer(blob[head:], dtype="<f4").reshape(t_count, dim)
    return data.astype(np.float64)


# ---------------------------------------------------------------------------
# dataset directories


@dataclass
class Dataset:
    root: Path
    videos: list
    vocabularies: dict

    @property
    def subject_ids(self) -> tuple:
        return tuple(sorted({s for v in self.videos for s in v.subject_ids}))


def write_dataset(annotations, vocabularies: dict, out_dir,
                  features: dict | None = None) -> Path:
    """Write annotations, vocabulary files, optional features, and a manifest.

    features maps video_id -> {(kind, index): (T, dim) array}; entity
    feature_file fields are filled with the relative paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    video_paths = []
    for annotation in annotations:
        if features and annotation.video_id in features:
            for entity in annotation.entities():
                key = (entity.kind, entity.index)
                matrix = features[annotation.video_id].get(key)
                if matrix is not None:
                    rel = f"../features/{annotation.video_id}_{entity.kind}{entity.index}.bin"
                    save_features(matrix, out_dir / "videos" / rel)
                    entity.feature_file = rel
        rel_path = f"videos/{annotation.video_id}.json"
        save_annotation(annotation, out_dir / rel_path)
        video_paths.append(rel_path)
    vocab_paths = {}
    for kind, classes in sorted(vocabularies.items()):
        rel = f"{kind}_vocabulary.json"
        save_vocabulary(kind, classes, out_dir / rel)
        vocab_paths[kind] = rel
    manifest = {"schema": MANIFEST_SCHEMA, "version": SCHEMA_VERSION,
                "videos": sorted(video_paths), "vocabularies": vocab_paths,
                "video_count": len(video_paths)}
    (out_dir / "manifest.json").write_bytes(canonical_json_bytes(manifest))
    return out_dir


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{root}: no manifest.json found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest.json: not valid JSON: {exc}") from exc
    if _expect(manifest, "schema", str, "manifest") != MANIFEST_SCHEMA:
        raise SchemaError("manifest.schema: not a dataset manifest")
    if _expect(manifest, "version", int, "manifest") != SCHEMA_VERSION:
        raise SchemaError("manifest.version: unsupported version")
    vocabularies = {}
    for kind, rel in _expect(manifest, "vocabularies", dict, "manifest").items():
        loaded_kind, classes = load_vocabulary(root / rel)
        if loaded_kind != kind:
            raise SchemaError(f"manifest.vocabularies.{kind}: file declares kind {loaded_kind!r}")
        vocabularies[kind] = classes
    videos = []
    for rel in _expect(manifest, "videos", list, "manifest"):
        annotation = load_annotation(root / rel)
        for kind, vocab in annotation.vocabularies.items():
            if kind in vocabularies and vocab != vocabularies[kind]:
                raise VocabularyError(f"{annotation.video_id}: {kind} vocabulary differs "
                                      f"from the dataset-level vocabulary")
        videos.append(annotation)
    return Dataset(root=root, videos=videos, vocabularies=vocabularies)


def entity_features(annotation: VideoAnnotation, feature_dim: int,
                    seed: int) -> list[EntityFeatureSequence]:
    """Per-entity features: from referenced files when present, synthesized otherwise."""
    sequences = []
    missing = [e for e in annotation.entities() if e.feature_file is None]
    synthesized = {s.key: s for s in synth_visual_features(annotation, feature_dim, seed)} \
        if missing else {}
    for entity in annotation.entities():
        if entity.feature_file is None:
            sequences.append(synthesized[(entity.kind, entity.index)])
            continue
        base = annotation.base_dir or Path(".")
        matrix = load_features(base / entity.feature_file)
        if matrix.shape[0] != annotation.frame_count:
            raise LengthError(f"{entity.feature_file}: {matrix.shape[0]} frames of features "
                              f"for a {annotation.frame_count}-frame video")
        sequences.append(EntityFeatureSequence(entity_kind=entity.kind,
                                               entity_index=entity.index, features=matrix))
    return sequences


# ---------------------------------------------------------------------------
# synthetic generation

MARGIN = 0.15
OBJECT_HALF = 0.04
NEAR_DISTANCE = 0.03
MAX_GRIP = 0.05


@dataclass(frozen=True)
class MotionStep:
    """One scripted block: the label written out and the motion pattern acted."""

    label: str
    duration: int
    pattern: str

    def __post_init__(self):
        if self.pattern not in MOTION_PATTERNS:
            raise ContractError(f"unknown motion pattern {self.pattern!r}; "
                                f"known: {MOTION_PATTERNS}")
        if self.duration < 1:
            raise ContractError(f"step duration must be >= 1, got {self.duration}")


@dataclass(frozen=True)
class SynthConfig:
    video_id: str
    subject_ids: tuple
    seed: int
    n_humans: int
    n_objects: int
    n_joints: int
    frame_count: int
    scripts: tuple                      # one tuple of MotionStep per human
    human_classes: tuple
    object_classes: tuple = ("stationary", "carried")
    noise_amplitude: float = 2.0        # pixels
    occlusion_rate: float = 0.0
    frame_width: int = 2160
    frame_height: int = 2160

    def validate(self) -> "SynthConfig":
        if self.n_humans < 1 or self.n_joints < 1 or self.n_objects < 0:
            raise ContractError("need n_humans >= 1, n_joints >= 1, n_objects >= 0")
        if self.frame_count < 2:
            raise ContractError("need at least 2 frames")
        if not 0.0 <= self.occlusion_rate < 1.0:
            raise ContractError(f"occlusion rate must lie in [0, 1), got {self.occlusion_rate}")
        if self.noise_amplitude < 0:
            raise ContractError("noise amplitude must be nonnegative")
        if len(self.subject_ids) != self.n_humans:
            raise ContractError(f"{self.n_humans} humans need {self.n_humans} subject ids, "
                                f"got {len(self.subject_ids)}")
        if len(self.scripts) != self.n_humans:
            raise ContractError(f"need one script per human, got {len(self.scripts)} "
                                f"for {self.n_humans}")
        for h, script in enumerate(self.scripts, start=1):
            total = sum(step.duration for step in script)
            if total != self.frame_count:
                raise ContractError(f"script for human {h} covers {total} frames, "
                                    f"video has {self.frame_count}")
            for step in script:
                if step.label not in self.human_classes:
                    raise ContractError(f"script label {step.label!r} not in human classes")
                if step.pattern != "idle" and self.n_objects == 0:
                    raise ContractError(f"pattern {step.pattern!r} needs an object, "
                                        f"but n_objects == 0")
        return self


def _target_object(human_index: int, n_objects: int) -> int:
    """Deterministic pairing rule: human h manipulates object ((h-1) mod F) + 1."""
    return (human_index - 1) % n_objects + 1


def _ray_to_margin_box(center: np.ndarray, direction: np.ndarray) -> float:
    """Distance from center along direction to the [MARGIN, 1-MARGIN]^2 boundary."""
    best = np.inf
    for axis in range(2):
        d = direction[axis]
        if abs(d) < 1e-12:
            continue
        for bound in (MARGIN, 1.0 - MARGIN):
            s = (bound - center[axis]) / d
            if s > 0:
                best = min(best, s)
    return best


def generate_synthetic(config: SynthConfig) -> VideoAnnotation:
    """Script-driven deterministic annotation with measurable motion semantics.

    Approach strictly decreases the acting hand's distance to its target
    object's center frame over frame; retreat strictly increases it; lift and
    place translate the object vertically with the hand attached; idle leaves
    base positions alone. All coordinates stay inside the frame.
    """
    config.validate()
    t_count = config.frame_count
    layout = _substream(config.seed, "layout", config.video_id)
    jitter = _substream(config.seed, "jitter", config.video_id)
    occlusion = _substream(config.seed, "occlusion", config.video_id)

    # object base placement, evenly spread with a little scatter
    centers = np.zeros((config.n_objects, t_count, 2))
    for f in range(config.n_objects):
        frac = 0.5 if config.n_objects == 1 else f / (config.n_objects - 1)
        base = np.array([0.3 + 0.4 * frac, 0.62]) + layout.uniform(-0.02, 0.02, size=2)
        centers[f, :] = base

    # human rest poses
    rest = np.zeros((config.n_humans, 2))
    for h in range(config.n_humans):
        frac = 0.5 if config.n_humans == 1 else h / (config.n_humans - 1)
        rest[h] = np.array([0.22 + 0.56 * frac, 0.3]) + layout.uniform(-0.02, 0.02, size=2)

    hands = np.zeros((config.n_humans, t_count, 2))
    human_labels = []
    object_carried = np.zeros((config.n_objects, t_count), dtype=bool)

    # pass 1: object translations from lift/place steps, chronological per object
    moves = []
    for h, script in enumerate(config.scripts):
        start = 0
        for step in script:
            if step.pattern in ("lift", "place") and config.n_objects:
                moves.append((start, start + step.duration, step.pattern,
                              _target_object(h + 1, config.n_objects) - 1))
            start += step.duration
    for start, stop, pattern, obj in sorted(moves):
        c_start = centers[obj, start].copy()
        if pattern == "lift":
            span = (c_start[1] - (MARGIN + OBJECT_HALF)) * 0.8
            dy = -min(0.1, max(span, 0.0))
        else:
            span = ((1.0 - MARGIN - OBJECT_HALF) - c_start[1]) * 0.8
            dy = min(0.1, max(span, 0.0))
        length = stop - start
        for i in range(length):
            centers[obj, start + i, 1] = c_start[1] + dy * (i + 1) / length
        centers[obj, stop:, :] = centers[obj, stop - 1, :]
        object_carried[obj, start:stop] = True

    # pass 2: hand trajectories against the now-final object centers
    for h, script in enumerate(config.scripts):
        hand = rest[h] + np.array([0.05, 0.08])
        labels = []
        start = 0
        for step in script:
            stop = start + step.duration
            length = step.duration
            labels.extend([step.label] * length)
            target = _target_object(h + 1, config.n_objects) - 1 if config.n_objects else -1
            if step.pattern == "idle":
                for i in range(length):
                    hands[h, start + i] = hand + jitter.uniform(
                        -config.noise_amplitude, config.noise_amplitude, size=2
                    ) / config.frame_width
            elif step.pattern in ("approach", "retreat"):
                c0 = centers[target, start]
                delta = hand - c0
                d0 = float(np.hypot(*delta))
                if d0 < 1e-6:
                    raise ContractError(f"{step.pattern!r} step starts with the hand already "
                                        f"at the object center (human {h + 1})")
                theta0 = np.arctan2(delta[1], delta[0])
                if step.pattern == "approach":
                    d_end = min(NEAR_DISTANCE, 0.5 * d0)
                    angles = theta0 + np.cumsum(jitter.uniform(-0.05, 0.05, size=length))
                else:
                    direction = delta / d0
                    s_max = _ray_to_margin_box(c0, direction)
                    if s_max <= d0:
                        raise ContractError(f"retreat step starts with the hand outside the "
                                            f"working margin (human {h + 1})")
                    d_end = d0 + min(0.12, 0.9 * (s_max - d0))
                    angles = np.full(length, theta0)
                schedule = d0 + (d_end - d0) * (np.arange(1, length + 1) / length)
                for i in range(length):
                    c_now = centers[target, start + i]
                    hands[h, start + i] = c_now + schedule[i] * np.array(
                        [np.cos(angles[i]), np.sin(angles[i])])
            else:  # lift / place: hand rides the object
                c0 = centers[target, start - 1] if start else centers[target, start]
                grip = hand - c0
                norm = float(np.hypot(*grip))
                if norm < 1e-9:
                    grip = np.array([0.0, -MAX_GRIP / 2])
                elif norm > MAX_GRIP:
                    grip = grip * (MAX_GRIP / norm)
                for i in range(length):
                    hands[h, start + i] = centers[target, start + i] + grip
            hand = hands[h, stop - 1].copy()
            start = stop
        human_labels.append(labels)

    # assemble entity records
    noise_norm = config.noise_amplitude / config.frame_width
    scale = np.array([config.frame_width, config.frame_height], dtype=np.float64)

    def occluded(shape) -> np.ndarray:
        if config.occlusion_rate == 0.0:
            return np.ones(shape, dtype=bool)
        return occlusion.random(shape) >= config.occlusion_rate

    humans = []
    for h in range(config.n_humans):
        tracks = []
        valid = occluded((config.n_joints, t_count))
        for j in range(config.n_joints):
            if j == 0:
                positions = hands[h].copy()
            else:
                angle = 2 * np.pi * (j - 1) / max(config.n_joints - 1, 1)
                offset = 0.06 * np.array([np.cos(angle), np.sin(angle)])
                positions = rest[h] + offset + jitter.uniform(
                    -noise_norm, noise_norm, size=(t_count, 2))
            pixels = np.clip(positions, 0.0, 1.0) * scale
            tracks.append(TrackRecord(xs=pixels[:, 0], ys=pixels[:, 1], valid=valid[j]))
        humans.append(EntityRecord(kind=HUMAN, index=h + 1, category="person",
                                   tracks=tracks, labels=human_labels[h]))

    objects = []
    for f in range(config.n_objects):
        half = np.array([OBJECT_HALF, OBJECT_HALF])
        tl = np.clip(centers[f] - half, 0.0, 1.0) * scale
        br = np.clip(centers[f] + half, 0.0, 1.0) * scale
        valid = occluded((2, t_count))
        labels = ["carried" if object_carried[f, t] else "stationary" for t in range(t_count)]
        objects.append(EntityRecord(
            kind=OBJECT, index=f + 1, category="box",
            tracks=[TrackRecord(xs=tl[:, 0], ys=tl[:, 1], valid=valid[0]),
                    TrackRecord(xs=br[:, 0], ys=br[:, 1], valid=valid[1])],
            labels=labels))

    vocabularies = {HUMAN: tuple(config.human_classes)}
    if config.n_objects:
        vocabularies[OBJECT] = tuple(config.object_classes)
    annotation = VideoAnnotation(
        video_id=config.video_id, subject_ids=tuple(config.subject_ids),
        frame_count=t_count, frame_width=config.frame_width,
        frame_height=config.frame_height, vocabularies=vocabularies,
        humans=humans, objects=objects)
    return annotation.validate()


POSITION_COMPONENT_WEIGHT = 0.25
FEATURE_NOISE_SCALE = 0.15


def synth_visual_features(annotation: VideoAnnotation, dim: int,
                          seed: int) -> list[EntityFeatureSequence]:
    """Deterministic stand-in for per-entity visual feature vectors.

    Each entity gets a fixed category embedding plus a small
    position-dependent component (its primary keypoint -- first track: the
    acting hand of a human, the first box corner of an object -- through a
    shared projection) plus noise. The position weight is deliberately well
    below the noise floor for single-frame motions: appearance features hint
    at where an entity is, but per-frame dynamics are the geometric stream's
    job. Identical (annotation, dim, seed) give identical output.
    """
    if dim < 8:
        raise ContractError(f"feature dim must be >= 8, got {dim}")
    proj = _substream(seed, "features", "projection").normal(0.0, 1.0, size=(2, dim))
    scale = np.array([annotation.frame_width, annotation.frame_height], dtype=np.float64)
    sequences = []
    for entity in annotation.entities():
        class_vec = _substream(seed, "features", "class", entity.category).normal(0.0, 1.0, dim)
        noise_rng = _substream(seed, "features", "noise", annotation.video_id,
                               entity.kind, entity.index)
        anchor = entity.tracks[0].positions() / scale                  # (T, 2)
        features = (class_vec[None, :]
                    + POSITION_COMPONENT_WEIGHT * anchor @ proj
                    + FEATURE_NOISE_SCALE
                    * noise_rng.normal(size=(annotation.frame_count, dim)))
        sequences.append(EntityFeatureSequence(entity_kind=entity.kind,
                                               entity_index=entity.index,
                                               features=features))
    return sequences


# ---------------------------------------------------------------------------
# the reference synthetic benchmark

BENCHMARK_CLASSES = ("idle", "approach", "lift", "place", "retreat")
_TEMPLATES = (
    ("idle", "approach", "lift", "place", "retreat"),
    ("approach", "lift", "place", "retreat", "idle"),
    ("approach", "lift", "place", "idle", "retreat"),
)


def _benchmark_script(rng: np.random.Generator, template, t_count: int,
                      lo: int = 6, hi: int = 12) -> tuple:
    n_steps = len(template)
    if not n_steps * lo <= t_count <= n_steps * hi:
        raise ContractError(f"cannot split {t_count} frames into {n_steps} steps "
                            f"of {lo}..{hi}")
    durations = np.full(n_steps, lo)
    for _ in range(t_count - n_steps * lo):
        open_steps = np.flatnonzero(durations < hi)
        durations[rng.choice(open_steps)] += 1
    return tuple(MotionStep(label=p, duration=int(d), pattern=p)
                 for p, d in zip(template, durations))


def benchmark_configs(seed: int, n_subjects: int = 4, videos_per_pair: int = 4,
                      n_objects: int = 2, n_joints: int = 5, frame_count: int = 48,
                      occlusion_rate: float = 0.1) -> list[SynthConfig]:
    """The reference benchmark: every unordered subject pair appears in
    videos_per_pair two-person videos with scripted, separable motions."""
    import itertools
    subjects = [f"s{i + 1}" for i in range(n_subjects)]
    configs = []
    for a, b in itertools.combinations(subjects, 2):
        for r in range(1, videos_per_pair + 1):
            video_id = f"{a}_{b}_run{r}"
            scripts = []
            for h in range(2):
                template = _TEMPLATES[(r + h) % len(_TEMPLATES)]
                script_rng = _substream(seed, "script", video_id, h)
                scripts.append(_benchmark_script(script_rng, template, frame_count))
            configs.append(SynthConfig(
                video_id=video_id, subject_ids=(a, b), seed=seed,
                n_humans=2, n_objects=n_objects, n_joints=n_joints,
                frame_count=frame_count, scripts=tuple(scripts),
                human_classes=BENCHMARK_CLASSES, occlusion_rate=occlusion_rate))
    return configs


def generate_benchmark(seed: int, out_dir, feature_dim: int = 32, **overrides) -> Path:
    """Generate the benchmark dataset with feature files into out_dir."""
    configs = benchmark_configs(seed, **overrides)
    annotations = [generate_synthetic(c) for c in configs]
    features = {}
    for annotation in annotations:
        features[annotation.video_id] = {
            s.key: s.features for s in synth_visual_features(annotation, feature_dim, seed)}
    vocabularies = {HUMAN: list(BENCHMARK_CLASSES), OBJECT: ["stationary", "carried"]}
    return write_dataset(annotations, vocabularies, out_dir, features=features)

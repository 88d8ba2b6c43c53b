"""Segment-level evaluation: F1@k over IoU-matched segments and cross-validation.

Frame-wise label timelines are converted to maximal constant runs, predicted
runs are greedily matched to same-class ground-truth runs by IoU, and the
resulting precision/recall/F1 at several IoU thresholds are aggregated over
leave-one-subject (or leave-pair) folds with mean and population std.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .errors import ContractError, SegmentationError, VocabularyError

DEFAULT_K_THRESHOLDS = (0.1, 0.25, 0.5)
JOINED = "joined"
GIVEN_SEGMENTATION = "given_segmentation"


@dataclass(frozen=True)
class Segment:
    """A maximal constant-label run, 1-based inclusive on both ends."""

    start: int
    end: int
    class_id: object

    def __post_init__(self):
        if self.start < 1:
            raise SegmentationError(f"segment start must be >= 1, got {self.start}")
        if self.end < self.start:
            raise SegmentationError(f"segment ({self.start}, {self.end}) ends before it starts")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class LabelTimeline:
    """Per-frame class ids for one entity, with the vocabulary they index."""

    entity_id: str
    labels: np.ndarray
    vocabulary: tuple

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp).reshape(-1)
        self.vocabulary = tuple(self.vocabulary)
        if self.labels.shape[0] < 1:
            raise ContractError("timeline must cover at least one frame")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.vocabulary)):
            bad = int(self.labels.min() if self.labels.min() < 0 else self.labels.max())
            raise VocabularyError(f"class id {bad} outside vocabulary of size {len(self.vocabulary)}")

    @property
    def frame_count(self) -> int:
        return self.labels.shape[0]

    def segments(self) -> list:
        return timeline_to_segments(self.labels)

    def label_names(self) -> list:
        return [self.vocabulary[i] for i in self.labels]


@dataclass(frozen=True)
class F1Score:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def timeline_to_segments(labels) -> list:
    """Maximal constant-label runs of a frame-wise timeline, in temporal order."""
    if isinstance(labels, LabelTimeline):
        labels = labels.labels
    values = list(np.asarray(labels).reshape(-1)) if isinstance(labels, np.ndarray) else list(labels)
    if not values:
        raise ContractError("timeline must cover at least one frame")
    segments = []
    start = 1
    for t in range(1, len(values) + 1):
        if t == len(values) or values[t] != values[start - 1]:
            segments.append(Segment(start=start, end=t, class_id=values[start - 1]))
            start = t + 1
    return segments


def segments_to_timeline(segments) -> np.ndarray:
    """Expand a partition of [1..T] back to a per-frame label array."""
    segments = list(segments)
    if not segments:
        raise ContractError("need at least one segment")
    _check_partition(segments)
    frame_count = max(s.end for s in segments)
    out = np.empty(frame_count, dtype=object)
    for seg in segments:
        out[seg.start - 1:seg.end] = seg.class_id
    if all(isinstance(s.class_id, (int, np.integer)) for s in segments):
        return out.astype(np.intp)
    return out


def _check_partition(segments) -> None:
    ordered = sorted(segments, key=lambda s: s.start)
    cursor = 1
    for seg in ordered:
        if seg.start != cursor:
            raise SegmentationError(f"segments must tile [1..T]: expected start {cursor}, "
                                    f"got {seg.start}")
        cursor = seg.end + 1


def _iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def match_counts(pred, truth, k: float) -> tuple[int, int, int]:
    """Greedy IoU matching: (true positives, false positives, false negatives).

    Predicted segments are visited in temporal order; each matches the
    earliest still-unmatched ground-truth segment of the same class whose IoU
    reaches k, consuming it. Because each side is a set of ordered,
    non-overlapping segments, two feasible pairs can never cross (a later
    prediction overlapping an earlier truth while an earlier prediction
    overlaps a later truth is geometrically impossible), so this in-order
    earliest-feasible choice attains the maximum one-to-one matching — the
    true-positive count equals exhaustive optimal assignment.
    """
    if not 0.0 < k < 1.0:
        raise ContractError(f"k must lie strictly between 0 and 1, got {k}")
    pred = sorted(pred, key=lambda s: s.start)
    truth = sorted(truth, key=lambda s: s.start)
    if pred:
        _check_partition(pred)
    if truth:
        _check_partition(truth)
    used = [False] * len(truth)
    tp = 0
    for p in pred:
        for i, t in enumerate(truth):
            if used[i] or t.class_id != p.class_id:
                continue
            if _iou(p, t) >= k:
                tp += 1
                used[i] = True
                break
    return tp, len(pred) - tp, len(truth) - tp


def _score_from_counts(tp: int, fp: int, fn: int) -> F1Score:
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Score(precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def f1_at_k(pred, truth, k: float) -> F1Score:
    """Precision, recall, and F1 of predicted segments against ground truth.

    Empty inputs yield zeros with the degenerate flag set rather than an error.
    """
    tp, fp, fn = match_counts(list(pred), list(truth), k)
    return _score_from_counts(tp, fp, fn)


# ---------------------------------------------------------------------------
# cross-validation

LEAVE_ONE_SUBJECT = "leave-one-subject"
LEAVE_PAIR = "leave-pair"


@dataclass
class FoldResult:
    held_out: tuple
    n_train_videos: int
    n_test_videos: int
    scores: dict                 # scores[mode][kind][k] -> F1Score
    predictions: dict = field(default_factory=dict)
    # predictions[video_id][mode][entity_key] -> class-id array; "truth" mode holds labels

    def score(self, mode: str, kind: str, k: float) -> F1Score:
        return self.scores.get(mode, {}).get(kind, {}).get(k, F1Score(0.0, 0.0, 0.0, True))


@dataclass
class F1Report:
    protocol: str
    ks: tuple
    modes: tuple
    kinds: tuple
    folds: list

    def fold_values(self, mode: str, kind: str, k: float) -> list:
        return [f.score(mode, kind, k).f1 for f in self.folds]

    def mean_std(self, mode: str, kind: str, k: float) -> tuple[float, float]:
        values = np.array(self.fold_values(mode, kind, k), dtype=np.float64)
        return float(values.mean()), float(values.std())

    def text_table(self) -> str:
        lines = [f"protocol={self.protocol} folds={len(self.folds)} "
                 f"ks={','.join(f'{k:g}' for k in self.ks)}"]
        for mode in self.modes:
            for kind in self.kinds:
                lines.append("")
                lines.append(f"[{mode} / {kind}]")
                header = ["fold", "held_out"] + [f"F1@{int(round(k * 100))}" for k in self.ks]
                lines.append("  ".join(f"{h:>10}" for h in header))
                for i, fold in enumerate(self.folds, start=1):
                    cells = [str(i), "+".join(str(s) for s in fold.held_out)]
                    cells += [f"{fold.score(mode, kind, k).f1:.4f}" for k in self.ks]
                    lines.append("  ".join(f"{c:>10}" for c in cells))
                means, stds = zip(*[self.mean_std(mode, kind, k) for k in self.ks])
                lines.append("  ".join(f"{c:>10}" for c in
                                       ["mean", ""] + [f"{m:.4f}" for m in means]))
                lines.append("  ".join(f"{c:>10}" for c in
                                       ["std", ""] + [f"{s:.4f}" for s in stds]))
        return "\n".join(lines) + "\n"

    def csv_table(self) -> str:
        rows = ["protocol,mode,kind,fold,held_out,k,precision,recall,f1,degenerate"]
        for mode in self.modes:
            for kind in self.kinds:
                for i, fold in enumerate(self.folds, start=1):
                    for k in self.ks:
                        s = fold.score(mode, kind, k)
                        rows.append(f"{self.protocol},{mode},{kind},{i},"
                                    f"{'+'.join(str(x) for x in fold.held_out)},{k:g},"
                                    f"{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},"
                                    f"{int(s.degenerate)}")
                for k in self.ks:
                    mean, std = self.mean_std(mode, kind, k)
                    rows.append(f"{self.protocol},{mode},{kind},mean,,{k:g},,,{mean:.6f},")
                    rows.append(f"{self.protocol},{mode},{kind},std,,{k:g},,,{std:.6f},")
        return "\n".join(rows) + "\n"


def timeline_diff_rows(video_id: str, truth: dict, predicted: dict) -> list:
    """CSV rows (video,entity,frame,truth,pred) comparing two timeline maps."""
    rows = []
    for key in sorted(truth):
        t_labels = np.asarray(truth[key]).reshape(-1)
        p_labels = np.asarray(predicted[key]).reshape(-1)
        entity = f"{key[0]}{key[1]}" if isinstance(key, tuple) else str(key)
        for frame in range(t_labels.shape[0]):
            pred_value = p_labels[frame] if frame < p_labels.shape[0] else ""
            rows.append(f"{video_id},{entity},{frame + 1},{t_labels[frame]},{pred_value}")
    return rows


def _fold_plan(subjects: list, protocol: str) -> list:
    if protocol == LEAVE_ONE_SUBJECT:
        return [(s,) for s in subjects]
    if protocol == LEAVE_PAIR:
        return [tuple(pair) for pair in itertools.combinations(subjects, 2)]
    raise ContractError(f"unknown protocol {protocol!r}; expected "
                        f"{LEAVE_ONE_SUBJECT!r} or {LEAVE_PAIR!r}")


def video_subjects(video) -> tuple:
    """The subject ids a video involves (multi-person videos carry several)."""
    return tuple(video.subject_ids)


def _check_thresholds(ks) -> tuple:
    ks = tuple(ks)
    if not ks:
        raise ContractError("need at least one k threshold")
    for k in ks:
        if not 0.0 < k < 1.0:
            raise ContractError(f"k must lie strictly between 0 and 1, got {k}")
    return ks


def _score_videos(model, test_videos, ks) -> tuple[dict, dict, set]:
    """Pooled per-kind match counts over both prediction modes for one fold."""
    joined = model.predict(test_videos)
    given = model.predict_given_segments(test_videos)
    counts = {JOINED: {}, GIVEN_SEGMENTATION: {}}
    predictions = {}
    kinds_seen = set()
    for video, joined_map, given_map in zip(test_videos, joined, given):
        truth_map = {}
        for key, class_ids, _vocab in video.labeled_entities():
            kind = key[0]
            kinds_seen.add(kind)
            truth_map[key] = np.asarray(class_ids, dtype=np.intp)
            truth_segments = timeline_to_segments(truth_map[key])
            for mode, pred_map in ((JOINED, joined_map), (GIVEN_SEGMENTATION, given_map)):
                pred_segments = timeline_to_segments(pred_map[key])
                per_kind = counts[mode].setdefault(kind, {k: [0, 0, 0] for k in ks})
                for k in ks:
                    tp, fp, fn = match_counts(pred_segments, truth_segments, k)
                    per_kind[k][0] += tp
                    per_kind[k][1] += fp
                    per_kind[k][2] += fn
        predictions[video.video_id] = {
            "truth": truth_map,
            JOINED: dict(joined_map),
            GIVEN_SEGMENTATION: dict(given_map),
        }
    scores = {
        mode: {
            kind: {k: _score_from_counts(*per_kind[k]) for k in ks}
            for kind, per_kind in by_kind.items()
        }
        for mode, by_kind in counts.items()
    }
    return scores, predictions, kinds_seen


def _run_folds(videos, protocol, ks, fold_model) -> F1Report:
    """Shared fold loop: fold_model(train_videos) -> a fitted predictor."""
    videos = list(videos)
    ks = _check_thresholds(ks)
    subjects = sorted({s for v in videos for s in video_subjects(v)})
    if len(subjects) < 2:
        raise ContractError(f"cross-validation needs at least 2 distinct subjects, "
                            f"got {len(subjects)}")
    folds = []
    all_kinds = set()
    for held_out in _fold_plan(subjects, protocol):
        held = set(held_out)
        test_videos = [v for v in videos if held & set(video_subjects(v))]
        train_videos = [v for v in videos if not held & set(video_subjects(v))]
        if not test_videos or not train_videos:
            side = "test" if not test_videos else "train"
            warnings.warn(f"skipping fold {held_out}: no {side} videos")
            continue
        model = fold_model(train_videos)
        scores, predictions, kinds_seen = _score_videos(model, test_videos, ks)
        all_kinds |= kinds_seen
        folds.append(FoldResult(held_out=held_out, n_train_videos=len(train_videos),
                                n_test_videos=len(test_videos), scores=scores,
                                predictions=predictions))
    if not folds:
        raise ContractError("every fold was skipped; nothing evaluated")
    return F1Report(protocol=protocol, ks=ks, modes=(JOINED, GIVEN_SEGMENTATION),
                    kinds=tuple(sorted(all_kinds)), folds=folds)


def cross_validate(estimator, videos, protocol: str = LEAVE_ONE_SUBJECT,
                   ks=DEFAULT_K_THRESHOLDS) -> F1Report:
    """Train and evaluate a fresh clone of the estimator per held-out fold.

    A fold holds out one subject (or one unordered subject pair): its test
    set is every video involving a held-out subject and its training set is
    every video involving none of them. Videos need subject_ids, a video_id,
    and labeled_entities() yielding (entity_key, class_ids, vocabulary); the
    estimator must follow the fit/predict/predict_given_segments protocol
    and be clonable. Per fold, match counts are pooled over every evaluated
    entity (per kind) before precision/recall/F1 are formed; each entity's
    segments can only match its own ground truth.
    """

    def fold_model(train_videos):
        model = clone(estimator)
        model.fit(train_videos)
        return model

    return _run_folds(videos, protocol, ks, fold_model)


def evaluate_folds(model, videos, protocol: str = LEAVE_ONE_SUBJECT,
                   ks=DEFAULT_K_THRESHOLDS) -> F1Report:
    """Score one already-fitted predictor on every fold's test videos.

    Same fold plan and pooling as cross_validate, but without retraining:
    the given model is used as-is for every fold.
    """
    return _run_folds(videos, protocol, ks, lambda _train: model)

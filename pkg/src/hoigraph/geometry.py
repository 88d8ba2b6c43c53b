"""Raw keypoint tracks to per-frame geometric context matrices.

Each human joint and object box corner contributes one row per frame:
[x, y, vx, vy], with velocity the forward difference to the next frame.
Rows are ordered human-major/joint-minor, then object-major/corner-minor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, LengthError, SchemaError
from .validation import as_bool_vector, as_float_matrix, check_nonnegative_int

HUMAN = "human"
OBJECT = "object"


@dataclass
class KeypointTrack:
    """One keypoint's positions over a video.

    Positions are image-normalized; ``build_context`` and the dataset loader
    enforce the [0, 1] range on valid frames (the bare dataclass stays total
    so velocity math can be exercised on arbitrary finite coordinates).
    Entity and keypoint indices are 1-based.
    """

    entity_kind: str
    entity_index: int
    keypoint_index: int
    positions: np.ndarray
    valid: np.ndarray
    clamped: np.ndarray = field(default=None)  # set by normalize_positions

    def __post_init__(self):
        if self.entity_kind not in (HUMAN, OBJECT):
            raise ContractError(f"entity_kind must be 'human' or 'object', got {self.entity_kind!r}")
        self.positions = as_float_matrix("positions", self.positions, n_cols=2)
        self.valid = as_bool_vector("valid", self.valid, length=self.positions.shape[0])
        if self.entity_index < 1:
            raise ContractError(f"entity_index is 1-based, got {self.entity_index}")
        if self.keypoint_index < 1:
            raise ContractError(f"keypoint_index is 1-based, got {self.keypoint_index}")
        if self.entity_kind == OBJECT and self.keypoint_index not in (1, 2):
            raise ContractError(f"object corners are keypoints 1 and 2, got {self.keypoint_index}")
        if self.clamped is None:
            self.clamped = np.zeros(self.positions.shape[0], dtype=bool)
        else:
            self.clamped = as_bool_vector("clamped", self.clamped, length=self.positions.shape[0])

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]


@dataclass
class GeometricContext:
    """Per-frame J x 4 context rows with a validity mask.

    values has shape (T, J, 4); mask has shape (T, J) and is False exactly
    where the keypoint was invalid at that frame (those rows are all-zero).
    """

    values: np.ndarray
    mask: np.ndarray
    n_humans: int
    n_joints: int
    n_objects: int
    row_keys: list

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    @property
    def joint_count(self) -> int:
        return self.values.shape[1]

    def frame(self, t: int) -> np.ndarray:
        return self.values[t]

    def human_row_range(self) -> tuple[int, int]:
        return 0, self.n_humans * self.n_joints

    def object_row_range(self) -> tuple[int, int]:
        start = self.n_humans * self.n_joints
        return start, start + self.n_objects * 2


def compute_velocity(track: KeypointTrack) -> np.ndarray:
    """Forward-difference velocity per frame: v[t] = p[t+1] - p[t].

    The final frame gets zero velocity, as does any frame where either
    endpoint of the difference is invalid.
    """
    t_count = track.frame_count
    if t_count < 1:
        raise ContractError("cannot compute velocity of an empty track")
    velocity = np.zeros((t_count, 2), dtype=np.float64)
    if t_count == 1:
        return velocity
    both_valid = track.valid[:-1] & track.valid[1:]
    diffs = track.positions[1:] - track.positions[:-1]
    velocity[:-1][both_valid] = diffs[both_valid]
    return velocity


def _check_cover(tracks: list[KeypointTrack], kind: str, n_entities: int, n_keypoints: int) -> dict:
    expected = {(e, k) for e in range(1, n_entities + 1) for k in range(1, n_keypoints + 1)}
    seen = {}
    for tr in tracks:
        if tr.entity_kind != kind:
            raise SchemaError(f"track for {tr.entity_kind} {tr.entity_index} passed in the {kind} list")
        key = (tr.entity_index, tr.keypoint_index)
        if key in seen:
            raise SchemaError(f"duplicate {kind} track for entity {key[0]} keypoint {key[1]}")
        seen[key] = tr
    missing = expected - set(seen)
    extra = set(seen) - expected
    if missing:
        e, k = sorted(missing)[0]
        raise SchemaError(f"missing {kind} track for entity {e} keypoint {k}")
    if extra:
        e, k = sorted(extra)[0]
        raise SchemaError(f"unexpected {kind} track for entity {e} keypoint {k}")
    return seen


def build_context(humans: list[KeypointTrack], objects: list[KeypointTrack],
                  n_humans: int, n_joints: int, n_objects: int) -> GeometricContext:
    """Assemble the (T, J, 4) context from keypoint tracks.

    J = n_humans * n_joints + n_objects * 2. Track order in the input lists
    does not matter; rows follow the documented index ordering.
    """
    n_humans = check_nonnegative_int("n_humans", n_humans)
    n_joints = check_nonnegative_int("n_joints", n_joints)
    n_objects = check_nonnegative_int("n_objects", n_objects)
    n_rows = n_humans * n_joints + n_objects * 2
    if n_rows == 0:
        raise ContractError("context would have no rows (no humans and no objects)")

    human_map = _check_cover(humans, HUMAN, n_humans, n_joints)
    object_map = _check_cover(objects, OBJECT, n_objects, 2)

    ordered: list[KeypointTrack] = []
    row_keys: list[tuple[str, int, int]] = []
    for e in range(1, n_humans + 1):
        for k in range(1, n_joints + 1):
            ordered.append(human_map[(e, k)])
            row_keys.append((HUMAN, e, k))
    for e in range(1, n_objects + 1):
        for k in (1, 2):
            ordered.append(object_map[(e, k)])
            row_keys.append((OBJECT, e, k))

    t_count = ordered[0].frame_count
    for tr in ordered:
        if tr.frame_count != t_count:
            raise LengthError(
                f"track ({tr.entity_kind} {tr.entity_index} keypoint {tr.keypoint_index}) "
                f"has {tr.frame_count} frames, expected {t_count}")

    values = np.zeros((t_count, n_rows, 4), dtype=np.float64)
    mask = np.zeros((t_count, n_rows), dtype=bool)
    for j, tr in enumerate(ordered):
        valid_pos = tr.positions[tr.valid]
        if valid_pos.size and (valid_pos.min() < 0.0 or valid_pos.max() > 1.0):
            raise ContractError(
                f"track ({tr.entity_kind} {tr.entity_index} keypoint {tr.keypoint_index}) "
                "has valid positions outside [0, 1]; normalize first")
        vel = compute_velocity(tr)
        values[tr.valid, j, 0:2] = tr.positions[tr.valid]
        values[tr.valid, j, 2:4] = vel[tr.valid]
        mask[:, j] = tr.valid
    return GeometricContext(values=values, mask=mask, n_humans=n_humans,
                            n_joints=n_joints, n_objects=n_objects, row_keys=row_keys)


def normalize_positions(tracks: list[KeypointTrack], width: float, height: float) -> list[KeypointTrack]:
    """Divide pixel coordinates by frame dimensions, clamping strays into [0, 1].

    Returns new tracks; frames whose raw point fell outside the frame are
    clamped and flagged in the track's ``clamped`` array.
    """
    if width <= 0 or height <= 0:
        raise ContractError(f"frame dimensions must be positive, got {width} x {height}")
    out = []
    for tr in tracks:
        scaled = tr.positions / np.array([width, height], dtype=np.float64)
        clamped_flags = ((scaled < 0.0) | (scaled > 1.0)).any(axis=1)
        scaled = np.clip(scaled, 0.0, 1.0)
        out.append(KeypointTrack(entity_kind=tr.entity_kind, entity_index=tr.entity_index,
                                 keypoint_index=tr.keypoint_index, positions=scaled,
                                 valid=tr.valid.copy(), clamped=clamped_flags))
    return out

"""Bidirectional recurrent per-frame classifier over fused entity sequences.

A gated recurrent cell is unrolled left-to-right and right-to-left over each
entity's hidden sequence; the concatenated directional states feed a
per-entity-kind affine head producing per-frame class logits. Also provides
masked cross-entropy training steps and the label-given-segmentation decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ContractError, SegmentationError, ShapeError
from .tape import ParamStore, Tensor, glorot


@dataclass
class GruCellParams:
    """One direction of the recurrent cell: reset/update/candidate gates.

    All weights are (in, out) oriented: input maps are (D_in, D_state),
    state maps are (D_state, D_state), biases are (1, D_state).
    """

    reset_input: Tensor
    reset_state: Tensor
    reset_bias: Tensor
    update_input: Tensor
    update_state: Tensor
    update_bias: Tensor
    cand_input: Tensor
    cand_state: Tensor
    cand_bias: Tensor

    def __post_init__(self):
        d_in, d_state = self.reset_input.shape
        for name in ("reset", "update", "cand"):
            if getattr(self, f"{name}_input").shape != (d_in, d_state):
                raise ShapeError(f"{name}_input must be ({d_in}, {d_state})")
            if getattr(self, f"{name}_state").shape != (d_state, d_state):
                raise ShapeError(f"{name}_state must be ({d_state}, {d_state})")
            if getattr(self, f"{name}_bias").shape != (1, d_state):
                raise ShapeError(f"{name}_bias must be (1, {d_state})")

    @property
    def input_dim(self) -> int:
        return self.reset_input.rows

    @property
    def state_dim(self) -> int:
        return self.reset_input.cols


@dataclass
class BackboneParams:
    """Bidirectional cell pair plus per-entity-kind classifier heads.

    heads maps entity kind ("human", "object") to (weight, bias) with weight
    shaped (2 * D_state, class_count) since both directional states feed it.
    """

    forward_cell: GruCellParams
    backward_cell: GruCellParams
    heads: dict

    def __post_init__(self):
        if self.forward_cell.state_dim != self.backward_cell.state_dim:
            raise ShapeError("forward and backward cells must share a state dim")
        if not self.heads:
            raise ContractError("backbone needs at least one classifier head")
        for kind, (weight, bias) in self.heads.items():
            if weight.rows != 2 * self.state_dim:
                raise ShapeError(f"head {kind!r} expects input dim {weight.rows}, "
                                 f"cells produce {2 * self.state_dim}")
            if weight.cols < 2:
                raise ContractError(f"head {kind!r} has {weight.cols} classes; need at least 2")
            if bias.shape != (1, weight.cols):
                raise ShapeError(f"head {kind!r} bias must be (1, {weight.cols})")

    @property
    def state_dim(self) -> int:
        return self.forward_cell.state_dim

    @property
    def input_dim(self) -> int:
        return self.forward_cell.input_dim

    def class_count(self, kind: str) -> int:
        return self.heads[kind][0].cols


def _init_cell(store: ParamStore, rng: np.random.Generator, input_dim: int,
               state_dim: int, prefix: str) -> GruCellParams:
    def w(name, n_rows, n_cols):
        return store.add(f"{prefix}.{name}", glorot(rng, n_rows, n_cols))

    def b(name):
        return store.add(f"{prefix}.{name}", np.zeros((1, state_dim)))

    return GruCellParams(
        reset_input=w("reset.input", input_dim, state_dim),
        reset_state=w("reset.state", state_dim, state_dim),
        reset_bias=b("reset.bias"),
        update_input=w("update.input", input_dim, state_dim),
        update_state=w("update.state", state_dim, state_dim),
        update_bias=b("update.bias"),
        cand_input=w("cand.input", input_dim, state_dim),
        cand_state=w("cand.state", state_dim, state_dim),
        cand_bias=b("cand.bias"),
    )


def init_backbone_params(store: ParamStore, rng: np.random.Generator, input_dim: int,
                         state_dim: int, class_counts: dict,
                         prefix: str = "backbone") -> BackboneParams:
    if min(input_dim, state_dim) < 1:
        raise ContractError("backbone dims must be positive")
    heads = {}
    for kind in sorted(class_counts):
        n_classes = class_counts[kind]
        if n_classes < 2:
            raise ContractError(f"head {kind!r} needs at least 2 classes, got {n_classes}")
        heads[kind] = (
            store.add(f"{prefix}.head.{kind}.weight", glorot(rng, 2 * state_dim, n_classes)),
            store.add(f"{prefix}.head.{kind}.bias", np.zeros((1, n_classes))),
        )
    return BackboneParams(
        forward_cell=_init_cell(store, rng, input_dim, state_dim, f"{prefix}.forward"),
        backward_cell=_init_cell(store, rng, input_dim, state_dim, f"{prefix}.backward"),
        heads=heads,
    )


def gru_step(x: Tensor, state: Tensor, cell: GruCellParams) -> Tensor:
    """One gated recurrent step over a (B, D_in) batch of rows.

    reset  r = sigmoid(x Wr + h Ur + br)
    update z = sigmoid(x Wz + h Uz + bz)
    cand   n = tanh(x Wn + r * (h Un) + bn)
    next   h' = z * h + (1 - z) * n
    """
    r = tape.sigmoid(tape.add_bias(tape.add(tape.matmul(x, cell.reset_input),
                                            tape.matmul(state, cell.reset_state)),
                                   cell.reset_bias))
    z = tape.sigmoid(tape.add_bias(tape.add(tape.matmul(x, cell.update_input),
                                            tape.matmul(state, cell.update_state)),
                                   cell.update_bias))
    n = tape.tanh(tape.add_bias(tape.add(tape.matmul(x, cell.cand_input),
                                         tape.mul(r, tape.matmul(state, cell.cand_state))),
                                cell.cand_bias))
    return tape.add(tape.mul(z, state), tape.mul(tape.scale_shift(z, -1.0, 1.0), n))


def _unroll(frames: list[Tensor], cell: GruCellParams) -> list[Tensor]:
    batch = frames[0].rows
    state = tape.constant(np.zeros((batch, cell.state_dim)))
    states = []
    for x in frames:
        state = gru_step(x, state, cell)
        states.append(state)
    return states


def bigru_states(sequence: Tensor, frame_count: int, batch: int,
                 params: BackboneParams) -> Tensor:
    """Concatenated bidirectional states for a frame-major (T*B, D_in) input.

    Row t*B + i of the result holds [forward_state_t ; backward_state_t] of
    entity i, shape (T*B, 2*D_state).
    """
    if sequence.rows != frame_count * batch:
        raise ShapeError(f"sequence has {sequence.rows} rows, expected "
                         f"{frame_count} frames x {batch} entities")
    if sequence.cols != params.input_dim:
        raise ShapeError(f"sequence dim {sequence.cols} does not match cell input "
                         f"dim {params.input_dim}")
    if frame_count < 1:
        raise ContractError("need at least one frame")
    frames = [tape.rows(sequence, t * batch, (t + 1) * batch) for t in range(frame_count)]
    fwd = _unroll(frames, params.forward_cell)
    bwd = list(reversed(_unroll(list(reversed(frames)), params.backward_cell)))
    return tape.vstack([tape.hcat(f, b) for f, b in zip(fwd, bwd)])


def classify_sequence(features, kind: str, params: BackboneParams) -> Tensor:
    """Per-frame class logits, shape (T, class_count), for one entity sequence.

    features is a (T, D_in) array or tensor of fused hidden vectors.
    """
    x = features if isinstance(features, Tensor) else tape.constant(features)
    if kind not in params.heads:
        raise ContractError(f"no classifier head for kind {kind!r}; have {sorted(params.heads)}")
    states = bigru_states(x, x.rows, 1, params)
    weight, bias = params.heads[kind]
    return tape.affine(states, weight, bias)


def cross_entropy_sum(logits: Tensor, labels, mask=None) -> tuple[Tensor, int]:
    """Summed negative log-likelihood over unmasked frames.

    Returns (loss tensor 1x1, number of frames counted). labels are 0-based
    class ids; mask rows that are False contribute nothing.
    """
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.shape[0] != logits.rows:
        raise ShapeError(f"{labels.shape[0]} labels for {logits.rows} frames")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.cols):
        raise ContractError(f"label ids must lie in [0, {logits.cols}), "
                            f"got range [{labels.min()}, {labels.max()}]")
    if mask is None:
        mask = np.ones(labels.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != labels.shape:
        raise ShapeError("mask length does not match labels")
    picked = np.zeros((logits.rows, logits.cols))
    picked[np.arange(logits.rows), labels] = mask.astype(float)
    log_probs = tape.row_log_softmax(logits)
    total = tape.sum_all(tape.mul(log_probs, tape.constant(picked)))
    return tape.scale_shift(total, -1.0), int(mask.sum())


def train_step(batch, params: ParamStore, optimizer, forward) -> float:
    """One optimizer update from mean masked cross-entropy over a batch.

    forward maps one batch item to an iterable of (logits, labels, mask)
    triples, one per classified entity; all triples of all items share the
    update. Returns the scalar loss. An empty batch or a batch whose every
    frame is masked is a contract error.
    """
    if not batch:
        raise ContractError("train_step needs a nonempty batch")
    params.zero_grad()
    pieces = []
    counted = 0
    for item in batch:
        for logits, labels, mask in forward(item):
            piece, n = cross_entropy_sum(logits, labels, mask)
            pieces.append(piece)
            counted += n
    if counted == 0:
        raise ContractError("every frame in the batch is masked; nothing to train on")
    total = pieces[0]
    for piece in pieces[1:]:
        total = tape.add(total, piece)
    loss = tape.scale_shift(total, 1.0 / counted)
    tape.backward(loss)
    optimizer.step()
    return float(loss.data[0, 0])


def _segment_bounds(segments, frame_count: int) -> list[tuple[int, int]]:
    bounds = []
    for seg in segments:
        if hasattr(seg, "start"):
            start, end = seg.start, seg.end
        else:
            start, end = seg[0], seg[1]
        bounds.append((int(start), int(end)))
    bounds.sort()
    cursor = 1
    for start, end in bounds:
        if start != cursor:
            raise SegmentationError(f"segments must partition [1..{frame_count}]: expected a "
                                    f"segment starting at frame {cursor}, got {start}")
        if end < start:
            raise SegmentationError(f"segment ({start}, {end}) ends before it starts")
        cursor = end + 1
    if cursor != frame_count + 1:
        raise SegmentationError(f"segments cover [1..{cursor - 1}] but the timeline has "
                                f"{frame_count} frames")
    return bounds


def label_given_segmentation(logits, segments) -> np.ndarray:
    """Label known segments by their per-segment mean logit argmax.

    logits is (T, C); segments are (start, end) pairs or objects with
    1-based inclusive start/end attributes that together partition [1..T].
    Returns a (T,) array of 0-based class ids, constant within each segment.
    """
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ShapeError(f"logits must be (T, C) with T >= 1, got {values.shape}")
    frame_count = values.shape[0]
    out = np.empty(frame_count, dtype=np.intp)
    for start, end in _segment_bounds(list(segments), frame_count):
        mean = values[start - 1:end].mean(axis=0)
        out[start - 1:end] = int(np.argmax(mean))
    return out

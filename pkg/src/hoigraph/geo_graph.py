"""Per-frame similarity graph over keypoint rows.

Each 4-channel context row is embedded by two affine+ReLU layers, a
row-stochastic adjacency is built from dot products of query/key projected
embeddings, and one propagation step mixes the embeddings through a final
weight matrix. Output per frame is J x graph_dim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ContractError, ShapeError
from .geometry import GeometricContext
from .tape import ParamStore, Tensor, glorot
from .variants import variant_spec


@dataclass
class GeoGraphParams:
    """Weights of the keypoint graph.

    Shapes (embed_dim = keypoint embedding width, graph_dim = output width):
    layer1_weight (embed_dim, 4), layer2_weight (embed_dim, embed_dim),
    biases (1, embed_dim), query/key weights (graph_dim, embed_dim),
    mix_weight (embed_dim, graph_dim). flat_weight/flat_bias exist only for
    the no-embedding variant (single 4 -> embed_dim affine map).
    """

    layer1_weight: Tensor
    layer1_bias: Tensor
    layer2_weight: Tensor
    layer2_bias: Tensor
    query_weight: Tensor
    key_weight: Tensor
    mix_weight: Tensor
    flat_weight: Tensor | None = None
    flat_bias: Tensor | None = None

    def __post_init__(self):
        e = self.layer1_weight.rows
        g = self.query_weight.rows
        checks = [
            ("layer1_weight", self.layer1_weight, (e, 4)),
            ("layer1_bias", self.layer1_bias, (1, e)),
            ("layer2_weight", self.layer2_weight, (e, e)),
            ("layer2_bias", self.layer2_bias, (1, e)),
            ("query_weight", self.query_weight, (g, e)),
            ("key_weight", self.key_weight, (g, e)),
            ("mix_weight", self.mix_weight, (e, g)),
        ]
        if self.flat_weight is not None:
            checks.append(("flat_weight", self.flat_weight, (e, 4)))
            checks.append(("flat_bias", self.flat_bias, (1, e)))
        for name, t, shape in checks:
            if t.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {t.shape}")

    @property
    def embed_dim(self) -> int:
        return self.layer1_weight.rows

    @property
    def graph_dim(self) -> int:
        return self.query_weight.rows


def init_geo_params(store: ParamStore, rng: np.random.Generator, embed_dim: int,
                    graph_dim: int, with_flat: bool = False, prefix: str = "geo") -> GeoGraphParams:
    """Create and register fresh graph weights (fan-balanced uniform, zero biases)."""
    if embed_dim < 1 or graph_dim < 1:
        raise ContractError("embed_dim and graph_dim must be positive")
    p = GeoGraphParams(
        layer1_weight=store.add(f"{prefix}.embed1.weight", glorot(rng, embed_dim, 4)),
        layer1_bias=store.add(f"{prefix}.embed1.bias", np.zeros((1, embed_dim))),
        layer2_weight=store.add(f"{prefix}.embed2.weight", glorot(rng, embed_dim, embed_dim)),
        layer2_bias=store.add(f"{prefix}.embed2.bias", np.zeros((1, embed_dim))),
        query_weight=store.add(f"{prefix}.query.weight", glorot(rng, graph_dim, embed_dim)),
        key_weight=store.add(f"{prefix}.key.weight", glorot(rng, graph_dim, embed_dim)),
        mix_weight=store.add(f"{prefix}.mix.weight", glorot(rng, embed_dim, graph_dim)),
        flat_weight=store.add(f"{prefix}.flat.weight", glorot(rng, embed_dim, 4)) if with_flat else None,
        flat_bias=store.add(f"{prefix}.flat.bias", np.zeros((1, embed_dim))) if with_flat else None,
    )
    return p


@dataclass
class GeoGraphOutput:
    """Graph output for one video: (T, J, graph_dim), flattened frame-major.

    tensor holds the differentiable (T*J, graph_dim) matrix; adjacencies
    keeps one (J, J) row-stochastic array per frame for inspection.
    """

    tensor: Tensor
    frame_count: int
    joint_count: int
    adjacencies: list

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.frame_count, self.joint_count, self.tensor.cols)

    def frame(self, t: int) -> np.ndarray:
        j = self.joint_count
        return self.tensor.data[t * j:(t + 1) * j]

    def to_array(self) -> np.ndarray:
        return self.tensor.data.reshape(self.frame_count, self.joint_count, -1)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else tape.constant(value)


def embed_keypoints(context_rows, params: GeoGraphParams) -> Tensor:
    """Two affine+ReLU layers applied to each 4-channel row.

    Accepts any (N, 4) matrix (rows from one frame or a whole video).
    Masked rows are fed through as zeros, so they carry the bias-driven
    embedding of the zero vector rather than being forced to zero.
    """
    x = _as_tensor(context_rows)
    if x.cols != 4:
        raise ShapeError(f"context rows must have 4 channels, got {x.shape}")
    h = tape.relu(tape.add_bias(tape.matmul(x, tape.transpose(params.layer1_weight)), params.layer1_bias))
    return tape.relu(tape.add_bias(tape.matmul(h, tape.transpose(params.layer2_weight)), params.layer2_bias))


def flat_embed_keypoints(context_rows, params: GeoGraphParams) -> Tensor:
    """Single affine 4 -> embed_dim map (the no-embedding ablation)."""
    if params.flat_weight is None or params.flat_bias is None:
        raise ContractError("params were built without the flat (no-embedding) projection")
    x = _as_tensor(context_rows)
    if x.cols != 4:
        raise ShapeError(f"context rows must have 4 channels, got {x.shape}")
    return tape.add_bias(tape.matmul(x, tape.transpose(params.flat_weight)), params.flat_bias)


def adjacency(embedded, params: GeoGraphParams) -> Tensor:
    """Row-stochastic similarity matrix for one frame's embedded keypoints.

    Score[j1, j2] is the dot product of the query-projected row j1 and the
    key-projected row j2; rows are then softmax-normalized.
    """
    g = _as_tensor(embedded)
    if g.cols != params.embed_dim:
        raise ShapeError(f"embedded rows must have {params.embed_dim} columns, got {g.shape}")
    q = tape.matmul(g, tape.transpose(params.query_weight))
    k = tape.matmul(g, tape.transpose(params.key_weight))
    scores = tape.matmul(q, tape.transpose(k))
    return tape.row_softmax(scores)


def _variant_rows(context: GeometricContext, variant: str) -> tuple[np.ndarray, np.ndarray]:
    spec = variant_spec(variant)
    h_lo, h_hi = context.human_row_range()
    o_lo, o_hi = context.object_row_range()
    keep = np.ones(context.joint_count, dtype=bool)
    if spec.drop_humans:
        keep[h_lo:h_hi] = False
    if spec.drop_objects:
        keep[o_lo:o_hi] = False
    values = context.values[:, keep, :]
    if values.shape[1] == 0:
        raise ContractError(f"variant {variant!r} removes every keypoint row (empty graph)")
    return values, keep


def gcn_forward(context: GeometricContext, params: GeoGraphParams, variant: str = "full") -> GeoGraphOutput:
    """One propagation step per frame: adjacency times embeddings times mix weights.

    Variant switches: no-skeletons / no-objects drop rows before the graph is
    built (J shrinks), no-embedding swaps the two-layer embedding for the flat
    affine map, no-similarity uses the uniform adjacency 1/J.
    """
    spec = variant_spec(variant)
    values, _ = _variant_rows(context, variant)
    t_count, j_count, _ = values.shape
    flat = tape.constant(values.reshape(t_count * j_count, 4))
    if spec.use_embedding:
        embedded = embed_keypoints(flat, params)
    else:
        embedded = flat_embed_keypoints(flat, params)

    adjacencies: list[np.ndarray] = []
    mixed_frames: list[Tensor] = []
    if spec.use_similarity:
        q_all = tape.matmul(embedded, tape.transpose(params.query_weight))
        k_all = tape.matmul(embedded, tape.transpose(params.key_weight))
        for t in range(t_count):
            lo, hi = t * j_count, (t + 1) * j_count
            g_t = tape.rows(embedded, lo, hi)
            scores = tape.matmul(tape.rows(q_all, lo, hi), tape.transpose(tape.rows(k_all, lo, hi)))
            a_t = tape.row_softmax(scores)
            adjacencies.append(a_t.data)
            mixed_frames.append(tape.matmul(a_t, g_t))
    else:
        uniform = tape.constant(np.full((j_count, j_count), 1.0 / j_count))
        for t in range(t_count):
            lo, hi = t * j_count, (t + 1) * j_count
            g_t = tape.rows(embedded, lo, hi)
            adjacencies.append(uniform.data)
            mixed_frames.append(tape.matmul(uniform, g_t))

    out = tape.matmul(tape.vstack(mixed_frames), params.mix_weight)
    return GeoGraphOutput(tensor=out, frame_count=t_count, joint_count=j_count,
                          adjacencies=adjacencies)

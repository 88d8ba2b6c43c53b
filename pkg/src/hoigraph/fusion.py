"""Entity-level attention graph over visual features and pooled geometry.

Every human, every object, and one pooled-geometry node are embedded to a
shared hidden width by kind-specific two-layer MLPs, then mixed per frame
with single-head scaled dot-product attention (identical keys and values)
over a configurable edge topology.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ContractError, LengthError, ShapeError
from .geo_graph import GeoGraphOutput
from .tape import ParamStore, Tensor, glorot
from .validation import as_float_matrix

GEOMETRY = "geometry"


@dataclass
class EntityFeatureSequence:
    """Per-frame visual feature vectors for one human or object entity."""

    entity_kind: str
    entity_index: int
    features: np.ndarray

    def __post_init__(self):
        if self.entity_kind not in ("human", "object"):
            raise ContractError(f"entity_kind must be 'human' or 'object', got {self.entity_kind!r}")
        self.features = as_float_matrix(f"features[{self.entity_kind} {self.entity_index}]", self.features)

    @property
    def frame_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def key(self) -> tuple[str, int]:
        return (self.entity_kind, self.entity_index)


@dataclass(frozen=True)
class FusionTopology:
    """Edge-class switches for the entity graph."""

    human_human: bool = True
    human_object: bool = True
    object_object: bool = True
    geometry_object: bool = True
    geometry_human: bool = False

    def validate(self) -> "FusionTopology":
        if not any(dataclasses.asdict(self).values()):
            raise ContractError("topology must enable at least one edge class")
        return self

    def enabled(self, kind_a: str, kind_b: str) -> bool:
        pair = tuple(sorted((kind_a, kind_b)))
        field_name = {
            ("human", "human"): "human_human",
            ("human", "object"): "human_object",
            ("object", "object"): "object_object",
            ("geometry", "object"): "geometry_object",
            ("geometry", "human"): "geometry_human",
            ("geometry", "geometry"): None,
        }[pair]
        return bool(getattr(self, field_name)) if field_name else False

    def replace(self, **overrides) -> "FusionTopology":
        return dataclasses.replace(self, **overrides)

    def enabled_names(self) -> tuple[str, ...]:
        return tuple(name for name, on in dataclasses.asdict(self).items() if on)

    @classmethod
    def from_names(cls, names) -> "FusionTopology":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = [n for n in names if n not in fields]
        if unknown:
            raise ContractError(f"unknown edge class names: {unknown}; known: {sorted(fields)}")
        return cls(**{f: (f in set(names)) for f in fields})


DEFAULT_TOPOLOGY = FusionTopology()


@dataclass
class FusionParams:
    """Kind-specific embedding MLPs plus the shared post-attention merge map."""

    human_mlp: tuple[Tensor, Tensor, Tensor, Tensor]    # w1, b1, w2, b2
    object_mlp: tuple[Tensor, Tensor, Tensor, Tensor]
    geometry_mlp: tuple[Tensor, Tensor, Tensor, Tensor]
    merge_weight: Tensor                                # (2*hidden, hidden)
    merge_bias: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.merge_weight.cols

    def mlp_for(self, kind: str) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return {"human": self.human_mlp, "object": self.object_mlp, GEOMETRY: self.geometry_mlp}[kind]


def init_fusion_params(store: ParamStore, rng: np.random.Generator, visual_dim: int,
                       graph_dim: int, hidden_dim: int, prefix: str = "fusion") -> FusionParams:
    if min(visual_dim, graph_dim, hidden_dim) < 1:
        raise ContractError("fusion dims must be positive")

    def mlp(name: str, in_dim: int):
        return (
            store.add(f"{prefix}.{name}.layer1.weight", glorot(rng, in_dim, hidden_dim)),
            store.add(f"{prefix}.{name}.layer1.bias", np.zeros((1, hidden_dim))),
            store.add(f"{prefix}.{name}.layer2.weight", glorot(rng, hidden_dim, hidden_dim)),
            store.add(f"{prefix}.{name}.layer2.bias", np.zeros((1, hidden_dim))),
        )

    return FusionParams(
        human_mlp=mlp("human", visual_dim),
        object_mlp=mlp("object", visual_dim),
        geometry_mlp=mlp("geometry", graph_dim),
        merge_weight=store.add(f"{prefix}.merge.weight", glorot(rng, 2 * hidden_dim, hidden_dim)),
        merge_bias=store.add(f"{prefix}.merge.bias", np.zeros((1, hidden_dim))),
    )


@dataclass
class FusedNodeSet:
    """Per-frame hidden vectors for H humans, F objects, and one geometry node.

    tensor is frame-major: row t * n_nodes + i holds node i of frame t, with
    nodes ordered humans (by index), objects (by index), geometry last.
    """

    tensor: Tensor
    frame_count: int
    node_keys: list

    @property
    def n_nodes(self) -> int:
        return len(self.node_keys)

    @property
    def hidden_dim(self) -> int:
        return self.tensor.cols

    def frame_nodes(self, t: int) -> Tensor:
        n = self.n_nodes
        return tape.rows(self.tensor, t * n, (t + 1) * n)

    def entity_sequence(self, key: tuple[str, int]) -> Tensor:
        """The (T, hidden) sequence of one node, as a differentiable slice."""
        i = self.node_keys.index(key)
        n = self.n_nodes
        perm = np.arange(self.frame_count) * n + i
        rest = np.setdiff1d(np.arange(self.frame_count * n), perm)
        full = tape.permute_rows(self.tensor, np.concatenate([perm, rest]))
        return tape.rows(full, 0, self.frame_count)

    def to_arrays(self) -> dict:
        n = self.n_nodes
        data = self.tensor.data
        return {key: data[i::n].copy() for i, key in enumerate(self.node_keys)}


def pool_geometry(y: GeoGraphOutput) -> Tensor:
    """Mean over the J keypoint rows of each frame: (T, graph_dim)."""
    t_count, j_count = y.frame_count, y.joint_count
    if t_count == 0 or j_count == 0:
        raise ContractError("cannot pool an empty graph output")
    pool = np.zeros((t_count, t_count * j_count))
    for t in range(t_count):
        pool[t, t * j_count:(t + 1) * j_count] = 1.0 / j_count
    return tape.matmul(tape.constant(pool), y.tensor)


def _mlp_forward(x: Tensor, weights) -> Tensor:
    w1, b1, w2, b2 = weights
    h = tape.relu(tape.add_bias(tape.matmul(x, w1), b1))
    return tape.relu(tape.add_bias(tape.matmul(h, w2), b2))


def embed_entities(visuals: list[EntityFeatureSequence], pooled_geometry: Tensor,
                   params: FusionParams) -> FusedNodeSet:
    """Embed every entity sequence and the geometry node to the shared hidden width."""
    if not visuals:
        raise ContractError("need at least one entity feature sequence")
    if not isinstance(pooled_geometry, Tensor):
        pooled_geometry = tape.constant(pooled_geometry)
    t_count = pooled_geometry.rows
    for seq in visuals:
        if seq.frame_count != t_count:
            raise LengthError(f"entity {seq.key} has {seq.frame_count} frames, expected {t_count}")
    humans = sorted((s for s in visuals if s.entity_kind == "human"), key=lambda s: s.entity_index)
    objects = sorted((s for s in visuals if s.entity_kind == "object"), key=lambda s: s.entity_index)

    hidden: list[Tensor] = []
    node_keys: list[tuple[str, int]] = []
    for seq in humans + objects:
        w1 = params.mlp_for(seq.entity_kind)[0]
        if seq.dim != w1.rows:
            raise ShapeError(f"entity {seq.key} features have dim {seq.dim}, params expect {w1.rows}")
        hidden.append(_mlp_forward(tape.constant(seq.features), params.mlp_for(seq.entity_kind)))
        node_keys.append(seq.key)
    if pooled_geometry.cols != params.geometry_mlp[0].rows:
        raise ShapeError(f"pooled geometry dim {pooled_geometry.cols} does not match params "
                         f"({params.geometry_mlp[0].rows})")
    hidden.append(_mlp_forward(pooled_geometry, params.geometry_mlp))
    node_keys.append((GEOMETRY, 0))

    # entity-major stack -> frame-major interleave
    stacked = tape.vstack(hidden)
    n_nodes = len(node_keys)
    perm = np.empty(t_count * n_nodes, dtype=np.intp)
    for i in range(n_nodes):
        perm[np.arange(t_count) * n_nodes + i] = i * t_count + np.arange(t_count)
    return FusedNodeSet(tensor=tape.permute_rows(stacked, perm), frame_count=t_count, node_keys=node_keys)


def attend(query, neighbors, dim: int) -> tuple[np.ndarray, bool]:
    """Scaled dot-product attention with identical keys and values.

    Returns (vector, had_neighbors). An empty neighbor set yields the zero
    vector with had_neighbors False so disabled topologies degrade
    gracefully. Neighbors are summed in a canonical lexicographic order, so
    permuting the input leaves the output bitwise unchanged.
    """
    if dim < 1:
        raise ContractError(f"dim must be positive, got {dim}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != dim:
        raise ShapeError(f"query has dim {q.shape[0]}, expected {dim}")
    zs = [np.asarray(z, dtype=np.float64).reshape(-1) for z in neighbors]
    for z in zs:
        if z.shape[0] != dim:
            raise ShapeError(f"neighbor has dim {z.shape[0]}, expected {dim}")
    if not zs:
        return np.zeros(dim), False
    z_mat = np.vstack(zs)
    order = np.lexsort(z_mat.T[::-1])
    z_mat = z_mat[order]
    scores = (z_mat @ q) / np.sqrt(float(dim))
    shifted = np.exp(scores - scores.max())
    weights = shifted / shifted.sum()
    return weights @ z_mat, True


def edge_mask(node_keys: list, topology: FusionTopology) -> np.ndarray:
    """Boolean (N, N) neighbor mask under the topology, self excluded."""
    n = len(node_keys)
    mask = np.zeros((n, n), dtype=bool)
    for i, (kind_i, _) in enumerate(node_keys):
        for j, (kind_j, _) in enumerate(node_keys):
            if i != j and topology.enabled(kind_i, kind_j):
                mask[i, j] = True
    return mask


def fuse(nodes: FusedNodeSet, topology: FusionTopology, params: FusionParams) -> FusedNodeSet:
    """Per-frame attention update of every node over its topology neighbors.

    Updated node = ReLU(affine(concat(self, attended))); nodes with no
    neighbors pass through unchanged. If the topology isolates every node a
    warning is emitted and the set is returned as-is.
    """
    topology.validate()
    mask = edge_mask(nodes.node_keys, topology)
    has_neighbors = mask.any(axis=1)
    if not has_neighbors.any():
        warnings.warn("topology isolates every node; passing nodes through unchanged")
        return FusedNodeSet(tensor=nodes.tensor, frame_count=nodes.frame_count,
                            node_keys=list(nodes.node_keys))
    if params.merge_weight.rows != 2 * nodes.hidden_dim:
        raise ShapeError(f"merge weight expects hidden dim {params.merge_weight.rows // 2}, "
                         f"nodes have {nodes.hidden_dim}")

    scale = 1.0 / np.sqrt(float(nodes.hidden_dim))
    out_frames: list[Tensor] = []
    for t in range(nodes.frame_count):
        x = nodes.frame_nodes(t)
        scores = tape.scale_shift(tape.matmul(x, tape.transpose(x)), scale)
        weights = tape.masked_row_softmax(scores, mask)
        attended = tape.matmul(weights, x)
        merged = tape.relu(tape.affine(tape.hcat(x, attended), params.merge_weight, params.merge_bias))
        out_frames.append(tape.row_where(has_neighbors, merged, x))
    return FusedNodeSet(tensor=tape.vstack(out_frames), frame_count=nodes.frame_count,
                        node_keys=list(nodes.node_keys))

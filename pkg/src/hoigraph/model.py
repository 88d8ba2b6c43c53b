"""End-to-end estimator: geometric graph -> fusion graph -> recurrent classifier.

InteractionRecognizer follows the fit/predict estimator protocol so folds can
be cloned and cross-validated. One video is one optimizer batch; per-frame
class predictions come out per entity, either free-running (joined
segmentation) or restricted to known ground-truth segment boundaries.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import tape
from .backbone import (BackboneParams, bigru_states, init_backbone_params,
                       label_given_segmentation, train_step)
from .checkpoint import load_checkpoint, save_checkpoint
from .data_io import entity_features
from .errors import (CheckpointError, ContractError, EvaluationError, ShapeError,
                     VocabularyError)
from .fusion import FusionTopology, embed_entities, fuse, init_fusion_params, pool_geometry
from .geo_graph import gcn_forward, init_geo_params
from .geometry import build_context, normalize_positions
from .optim import AdamOptimizer
from .seeding import substream
from .segeval import timeline_to_segments
from .tape import ParamStore
from .variants import ABLATION_VARIANTS, variant_spec


class InteractionRecognizer(BaseEstimator):
    """Two-level geometric-graph recognizer with a recurrent classifier head.

    Parameters are plain constructor arguments (estimator convention);
    everything learned lives in trailing-underscore attributes set by fit.
    """

    def __init__(self, embed_dim: int = 64, graph_dim: int = 128, hidden_dim: int = 128,
                 state_dim: int = 128, feature_dim: int = 32, variant: str = "full",
                 topology=None, learning_rate: float = 1e-3, epochs: int = 30,
                 seed: int = 0):
        self.embed_dim = embed_dim
        self.graph_dim = graph_dim
        self.hidden_dim = hidden_dim
        self.state_dim = state_dim
        self.feature_dim = feature_dim
        self.variant = variant
        self.topology = topology
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed

    # -- configuration ----------------------------------------------------

    def _check_hyperparams(self) -> None:
        for name in ("embed_dim", "graph_dim", "hidden_dim", "state_dim",
                     "feature_dim", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be a positive integer, "
                                    f"got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.variant not in ABLATION_VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; "
                                f"known: {ABLATION_VARIANTS}")

    def _resolve_topology(self) -> FusionTopology:
        base = FusionTopology()
        if self.topology is not None:
            base = self.topology if isinstance(self.topology, FusionTopology) \
                else FusionTopology.from_names(self.topology)
        spec = variant_spec(self.variant)
        if spec.topology_overrides:
            base = base.replace(**spec.topology_overrides)
        return base.validate()

    # -- data preparation --------------------------------------------------

    def _collect_vocabularies(self, videos) -> dict:
        vocabularies = {}
        for video in videos:
            for kind, vocab in video.vocabularies.items():
                vocab = tuple(vocab)
                if kind in vocabularies and vocabularies[kind] != vocab:
                    raise VocabularyError(f"{video.video_id}: {kind} vocabulary differs "
                                          f"across the video set")
                vocabularies.setdefault(kind, vocab)
        labeled_kinds = {e.kind for v in videos for e in v.entities() if e.labels is not None}
        return {k: v for k, v in vocabularies.items() if k in labeled_kinds}

    def _video_cache(self, video) -> dict:
        humans, objects = video.keypoint_tracks()
        humans = normalize_positions(humans, video.frame_width, video.frame_height)
        objects = normalize_positions(objects, video.frame_width, video.frame_height)
        context = build_context(humans, objects, n_humans=video.n_humans,
                                n_joints=video.n_joints, n_objects=video.n_objects)
        features = entity_features(video, self.feature_dim, self.seed)
        labels = {key: ids for key, ids, _vocab in video.labeled_entities()}
        return {"video_id": video.video_id, "context": context,
                "features": features, "labels": labels}

    # -- forward -----------------------------------------------------------

    def _forward_logits(self, cache) -> dict:
        """Per-entity per-frame logits keyed by (kind, index), one shared tape."""
        geo = gcn_forward(cache["context"], self.geo_params_, self.variant)
        nodes = embed_entities(cache["features"], pool_geometry(geo), self.fusion_params_)
        fused = fuse(nodes, self.topology_, self.fusion_params_)
        states = bigru_states(fused.tensor, fused.frame_count, fused.n_nodes,
                              self.backbone_params_)
        t_count, n_nodes = fused.frame_count, fused.n_nodes
        logits = {}
        all_rows = np.arange(t_count * n_nodes)
        for kind in sorted(self.backbone_params_.heads):
            positions = [i for i, key in enumerate(fused.node_keys) if key[0] == kind]
            if not positions:
                continue
            gather = np.concatenate([np.arange(t_count) * n_nodes + i for i in positions])
            perm = np.concatenate([gather, np.setdiff1d(all_rows, gather)])
            block = tape.rows(tape.permute_rows(states, perm), 0, gather.shape[0])
            weight, bias = self.backbone_params_.heads[kind]
            kind_logits = tape.affine(block, weight, bias)
            for j, i in enumerate(positions):
                logits[fused.node_keys[i]] = tape.rows(kind_logits, j * t_count,
                                                       (j + 1) * t_count)
        return logits

    def _training_triples(self, cache) -> list:
        logits = self._forward_logits(cache)
        triples = []
        for key, ids in sorted(cache["labels"].items()):
            mask = np.ones(ids.shape[0], dtype=bool)
            triples.append((logits[key], ids, mask))
        return triples

    # -- estimator protocol ------------------------------------------------

    def fit(self, videos, y=None):
        videos = list(videos)
        if not videos:
            raise ContractError("fit needs at least one video")
        self._check_hyperparams()
        self.topology_ = self._resolve_topology()
        self.vocabularies_ = self._collect_vocabularies(videos)
        if not self.vocabularies_:
            raise ContractError("no labeled entities in the training videos")
        class_counts = {kind: len(vocab) for kind, vocab in self.vocabularies_.items()}
        self._build_params(class_counts)
        caches = [self._video_cache(v) for v in videos]

        optimizer = AdamOptimizer(self.params_store_, learning_rate=self.learning_rate)
        order_rng = substream(self.seed, "epochs")
        self.loss_history_ = []
        for _epoch in range(int(self.epochs)):
            order = order_rng.permutation(len(caches))
            epoch_losses = []
            for i in order:
                loss = train_step([caches[i]], self.params_store_, optimizer,
                                  self._training_triples)
                if not np.isfinite(loss):
                    raise EvaluationError(
                        f"training diverged: loss={loss!r} on video "
                        f"{caches[i]['video_id']} in epoch {_epoch + 1}; lower the "
                        f"learning rate or check the feature scale")
                epoch_losses.append(loss)
            self.loss_history_.append(float(np.mean(epoch_losses)))
        return self

    def _build_params(self, class_counts: dict) -> None:
        rng = substream(self.seed, "params")
        store = ParamStore()
        self.geo_params_ = init_geo_params(store, rng, embed_dim=int(self.embed_dim),
                                           graph_dim=int(self.graph_dim),
                                           with_flat=True)
        self.fusion_params_ = init_fusion_params(store, rng, visual_dim=int(self.feature_dim),
                                                 graph_dim=int(self.graph_dim),
                                                 hidden_dim=int(self.hidden_dim))
        self.backbone_params_ = init_backbone_params(store, rng,
                                                     input_dim=int(self.hidden_dim),
                                                     state_dim=int(self.state_dim),
                                                     class_counts=class_counts)
        self.class_counts_ = dict(class_counts)
        self.params_store_ = store

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_store_"):
            raise EvaluationError("this recognizer is not fitted yet; call fit first")

    def predict(self, videos) -> list:
        """Joined segmentation: per video, {(kind, index): per-frame class ids}."""
        self._check_fitted()
        out = []
        for video in videos:
            cache = self._video_cache(video)
            logits = self._forward_logits(cache)
            out.append({key: np.argmax(value.data, axis=1)
                        for key, value in logits.items()
                        if key[0] in self.class_counts_})
        return out

    def predict_given_segments(self, videos) -> list:
        """Label known ground-truth segments by per-segment mean logits."""
        self._check_fitted()
        out = []
        for video in videos:
            cache = self._video_cache(video)
            logits = self._forward_logits(cache)
            named = {}
            for key, ids in cache["labels"].items():
                segments = timeline_to_segments(ids)
                named[key] = label_given_segmentation(logits[key].data, segments)
            out.append(named)
        return out

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        """Write hyperparameters, vocabularies, and all weights to one file."""
        self._check_fitted()
        meta = {"estimator": "InteractionRecognizer",
                "hyperparams": {k: (list(v) if isinstance(v, tuple) else v)
                                for k, v in self.get_params().items()},
                "vocabularies": {k: list(v) for k, v in self.vocabularies_.items()},
                "loss_history": [float(x) for x in getattr(self, "loss_history_", [])]}
        return save_checkpoint(path, self.params_store_.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "InteractionRecognizer":
        meta, arrays = load_checkpoint(path)
        if meta.get("estimator") != "InteractionRecognizer":
            raise CheckpointError(f"{path}: checkpoint was not written by this estimator")
        hyper = dict(meta.get("hyperparams", {}))
        if "topology" in hyper and hyper["topology"] is not None:
            hyper["topology"] = tuple(hyper["topology"])
        model = cls(**hyper)
        model._check_hyperparams()
        model.topology_ = model._resolve_topology()
        model.vocabularies_ = {k: tuple(v) for k, v in meta.get("vocabularies", {}).items()}
        if not model.vocabularies_:
            raise CheckpointError(f"{path}: checkpoint metadata lacks vocabularies")
        model._build_params({k: len(v) for k, v in model.vocabularies_.items()})
        try:
            model.params_store_.load_arrays(arrays)
        except (ContractError, ShapeError) as exc:
            raise CheckpointError(f"{path}: checkpoint does not match the configured "
                                  f"model shapes: {exc}") from exc
        model.loss_history_ = list(meta.get("loss_history", []))
        return model

"""Estimator-level tests: fit/predict contract, determinism, persistence."""

import dataclasses

import numpy as np
import pytest
from sklearn.base import clone

from hoigraph.checkpoint import load_checkpoint, save_checkpoint
from hoigraph.data_io import generate_benchmark, load_dataset
from hoigraph.errors import (CheckpointError, ContractError, EvaluationError,
                             VocabularyError)
from hoigraph.fusion import DEFAULT_TOPOLOGY, FusionTopology
from hoigraph.model import InteractionRecognizer
from hoigraph.segeval import timeline_to_segments
from hoigraph.variants import ABLATION_VARIANTS


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture(scope="module")
def bench_videos(tmp_path_factory):
    root = tmp_path_factory.mktemp("modelbench") / "ds"
    generate_benchmark(5, root, feature_dim=12, videos_per_pair=1,
                       frame_count=32, n_joints=3, n_objects=1)
    return load_dataset(root).videos


def small_model(**overrides):
    kwargs = dict(embed_dim=6, graph_dim=8, hidden_dim=8, state_dim=8,
                  feature_dim=12, learning_rate=1e-3, epochs=2, seed=11)
    kwargs.update(overrides)
    return InteractionRecognizer(**kwargs)


@pytest.fixture(scope="module")
def fitted(bench_videos):
    return small_model().fit(bench_videos[:3])


# ---------------------------------------------------------------------------
# fit contract


def test_fit_returns_self(bench_videos):
    model = small_model(epochs=1)
    assert model.fit(bench_videos[:1]) is model


def test_fit_sets_learned_attributes(fitted):
    assert isinstance(fitted.topology_, FusionTopology)
    assert set(fitted.vocabularies_) == {"human", "object"}
    for vocab in fitted.vocabularies_.values():
        assert isinstance(vocab, tuple) and len(vocab) >= 2
    assert fitted.class_counts_ == {k: len(v) for k, v in fitted.vocabularies_.items()}
    assert len(fitted.loss_history_) == fitted.epochs
    assert all(np.isfinite(x) for x in fitted.loss_history_)
    assert fitted.params_store_.state_arrays()


def test_fit_loss_improves(fitted):
    assert fitted.loss_history_[-1] < fitted.loss_history_[0]


def test_refit_resets_state(bench_videos):
    model = small_model(epochs=1)
    model.fit(bench_videos[:2])
    first = {k: v.copy() for k, v in model.params_store_.state_arrays().items()}
    model.fit(bench_videos[2:4])
    assert len(model.loss_history_) == 1
    # reinitialized from the seed substream, then trained on different videos
    after = model.params_store_.state_arrays()
    assert any(not np.array_equal(first[k], after[k]) for k in first)


def test_fit_empty_video_list():
    with pytest.raises(ContractError, match="at least one video"):
        small_model().fit([])


def _strip_labels(video, kinds=("human", "object")):
    def wipe(entities):
        return [dataclasses.replace(e, labels=None) if e.kind in kinds else e
                for e in entities]
    return dataclasses.replace(video, humans=wipe(video.humans),
                               objects=wipe(video.objects))


def test_fit_rejects_fully_unlabeled_videos(bench_videos):
    unlabeled = [_strip_labels(v) for v in bench_videos[:2]]
    with pytest.raises(ContractError, match="no labeled entities"):
        small_model().fit(unlabeled)


def test_fit_rejects_vocabulary_mismatch(bench_videos):
    videos = list(bench_videos[:2])
    permuted = tuple(reversed(videos[1].vocabularies["human"]))
    videos[1] = dataclasses.replace(
        videos[1], vocabularies={**videos[1].vocabularies, "human": permuted})
    with pytest.raises(VocabularyError, match="vocabulary differs"):
        small_model().fit(videos)


def test_unlabeled_kind_is_not_classified(bench_videos):
    videos = [_strip_labels(v, kinds=("object",)) for v in bench_videos[:2]]
    model = small_model(epochs=1).fit(videos)
    assert set(model.vocabularies_) == {"human"}
    predictions = model.predict(videos[:1])[0]
    assert predictions and all(kind == "human" for kind, _ in predictions)


# ---------------------------------------------------------------------------
# hyperparameter validation


@pytest.mark.parametrize("field", ["embed_dim", "graph_dim", "hidden_dim",
                                   "state_dim", "feature_dim", "epochs"])
def test_fit_rejects_nonpositive_dimension(bench_videos, field):
    with pytest.raises(ContractError, match=f"{field} must be a positive integer"):
        small_model(**{field: 0}).fit(bench_videos[:1])


def test_fit_rejects_negative_learning_rate(bench_videos):
    with pytest.raises(ContractError, match="learning_rate must be >= 0"):
        small_model(learning_rate=-0.5).fit(bench_videos[:1])


def test_fit_rejects_unknown_variant(bench_videos):
    with pytest.raises(ContractError, match="unknown variant 'bogus'"):
        small_model(variant="bogus").fit(bench_videos[:1])


def test_fit_rejects_all_edges_disabled(bench_videos):
    with pytest.raises(ContractError, match="at least one edge class"):
        small_model(topology=()).fit(bench_videos[:1])


def test_fit_rejects_unknown_edge_name(bench_videos):
    with pytest.raises(ContractError, match="unknown edge class names"):
        small_model(topology=("human_human", "sideways")).fit(bench_videos[:1])


# ---------------------------------------------------------------------------
# topology resolution


def test_default_topology(fitted):
    assert fitted.topology_ == DEFAULT_TOPOLOGY
    assert not fitted.topology_.geometry_human


def test_topology_from_names(bench_videos):
    names = ("human_human", "human_object", "object_object", "geometry_object")
    model = small_model(epochs=1, topology=names).fit(bench_videos[:1])
    assert model.topology_ == DEFAULT_TOPOLOGY


def test_topology_instance_passthrough(bench_videos):
    topo = FusionTopology(human_human=False)
    model = small_model(epochs=1, topology=topo).fit(bench_videos[:1])
    assert model.topology_ == topo


@pytest.mark.parametrize("variant, field, value", [
    ("no-human-object", "human_object", False),
    ("no-object-object", "object_object", False),
    ("with-geometry-human", "geometry_human", True),
])
def test_variant_overrides_topology(bench_videos, variant, field, value):
    model = small_model(epochs=1, variant=variant).fit(bench_videos[:1])
    assert getattr(model.topology_, field) is value
    # the remaining edge classes keep their defaults
    others = {f: getattr(DEFAULT_TOPOLOGY, f)
              for f in ("human_human", "human_object", "object_object",
                        "geometry_object", "geometry_human") if f != field}
    for name, expected in others.items():
        assert getattr(model.topology_, name) == expected


def test_variant_override_beats_explicit_topology(bench_videos):
    topo = FusionTopology(human_object=True)
    model = small_model(epochs=1, variant="no-human-object",
                        topology=topo).fit(bench_videos[:1])
    assert model.topology_.human_object is False


# ---------------------------------------------------------------------------
# predict contract


def test_predict_shapes_and_ranges(fitted, bench_videos):
    unseen = bench_videos[3:5]
    outputs = fitted.predict(unseen)
    assert isinstance(outputs, list) and len(outputs) == len(unseen)
    for video, predictions in zip(unseen, outputs):
        expected_keys = {("human", h.index) for h in video.humans} \
            | {("object", o.index) for o in video.objects}
        assert set(predictions) == expected_keys
        for (kind, _), ids in predictions.items():
            assert isinstance(ids, np.ndarray)
            assert np.issubdtype(ids.dtype, np.integer)
            assert ids.shape == (video.frame_count,)
            assert ids.min() >= 0
            assert ids.max() < len(fitted.vocabularies_[kind])


def test_predict_is_deterministic(fitted, bench_videos):
    first = fitted.predict(bench_videos[3:4])[0]
    second = fitted.predict(bench_videos[3:4])[0]
    assert set(first) == set(second)
    for key in first:
        assert np.array_equal(first[key], second[key])


def test_predict_given_segments_piecewise_constant(fitted, bench_videos):
    video = bench_videos[3]
    predictions = fitted.predict_given_segments([video])[0]
    truth = {key: ids for key, ids, _vocab in video.labeled_entities()}
    assert set(predictions) == set(truth)
    for key, pred_ids in predictions.items():
        assert pred_ids.shape == truth[key].shape
        assert np.issubdtype(pred_ids.dtype, np.integer)
        for segment in timeline_to_segments(truth[key]):
            window = pred_ids[segment.start - 1:segment.end]
            assert np.all(window == window[0])


def test_given_segments_match_segment_argmax_of_mean_logits(fitted, bench_videos):
    # spot-check one entity against the direct definition
    video = bench_videos[4]
    cache = fitted._video_cache(video)
    logits = {k: v.data for k, v in fitted._forward_logits(cache).items()}
    predictions = fitted.predict_given_segments([video])[0]
    key = ("human", video.humans[0].index)
    truth = cache["labels"][key]
    for segment in timeline_to_segments(truth):
        mean_logits = logits[key][segment.start - 1:segment.end].mean(axis=0)
        assert predictions[key][segment.start - 1] == int(np.argmax(mean_logits))


@pytest.mark.parametrize("method", ["predict", "predict_given_segments"])
def test_predict_before_fit(bench_videos, method):
    with pytest.raises(EvaluationError, match="not fitted yet"):
        getattr(small_model(), method)(bench_videos[:1])


def test_save_before_fit(tmp_path):
    with pytest.raises(EvaluationError, match="not fitted yet"):
        small_model().save(tmp_path / "model.ckpt")


# ---------------------------------------------------------------------------
# determinism and learning-rate semantics


def test_fit_is_bitwise_deterministic(bench_videos):
    a = small_model().fit(bench_videos[:2])
    b = small_model().fit(bench_videos[:2])
    assert a.loss_history_ == b.loss_history_
    arrays_a, arrays_b = a.params_store_.state_arrays(), b.params_store_.state_arrays()
    assert set(arrays_a) == set(arrays_b)
    for name in arrays_a:
        assert np.array_equal(arrays_a[name], arrays_b[name])
    pred_a = a.predict(bench_videos[2:3])[0]
    pred_b = b.predict(bench_videos[2:3])[0]
    for key in pred_a:
        assert np.array_equal(pred_a[key], pred_b[key])


def test_seed_changes_initialization(bench_videos):
    a = small_model(epochs=1).fit(bench_videos[:1])
    b = small_model(epochs=1, seed=12).fit(bench_videos[:1])
    assert a.loss_history_ != b.loss_history_


def test_zero_learning_rate_freezes_parameters(bench_videos):
    model = small_model(epochs=3, learning_rate=0.0).fit(bench_videos[:2])
    losses = np.array(model.loss_history_)
    # parameters never move, so every epoch averages the same per-video losses
    assert losses.max() - losses.min() < 1e-12


# ---------------------------------------------------------------------------
# estimator protocol (get_params / clone)


def test_get_params_round_trip():
    model = small_model(variant="no-similarity", topology=("human_human",
                                                           "geometry_object"))
    params = model.get_params()
    assert params["embed_dim"] == 6
    assert params["variant"] == "no-similarity"
    assert params["topology"] == ("human_human", "geometry_object")
    rebuilt = InteractionRecognizer(**params)
    assert rebuilt.get_params() == params


def test_clone_copies_hyperparams_not_state(fitted):
    copy = clone(fitted)
    assert copy.get_params() == fitted.get_params()
    assert not hasattr(copy, "params_store_")
    with pytest.raises(EvaluationError, match="not fitted yet"):
        copy.predict([])


# ---------------------------------------------------------------------------
# persistence


def test_save_load_round_trip(fitted, bench_videos, tmp_path):
    path = tmp_path / "model.ckpt"
    fitted.save(path)
    loaded = InteractionRecognizer.load(path)
    assert loaded.get_params() == fitted.get_params()
    assert loaded.vocabularies_ == fitted.vocabularies_
    assert loaded.loss_history_ == fitted.loss_history_
    original = fitted.params_store_.state_arrays()
    restored = loaded.params_store_.state_arrays()
    assert set(original) == set(restored)
    for name in original:
        assert np.array_equal(original[name], restored[name])
    pred_a = fitted.predict(bench_videos[3:4])[0]
    pred_b = loaded.predict(bench_videos[3:4])[0]
    assert set(pred_a) == set(pred_b)
    for key in pred_a:
        assert np.array_equal(pred_a[key], pred_b[key])


def test_load_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="checkpoint file not found"):
        InteractionRecognizer.load(tmp_path / "absent.ckpt")


def test_load_rejects_foreign_estimator_tag(tmp_path):
    path = tmp_path / "foreign.ckpt"
    save_checkpoint(path, {"w": np.zeros((1, 1))}, {"estimator": "SomethingElse"})
    with pytest.raises(CheckpointError, match="not written by this estimator"):
        InteractionRecognizer.load(path)


def test_load_rejects_missing_vocabularies(fitted, tmp_path):
    path = tmp_path / "novocab.ckpt"
    fitted.save(path)
    meta, arrays = load_checkpoint(path)
    del meta["vocabularies"]
    save_checkpoint(path, arrays, meta)
    with pytest.raises(CheckpointError, match="lacks vocabularies"):
        InteractionRecognizer.load(path)


def test_load_rejects_mismatched_shapes(fitted, tmp_path):
    path = tmp_path / "reshaped.ckpt"
    fitted.save(path)
    meta, arrays = load_checkpoint(path)
    meta["hyperparams"]["hidden_dim"] = meta["hyperparams"]["hidden_dim"] + 1
    save_checkpoint(path, arrays, meta)
    with pytest.raises(CheckpointError,
                       match="does not match the configured model shapes"):
        InteractionRecognizer.load(path)


# ---------------------------------------------------------------------------
# ablation variants all run end to end


@pytest.mark.parametrize("variant", ABLATION_VARIANTS)
def test_every_variant_fits_and_predicts(bench_videos, variant):
    model = small_model(epochs=1, variant=variant).fit(bench_videos[:2])
    predictions = model.predict(bench_videos[2:3])[0]
    video = bench_videos[2]
    # geometric-level drops never remove entities from classification
    expected_keys = {("human", h.index) for h in video.humans} \
        | {("object", o.index) for o in video.objects}
    assert set(predictions) == expected_keys
    for ids in predictions.values():
        assert ids.shape == (video.frame_count,)
        assert np.isfinite(model.loss_history_[0])


@pytest.mark.parametrize("variant", ["no-similarity", "no-embedding",
                                     "no-skeletons", "no-objects"])
def test_geometric_variants_reach_object_logits_only(bench_videos, variant):
    # one attention round + geometry->object edge: the pooled-geometry node
    # feeds object entities, while human logits stay bitwise identical
    model = small_model(epochs=1).fit(bench_videos[:2])
    cache = model._video_cache(bench_videos[2])
    logits_full = model._forward_logits(cache)
    model.variant = variant
    logits_variant = model._forward_logits(cache)
    gaps = {key: np.abs(logits_full[key].data - logits_variant[key].data).max()
            for key in logits_full}
    assert all(gaps[key] == 0.0 for key in gaps if key[0] == "human")
    assert all(gaps[key] > 1e-12 for key in gaps if key[0] == "object")


def test_geometry_human_edge_reaches_human_logits(bench_videos):
    model = small_model(epochs=1, variant="with-geometry-human").fit(bench_videos[:2])
    cache = model._video_cache(bench_videos[2])
    logits_full = model._forward_logits(cache)
    model.variant = "no-similarity"  # keep the fitted geometry->human topology
    logits_variant = model._forward_logits(cache)
    human_gap = max(np.abs(logits_full[key].data - logits_variant[key].data).max()
                    for key in logits_full if key[0] == "human")
    assert human_gap > 1e-12

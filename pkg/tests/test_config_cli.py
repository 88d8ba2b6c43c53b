"""Run-config and CLI tests: precedence, commands, manifests, exit codes."""

import hashlib
import json
import shutil
import types

import numpy as np
import pytest

import hoigraph.tape as tape_mod
from hoigraph import cli
from hoigraph.cli import build_parser, main, resolve_config
from hoigraph.config import RunConfig, load_config, save_config
from hoigraph.data_io import (MotionStep, SynthConfig, generate_benchmark,
                              generate_synthetic, load_dataset, write_dataset)
from hoigraph.errors import ContractError, SchemaError
from hoigraph.fusion import DEFAULT_TOPOLOGY
from hoigraph.model import InteractionRecognizer
from hoigraph.segeval import cross_validate


# ---------------------------------------------------------------------------
# fixtures: one tiny dataset plus one pinned run-config for command tests


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("clibench") / "dataset"
    generate_benchmark(3, root, feature_dim=8, videos_per_pair=1,
                       frame_count=30, n_joints=2, n_objects=1)
    return root


def tiny_config(**overrides):
    base = dict(seed=3, embed_dim=6, graph_dim=8, hidden_dim=8, state_dim=8,
                feature_dim=8, learning_rate=1e-3, epochs=2,
                k_thresholds=(0.1, 0.5), synth_subjects=4,
                synth_videos_per_pair=1, synth_objects=1, synth_joints=2,
                synth_frames=30)
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    return save_config(tiny_config(), path)


@pytest.fixture(scope="module")
def trained_run(tiny_dataset, tiny_config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("trainruns") / "out"
    rc = main(["train", "--config", str(tiny_config_file),
               "--dataset", str(tiny_dataset), "--out", str(out)])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# RunConfig: round-trips, validation, precedence


def test_default_config_is_valid():
    config = RunConfig().validate()
    assert config.fusion_topology() == DEFAULT_TOPOLOGY
    assert config.k_thresholds == (0.1, 0.25, 0.5)


def test_payload_round_trip_default():
    config = RunConfig()
    assert RunConfig.from_payload(json.loads(json.dumps(config.to_payload()))) == config


def test_payload_round_trip_customized():
    config = tiny_config(variant="no-similarity", protocol="leave-pair",
                         topology=("human_human", "geometry_object"),
                         dataset_dir="some/where", checkpoint="a.ckpt")
    assert RunConfig.from_payload(json.loads(json.dumps(config.to_payload()))) == config


def test_config_file_round_trip(tmp_path):
    config = tiny_config(learning_rate=0.25, k_thresholds=(0.2,))
    path = save_config(config, tmp_path / "cfg.json")
    assert load_config(path) == config


@pytest.mark.parametrize("overrides, message", [
    (dict(epochs=0), "epochs must be a positive integer"),
    (dict(embed_dim=0), "embed_dim must be a positive integer"),
    (dict(synth_frames=0), "synth_frames must be a positive integer"),
    (dict(synth_objects=-1), "synth_objects must be >= 0"),
    (dict(learning_rate=-1.0), "learning_rate must be >= 0"),
    (dict(synth_occlusion=1.0), "synth_occlusion must lie in"),
    (dict(variant="bogus"), "unknown variant"),
    (dict(protocol="k-fold"), "unknown protocol"),
    (dict(topology=()), "at least one edge class"),
    (dict(topology=("sideways",)), "unknown edge class names"),
    (dict(k_thresholds=()), "at least one k threshold"),
    (dict(k_thresholds=(1.0,)), "strictly in \\(0, 1\\)"),
])
def test_config_validation_errors(overrides, message):
    with pytest.raises(ContractError, match=message):
        tiny_config(**overrides).validate()


def test_from_payload_rejects_non_object():
    with pytest.raises(SchemaError, match="expected a JSON object"):
        RunConfig.from_payload([1, 2])


def test_from_payload_rejects_wrong_schema():
    payload = RunConfig().to_payload()
    payload["schema"] = "something-else"
    with pytest.raises(SchemaError, match="config.schema"):
        RunConfig.from_payload(payload)


def test_from_payload_rejects_wrong_version():
    payload = RunConfig().to_payload()
    payload["version"] = 99
    with pytest.raises(SchemaError, match="unsupported version"):
        RunConfig.from_payload(payload)


def test_from_payload_rejects_unknown_fields():
    payload = RunConfig().to_payload()
    payload["momentum"] = 0.9
    with pytest.raises(SchemaError, match="unknown fields \\['momentum'\\]"):
        RunConfig.from_payload(payload)


def test_with_overrides_skips_none_and_validates():
    config = tiny_config()
    assert config.with_overrides(seed=None, epochs=None) == config
    assert config.with_overrides(seed=9).seed == 9
    with pytest.raises(ContractError, match="epochs must be a positive integer"):
        config.with_overrides(epochs=0)


def test_precedence_flag_beats_file_beats_default(tmp_path):
    path = save_config(RunConfig(seed=5, epochs=7), tmp_path / "cfg.json")
    args = build_parser().parse_args(["train", "--config", str(path), "--seed", "9"])
    config = resolve_config(args)
    assert config.seed == 9          # flag wins
    assert config.epochs == 7        # file beats default
    assert config.embed_dim == 64    # default survives


def test_flag_parsing_topology_and_thresholds():
    args = build_parser().parse_args([
        "eval", "--topology", "human_human, geometry_object",
        "--k-thresholds", "0.1,0.5"])
    config = resolve_config(args)
    assert config.topology == ("human_human", "geometry_object")
    assert config.k_thresholds == (0.1, 0.5)


def test_parser_rejects_unknown_command_and_variant():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["explode"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--variant", "bogus"])
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_main_bad_k_thresholds_exits_nonzero(capsys):
    assert main(["eval", "--k-thresholds", "a,b"]) == 1
    assert "comma-separated numbers" in capsys.readouterr().err


def test_main_bad_config_file_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["train", "--config", str(bad)]) == 1
    assert "not valid JSON" in capsys.readouterr().err

    unknown = tmp_path / "unknown.json"
    payload = RunConfig().to_payload()
    payload["momentum"] = 0.9
    unknown.write_text(json.dumps(payload), encoding="utf-8")
    assert main(["train", "--config", str(unknown)]) == 1
    assert "unknown fields" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# synth-gen


def test_synth_gen_default_layout(tmp_path, capsys):
    out = tmp_path / "gen"
    assert main(["synth-gen", "--out", str(out), "--seed", "7"]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text(encoding="utf-8"))
    videos = [n for n in manifest["files"] if n.startswith("dataset/videos/")]
    assert len(videos) == 24
    dataset = load_dataset(out / "dataset")
    assert {s for v in dataset.videos for s in v.subject_ids} == {"s1", "s2", "s3", "s4"}
    # manifest lists every output file with its true digest
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert "run_manifest.json" not in manifest["files"]
    assert manifest["command"] == "synth-gen"
    assert manifest["config"]["seed"] == 7
    captured = capsys.readouterr()
    assert "generated 24 videos" in captured.out
    assert manifest["digest"] in captured.out


def test_synth_gen_same_seed_same_digest(tmp_path, tiny_config_file):
    manifests = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert main(["synth-gen", "--config", str(tiny_config_file),
                     "--out", str(out), "--seed", "11"]) == 0
        manifests.append(json.loads((out / "run_manifest.json").read_text()))
    assert manifests[0]["files"] == manifests[1]["files"]
    assert manifests[0]["digest"] == manifests[1]["digest"]


def test_synth_gen_seed_changes_contents(tmp_path, tiny_config_file):
    manifests = {}
    for seed in (11, 12):
        out = tmp_path / str(seed)
        assert main(["synth-gen", "--config", str(tiny_config_file),
                     "--out", str(out), "--seed", str(seed)]) == 0
        manifests[seed] = json.loads((out / "run_manifest.json").read_text())
    assert set(manifests[11]["files"]) == set(manifests[12]["files"])
    assert manifests[11]["digest"] != manifests[12]["digest"]


def test_synth_gen_unwritable_out_dir(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory", encoding="utf-8")
    assert main(["synth-gen", "--out", str(blocker / "nested")]) == 1
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train

# recorded reference: the pinned tiny config (seed 3, dims 6/8/8/8,
# feature_dim 8, lr 1e-3, 2 epochs) on the generate_benchmark(3, ...) dataset
TRAIN_REFERENCE_FINAL_LOSS = 1.297569161976171


def test_train_writes_artifacts(trained_run, tiny_dataset, tiny_config_file, capsys):
    for name in ("model.ckpt", "train_log.csv", "config.json", "run_manifest.json"):
        assert (trained_run / name).is_file()
    log_lines = (trained_run / "train_log.csv").read_text().strip().splitlines()
    assert log_lines[0] == "epoch,loss"
    assert len(log_lines) == 1 + 2  # header + one row per epoch
    stored = load_config(trained_run / "config.json")
    assert stored == tiny_config(dataset_dir=str(tiny_dataset),
                                 out_dir=str(trained_run))


def test_train_checkpoint_round_trips_bit_exact(trained_run, tiny_dataset):
    loaded = InteractionRecognizer.load(trained_run / "model.ckpt")
    config = load_config(trained_run / "config.json")
    twin = cli._build_model(config).fit(load_dataset(tiny_dataset).videos)
    left, right = loaded.params_store_.state_arrays(), twin.params_store_.state_arrays()
    assert set(left) == set(right)
    for name in left:
        assert np.array_equal(left[name], right[name])
    logged = [float(line.split(",")[1]) for line in
              (trained_run / "train_log.csv").read_text().strip().splitlines()[1:]]
    assert logged == twin.loss_history_ == loaded.loss_history_


def test_train_final_loss_matches_recorded_reference(trained_run):
    lines = (trained_run / "train_log.csv").read_text().strip().splitlines()
    final_loss = float(lines[-1].split(",")[1])
    assert abs(final_loss - TRAIN_REFERENCE_FINAL_LOSS) < 1e-6


def test_train_is_deterministic_in_place(tiny_dataset, tiny_config_file, tmp_path):
    digests = []
    out = tmp_path / "redo"
    for _ in range(2):
        if out.exists():
            shutil.rmtree(out)
        assert main(["train", "--config", str(tiny_config_file),
                     "--dataset", str(tiny_dataset), "--out", str(out)]) == 0
        digests.append(json.loads((out / "run_manifest.json").read_text())["digest"])
    assert digests[0] == digests[1]


def test_train_zero_learning_rate_constant_loss(tiny_dataset, tmp_path):
    config_path = save_config(tiny_config(learning_rate=0.0, epochs=3),
                              tmp_path / "lr0.json")
    out = tmp_path / "out"
    assert main(["train", "--config", str(config_path),
                 "--dataset", str(tiny_dataset), "--out", str(out)]) == 0
    losses = [float(line.split(",")[1]) for line in
              (out / "train_log.csv").read_text().strip().splitlines()[1:]]
    assert len(losses) == 3
    assert max(losses) - min(losses) < 1e-12


def test_train_divergence_aborts_with_diagnostic(tiny_dataset, tiny_config_file,
                                                 tmp_path, monkeypatch, capsys):
    import hoigraph.model as model_mod
    monkeypatch.setattr(model_mod, "train_step",
                        lambda *args, **kwargs: float("nan"))
    assert main(["train", "--config", str(tiny_config_file),
                 "--dataset", str(tiny_dataset), "--out", str(tmp_path / "o")]) == 1
    assert "training diverged" in capsys.readouterr().err


def test_train_requires_dataset(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "o")]) == 1
    assert "needs --dataset" in capsys.readouterr().err
    assert main(["train", "--dataset", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "does not exist" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval

# recorded reference: mean F1 rows for the trained_run checkpoint evaluated
# on its own training dataset (leave-one-subject folds, ks 0.1/0.5)
EVAL_REFERENCE_MEANS = {
    ("given_segmentation", "human", 0.1): 0.151401,
    ("given_segmentation", "human", 0.5): 0.042335,
    ("given_segmentation", "object", 0.1): 0.5,
    ("given_segmentation", "object", 0.5): 0.0,
    ("joined", "human", 0.1): 0.236259,
    ("joined", "human", 0.5): 0.082664,
    ("joined", "object", 0.1): 0.5,
    ("joined", "object", 0.5): 0.0,
}


def run_eval(dataset, checkpoint, out, config_file):
    return main(["eval", "--config", str(config_file), "--dataset", str(dataset),
                 "--checkpoint", str(checkpoint), "--out", str(out)])


@pytest.fixture(scope="module")
def eval_run(tiny_dataset, tiny_config_file, trained_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("evalruns") / "out"
    rc = run_eval(tiny_dataset, trained_run / "model.ckpt", out, tiny_config_file)
    assert rc == 0
    return out


def _mean_rows(report_csv_text):
    means = {}
    for line in report_csv_text.strip().splitlines()[1:]:
        cells = line.split(",")
        if cells[3] == "mean":
            means[(cells[1], cells[2], float(cells[5]))] = float(cells[8])
    return means


def test_eval_writes_reports_and_diffs(eval_run, tiny_dataset):
    assert (eval_run / "report.txt").is_file()
    csv_text = (eval_run / "report.csv").read_text()
    header = csv_text.splitlines()[0]
    assert header == "protocol,mode,kind,fold,held_out,k,precision,recall,f1,degenerate"
    videos = load_dataset(tiny_dataset).videos
    diff_files = sorted(p.name for p in (eval_run / "diffs").iterdir())
    expected = sorted(f"{v.video_id}_{mode}.csv" for v in videos
                      for mode in ("joined", "given_segmentation"))
    assert diff_files == expected
    one = (eval_run / "diffs" / diff_files[0]).read_text().splitlines()
    assert one[0] == "video,entity,frame,truth,pred"
    assert len(one) == 1 + 30 * 3  # 30 frames x (2 humans + 1 object)


def test_eval_scores_match_recorded_reference(eval_run):
    means = _mean_rows((eval_run / "report.csv").read_text())
    assert set(means) == set(EVAL_REFERENCE_MEANS)
    for key, value in EVAL_REFERENCE_MEANS.items():
        assert means[key] == pytest.approx(value, rel=1e-9, abs=1e-9)


class _OracleModel:
    """Test double: echoes ground-truth labels; dims mimic the tiny config."""

    def __init__(self, config):
        for name in ("embed_dim", "graph_dim", "hidden_dim", "state_dim",
                     "feature_dim"):
            setattr(self, name, getattr(config, name))

    def predict(self, videos):
        return [{key: ids.copy() for key, ids, _vocab in video.labeled_entities()}
                for video in videos]

    predict_given_segments = predict


def test_eval_oracle_scores_all_ones(tiny_dataset, tiny_config_file, tmp_path,
                                     monkeypatch):
    oracle = _OracleModel(tiny_config())
    fake = types.SimpleNamespace(load=lambda path: oracle)
    monkeypatch.setattr(cli, "InteractionRecognizer", fake)
    checkpoint = tmp_path / "oracle.ckpt"
    checkpoint.write_bytes(b"placeholder")
    out = tmp_path / "out"
    assert run_eval(tiny_dataset, checkpoint, out, tiny_config_file) == 0
    for line in (out / "report.csv").read_text().strip().splitlines()[1:]:
        cells = line.split(",")
        if cells[3] not in ("mean", "std"):
            assert cells[8] == "1.000000" and cells[9] == "0"
        elif cells[3] == "mean":
            assert float(cells[8]) == 1.0
        else:
            assert float(cells[8]) == 0.0


def test_eval_rejects_shape_mismatched_checkpoint(tiny_dataset, trained_run,
                                                  tmp_path, capsys):
    config_path = save_config(tiny_config(embed_dim=7), tmp_path / "wider.json")
    rc = run_eval(tiny_dataset, trained_run / "model.ckpt", tmp_path / "out",
                  config_path)
    assert rc == 1
    assert "checkpoint was trained with embed_dim=6" in capsys.readouterr().err


def test_eval_requires_checkpoint(tiny_dataset, tiny_config_file, tmp_path, capsys):
    assert main(["eval", "--config", str(tiny_config_file),
                 "--dataset", str(tiny_dataset), "--out", str(tmp_path / "o")]) == 1
    assert "needs --checkpoint" in capsys.readouterr().err


def test_eval_rejects_corrupt_checkpoint(tiny_dataset, tiny_config_file,
                                         tmp_path, capsys):
    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"not a checkpoint at all")
    assert run_eval(tiny_dataset, garbage, tmp_path / "out", tiny_config_file) == 1
    assert "bad magic" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# ablate


@pytest.fixture(scope="module")
def ablate_run(tiny_dataset, tmp_path_factory):
    base = tmp_path_factory.mktemp("ablateruns")
    config_path = save_config(tiny_config(epochs=1, k_thresholds=(0.1,)),
                              base / "ablate.json")
    out = base / "out"
    rc = main(["ablate", "--config", str(config_path),
               "--dataset", str(tiny_dataset), "--out", str(out)])
    assert rc == 0
    return out


def test_ablate_emits_eight_variant_rows(ablate_run):
    lines = (ablate_run / "ablation.txt").read_text().strip().splitlines()
    variant_rows = lines[2:]  # title + header first
    assert len(variant_rows) == 8
    names = [row.split()[0] for row in variant_rows]
    assert names == ["full", "no-skeletons", "no-objects", "no-embedding",
                     "no-similarity", "no-human-object", "no-object-object",
                     "with-geometry-human"]
    csv_lines = (ablate_run / "ablation.csv").read_text().strip().splitlines()
    assert csv_lines[0] == "variant,mode,kind,k,mean_f1,std_f1"
    # 8 variants x 2 modes x 2 kinds x 1 threshold
    assert len(csv_lines) == 1 + 8 * 2 * 2 * 1


def test_ablate_full_row_matches_direct_cross_validation(ablate_run, tiny_dataset):
    config = tiny_config(epochs=1, k_thresholds=(0.1,))
    report = cross_validate(cli._build_model(config),
                            load_dataset(tiny_dataset).videos,
                            protocol=config.protocol, ks=config.k_thresholds)
    wanted = {}
    for mode in report.modes:
        for kind in report.kinds:
            mean, std = report.mean_std(mode, kind, 0.1)
            wanted[(mode, kind)] = (mean, std)
    for line in (ablate_run / "ablation.csv").read_text().strip().splitlines()[1:]:
        variant, mode, kind, _k, mean, std = line.split(",")
        if variant != "full":
            continue
        assert float(mean) == pytest.approx(wanted[(mode, kind)][0], abs=5e-7)
        assert float(std) == pytest.approx(wanted[(mode, kind)][1], abs=5e-7)


def test_ablate_skips_object_variants_without_objects(tmp_path, capsys):
    steps = ((MotionStep("wave", 15, "idle"), MotionStep("rest", 15, "idle")),
             (MotionStep("rest", 18, "idle"), MotionStep("wave", 12, "idle")))
    annotations = []
    for i in range(4):
        config = SynthConfig(video_id=f"solo{i}", subject_ids=(f"s{i % 2 + 1}",),
                             seed=40 + i, n_humans=1, n_objects=0, n_joints=3,
                             frame_count=30, scripts=(steps[i % 2],),
                             human_classes=("wave", "rest"))
        annotations.append(generate_synthetic(config))
    dataset_dir = write_dataset(annotations, {"human": ("wave", "rest")},
                                tmp_path / "solo")
    config_path = save_config(tiny_config(epochs=1, k_thresholds=(0.1,)),
                              tmp_path / "cfg.json")
    out = tmp_path / "out"
    assert main(["ablate", "--config", str(config_path),
                 "--dataset", str(dataset_dir), "--out", str(out)]) == 0
    text = (out / "ablation.txt").read_text()
    assert text.count("skipped: dataset has no objects") == 5
    csv_variants = {line.split(",")[0] for line in
                    (out / "ablation.csv").read_text().strip().splitlines()[1:]}
    assert csv_variants == {"full", "no-embedding", "no-similarity"}


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_vacuous_model_passes_with_note(tmp_path, monkeypatch, capsys):
    model = types.SimpleNamespace(params_store_=tape_mod.ParamStore())
    loss_fn = lambda: tape_mod.constant(np.zeros((1, 1)))  # noqa: E731
    monkeypatch.setattr(cli, "gradcheck_model",
                        lambda seed, variant="full": (model, loss_fn))
    out = tmp_path / "out"
    assert main(["gradcheck", "--out", str(out)]) == 0
    text = (out / "gradcheck.txt").read_text()
    assert "PASS" in text and "no parameters" in text


def test_gradcheck_detects_broken_backward_rule(tmp_path, monkeypatch, capsys):
    # corrupt the backward rule only: same forward values, gradient passes
    # through negative inputs as if relu were the identity
    def wrong_relu(x):
        mask = x.data > 0.0

        def rule(out):
            tape_mod._accum(x, out.grad)

        return tape_mod._result(np.where(mask, x.data, 0.0), (x,), rule)

    monkeypatch.setattr(tape_mod, "relu", wrong_relu)
    out = tmp_path / "out"
    assert main(["gradcheck", "--out", str(out), "--seed", "0"]) == 1
    text = (out / "gradcheck.txt").read_text()
    assert "FAIL" in text

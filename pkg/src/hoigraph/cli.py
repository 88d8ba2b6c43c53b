"""Command-line pipeline driver: synth-gen, train, eval, ablate, gradcheck.

Every command resolves its RunConfig with precedence flag > config file >
default, writes its outputs plus a run manifest with per-file sha256 digests
into the output directory, and exits nonzero on any error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import tape
from .backbone import cross_entropy_sum
from .config import RunConfig, load_config, save_config
from .data_io import (BENCHMARK_CLASSES, MotionStep, SynthConfig, canonical_json_bytes,
                      generate_benchmark, generate_synthetic, load_dataset)
from .errors import (CheckpointError, ContractError, EvaluationError, SchemaError,
                     SegmentationError, ShapeError, TapeStateError)
from .model import InteractionRecognizer
from .seeding import substream
from .segeval import (GIVEN_SEGMENTATION, JOINED, LEAVE_ONE_SUBJECT, LEAVE_PAIR,
                      cross_validate, evaluate_folds, timeline_diff_rows)
from .tape import finite_difference_check
from .variants import ABLATION_VARIANTS

_OBJECT_DEPENDENT_VARIANTS = {"no-skeletons", "no-objects", "no-human-object",
                              "no-object-object", "with-geometry-human"}

RUN_MANIFEST_NAME = "run_manifest.json"


# ---------------------------------------------------------------------------
# manifest plumbing


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_digests(root: Path) -> dict:
    files = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != RUN_MANIFEST_NAME:
            files[p.relative_to(root).as_posix()] = _sha256(p.read_bytes())
    return files


def _overall_digest(files: dict) -> str:
    listing = "\n".join(f"{name} {digest}" for name, digest in sorted(files.items()))
    return _sha256(listing.encode("utf-8"))


def _write_manifest(out_dir: Path, command: str, config: RunConfig) -> dict:
    files = _file_digests(out_dir)
    payload = {"command": command, "config": config.to_payload(),
               "files": files, "digest": _overall_digest(files)}
    (out_dir / RUN_MANIFEST_NAME).write_bytes(canonical_json_bytes(payload))
    return payload


def _print_manifest(payload: dict) -> None:
    for name in sorted(payload["files"]):
        print(f"  {name}  {payload['files'][name][:12]}")
    print(f"manifest: {len(payload['files'])} files, digest {payload['digest']}")


def _build_model(config: RunConfig) -> InteractionRecognizer:
    return InteractionRecognizer(
        embed_dim=config.embed_dim, graph_dim=config.graph_dim,
        hidden_dim=config.hidden_dim, state_dim=config.state_dim,
        feature_dim=config.feature_dim, variant=config.variant,
        topology=tuple(config.topology), learning_rate=config.learning_rate,
        epochs=config.epochs, seed=config.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_gen(config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    dataset_dir = out_dir / "dataset"
    generate_benchmark(config.seed, dataset_dir, feature_dim=config.feature_dim,
                       n_subjects=config.synth_subjects,
                       videos_per_pair=config.synth_videos_per_pair,
                       n_objects=config.synth_objects, n_joints=config.synth_joints,
                       frame_count=config.synth_frames,
                       occlusion_rate=config.synth_occlusion)
    payload = _write_manifest(out_dir, "synth-gen", config)
    n_videos = sum(1 for name in payload["files"] if name.startswith("dataset/videos/"))
    print(f"generated {n_videos} videos under {dataset_dir}")
    _print_manifest(payload)
    return 0


def cmd_train(config: RunConfig) -> int:
    config.validate_paths(need_dataset=True)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.dataset_dir)
    model = _build_model(config)
    model.fit(dataset.videos)
    model.save(out_dir / "model.ckpt")
    log_lines = ["epoch,loss"] + [f"{i + 1},{loss!r}"
                                  for i, loss in enumerate(model.loss_history_)]
    (out_dir / "train_log.csv").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    save_config(config, out_dir / "config.json")
    payload = _write_manifest(out_dir, "train", config)
    print(f"trained {config.epochs} epochs on {len(dataset.videos)} videos; "
          f"final loss {model.loss_history_[-1]:.6f}")
    _print_manifest(payload)
    return 0


def _check_checkpoint_compatible(config: RunConfig, model: InteractionRecognizer) -> None:
    for name in ("embed_dim", "graph_dim", "hidden_dim", "state_dim", "feature_dim"):
        wanted, stored = int(getattr(config, name)), int(getattr(model, name))
        if wanted != stored:
            raise CheckpointError(f"checkpoint was trained with {name}={stored}, "
                                  f"config requests {wanted}")


def cmd_eval(config: RunConfig) -> int:
    config.validate_paths(need_dataset=True, need_checkpoint=True)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.dataset_dir)
    model = InteractionRecognizer.load(config.checkpoint)
    _check_checkpoint_compatible(config, model)
    report = evaluate_folds(model, dataset.videos, protocol=config.protocol,
                            ks=config.k_thresholds)
    (out_dir / "report.txt").write_text(report.text_table(), encoding="utf-8")
    (out_dir / "report.csv").write_text(report.csv_table(), encoding="utf-8")
    diff_dir = out_dir / "diffs"
    diff_dir.mkdir(exist_ok=True)
    seen = set()
    for fold in report.folds:
        for video_id, by_mode in fold.predictions.items():
            if video_id in seen:
                continue
            seen.add(video_id)
            for mode in (JOINED, GIVEN_SEGMENTATION):
                rows = ["video,entity,frame,truth,pred"]
                rows += timeline_diff_rows(video_id, by_mode["truth"], by_mode[mode])
                (diff_dir / f"{video_id}_{mode}.csv").write_text(
                    "\n".join(rows) + "\n", encoding="utf-8")
    payload = _write_manifest(out_dir, "eval", config)
    print(report.text_table())
    _print_manifest(payload)
    return 0


def cmd_ablate(config: RunConfig) -> int:
    config.validate_paths(need_dataset=True)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.dataset_dir)
    has_objects = any(v.n_objects for v in dataset.videos)

    rows = []
    csv_rows = ["variant,mode,kind,k,mean_f1,std_f1"]
    reports = {}
    for variant in ABLATION_VARIANTS:
        if not has_objects and variant in _OBJECT_DEPENDENT_VARIANTS:
            rows.append((variant, None, "skipped: dataset has no objects"))
            continue
        estimator = _build_model(config.with_overrides(variant=variant))
        report = cross_validate(estimator, dataset.videos, protocol=config.protocol,
                                ks=config.k_thresholds)
        reports[variant] = report
        for mode in report.modes:
            for kind in report.kinds:
                for k in report.ks:
                    mean, std = report.mean_std(mode, kind, k)
                    csv_rows.append(f"{variant},{mode},{kind},{k:g},"
                                    f"{mean:.6f},{std:.6f}")
        rows.append((variant, report, None))

    header = ["variant"] + [f"F1@{int(round(k * 100))}" for k in config.k_thresholds]
    lines = [f"ablation over {len(ABLATION_VARIANTS)} variants "
             f"(protocol={config.protocol}, joined segmentation, human labels)"]
    lines.append("  ".join(f"{h:>22}" if i == 0 else f"{h:>8}"
                           for i, h in enumerate(header)))
    for variant, report, note in rows:
        if report is None:
            lines.append(f"{variant:>22}  {note}")
            continue
        cells = [f"{report.mean_std(JOINED, 'human', k)[0]:.4f}"
                 for k in report.ks]
        lines.append("  ".join([f"{variant:>22}"] + [f"{c:>8}" for c in cells]))
    table = "\n".join(lines) + "\n"
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    (out_dir / "ablation.csv").write_text("\n".join(csv_rows) + "\n", encoding="utf-8")
    payload = _write_manifest(out_dir, "ablate", config)
    print(table)
    _print_manifest(payload)
    return 0


# -- gradient checking -------------------------------------------------------

_GROUP_LABELS = {
    "geo.embed1": "keypoint embedding layer 1",
    "geo.embed2": "keypoint embedding layer 2",
    "geo.flat": "flat keypoint embedding",
    "geo.query": "similarity query projection",
    "geo.key": "similarity key projection",
    "geo.mix": "graph mixing weights",
    "fusion.human": "human feature mlp",
    "fusion.object": "object feature mlp",
    "fusion.geometry": "geometry feature mlp",
    "fusion.merge": "attention merge projection",
    "backbone.forward": "forward recurrent cell",
    "backbone.backward": "backward recurrent cell",
    "backbone.head": "classifier heads",
}


def _gradcheck_video(seed: int):
    steps = (MotionStep("idle", 2, "idle"),
             MotionStep("approach", 2, "approach"),
             MotionStep("retreat", 2, "retreat"))
    synth = SynthConfig(video_id="gradcheck", subject_ids=("s1", "s2"), seed=seed,
                        n_humans=2, n_objects=2, n_joints=3, frame_count=6,
                        scripts=(steps, steps), human_classes=BENCHMARK_CLASSES,
                        occlusion_rate=0.1)
    return generate_synthetic(synth)


def gradcheck_model(seed: int, variant: str = "full") -> tuple:
    """A tiny untrained end-to-end model plus its loss closure (T=6, J=10).

    Parameters are jittered off their init point so the check runs at a
    generic position: with zero-init biases many relu pre-activations sit
    exactly on the kink, where central differences disagree with any
    one-sided derivative no matter how small the step.
    """
    video = _gradcheck_video(seed)
    model = InteractionRecognizer(embed_dim=6, graph_dim=8, hidden_dim=8, state_dim=8,
                                  feature_dim=8, variant=variant, seed=seed)
    model.topology_ = model._resolve_topology()
    model.vocabularies_ = model._collect_vocabularies([video])
    model._build_params({k: len(v) for k, v in model.vocabularies_.items()})
    for name, t in model.params_store_.items():
        jitter = substream(seed, "gradcheck-jitter", name).uniform(-0.05, 0.05, t.shape)
        t._set_data(t.data + jitter)
    cache = model._video_cache(video)

    def loss_fn():
        pieces = []
        counted = 0
        for logits, labels, mask in model._training_triples(cache):
            piece, n = cross_entropy_sum(logits, labels, mask)
            pieces.append(piece)
            counted += n
        total = pieces[0]
        for piece in pieces[1:]:
            total = tape.add(total, piece)
        return tape.scale_shift(total, 1.0 / counted)

    return model, loss_fn


def cmd_gradcheck(config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    model, loss_fn = gradcheck_model(config.seed, variant=config.variant)
    # step 1e-5: small enough that a +/-step bump almost never crosses a relu
    # kink (where central differences are invalid), far above float64 noise.
    report = finite_difference_check(loss_fn, model.params_store_, step=1e-5)

    groups = {}
    for name, err in report.max_errors.items():
        prefix = ".".join(name.split(".")[:2])
        groups[prefix] = max(groups.get(prefix, 0.0), err)
    lines = [f"gradient check: T=6 J=10 params={model.params_store_.n_values()} "
             f"step={report.step:g} tol={report.tol:g} variant={config.variant}"]
    for prefix in sorted(groups):
        label = _GROUP_LABELS.get(prefix, prefix)
        status = "PASS" if groups[prefix] <= report.tol else "FAIL"
        lines.append(f"{status}  {label:<32} worst_rel_err={groups[prefix]:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    lines.append(f"overall: {verdict} (worst {report.worst():.3e})"
                 if report.max_errors else f"overall: {verdict} ({report.note})")
    text = "\n".join(lines) + "\n"
    (out_dir / "gradcheck.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"elapsed: {time.monotonic() - started:.1f}s")
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hoigraph",
        description="Two-level geometric-graph recognizer for human-object "
                    "interaction videos")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--variant", choices=ABLATION_VARIANTS, help="ablation variant")
    common.add_argument("--topology", help="comma-separated enabled edge classes")
    common.add_argument("--protocol", choices=(LEAVE_ONE_SUBJECT, LEAVE_PAIR),
                        help="cross-validation protocol")
    common.add_argument("--k-thresholds", help="comma-separated IoU thresholds in (0,1)")
    common.add_argument("--dataset", help="dataset directory")
    common.add_argument("--checkpoint", help="checkpoint file (eval)")
    common.add_argument("--epochs", type=int, help="training epochs")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-gen", parents=[common],
                   help="generate the synthetic benchmark dataset")
    sub.add_parser("train", parents=[common], help="train one model on a dataset")
    sub.add_parser("eval", parents=[common],
                   help="evaluate a checkpoint fold-by-fold")
    sub.add_parser("ablate", parents=[common],
                   help="train and evaluate every ablation variant")
    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference check of all parameter groups")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "out_dir": args.out, "variant": args.variant,
                 "protocol": args.protocol, "dataset_dir": args.dataset,
                 "checkpoint": args.checkpoint, "epochs": args.epochs}
    if args.topology:
        overrides["topology"] = tuple(s.strip() for s in args.topology.split(",") if s.strip())
    if args.k_thresholds:
        try:
            overrides["k_thresholds"] = tuple(float(s) for s in args.k_thresholds.split(","))
        except ValueError as exc:
            raise ContractError(f"--k-thresholds must be comma-separated numbers: {exc}")
    return config.with_overrides(**overrides)


_COMMANDS = {"synth-gen": cmd_synth_gen, "train": cmd_train, "eval": cmd_eval,
             "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return _COMMANDS[args.command](config)
    except (ContractError, SchemaError, CheckpointError, EvaluationError,
            SegmentationError, ShapeError, TapeStateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

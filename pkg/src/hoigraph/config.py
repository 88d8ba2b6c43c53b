"""Run configuration: one flat, serializable record per experiment.

Values resolve with precedence command-line flag > config file > default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError, SchemaError
from .fusion import DEFAULT_TOPOLOGY, FusionTopology
from .segeval import LEAVE_ONE_SUBJECT, LEAVE_PAIR
from .variants import ABLATION_VARIANTS

CONFIG_SCHEMA = "hoi-run-config"
CONFIG_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    dataset_dir: str | None = None
    out_dir: str = "runs/out"
    checkpoint: str | None = None
    seed: int = 0

    embed_dim: int = 64
    graph_dim: int = 128
    hidden_dim: int = 128
    state_dim: int = 128
    feature_dim: int = 32

    variant: str = "full"
    topology: tuple = DEFAULT_TOPOLOGY.enabled_names()
    learning_rate: float = 1e-3
    epochs: int = 30
    protocol: str = LEAVE_ONE_SUBJECT
    k_thresholds: tuple = (0.1, 0.25, 0.5)

    synth_subjects: int = 4
    synth_videos_per_pair: int = 4
    synth_objects: int = 2
    synth_joints: int = 5
    synth_frames: int = 48
    synth_occlusion: float = 0.1

    def validate(self) -> "RunConfig":
        for name in ("embed_dim", "graph_dim", "hidden_dim", "state_dim", "feature_dim",
                     "epochs", "synth_subjects", "synth_videos_per_pair", "synth_joints",
                     "synth_frames"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be a positive integer, "
                                    f"got {getattr(self, name)}")
        if self.synth_objects < 0:
            raise ContractError("synth_objects must be >= 0")
        if self.learning_rate < 0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.synth_occlusion < 1.0:
            raise ContractError(f"synth_occlusion must lie in [0, 1), got "
                                f"{self.synth_occlusion}")
        if self.variant not in ABLATION_VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; "
                                f"known: {ABLATION_VARIANTS}")
        if self.protocol not in (LEAVE_ONE_SUBJECT, LEAVE_PAIR):
            raise ContractError(f"unknown protocol {self.protocol!r}")
        FusionTopology.from_names(self.topology).validate()
        if not self.k_thresholds:
            raise ContractError("need at least one k threshold")
        for k in self.k_thresholds:
            if not 0.0 < float(k) < 1.0:
                raise ContractError(f"k thresholds must lie strictly in (0, 1), got {k}")
        return self

    def validate_paths(self, need_dataset: bool = False,
                       need_checkpoint: bool = False) -> "RunConfig":
        if need_dataset:
            if not self.dataset_dir:
                raise ContractError("this command needs --dataset (or dataset_dir in "
                                    "the config file)")
            if not Path(self.dataset_dir).is_dir():
                raise ContractError(f"dataset directory does not exist: {self.dataset_dir}")
        if need_checkpoint:
            if not self.checkpoint:
                raise ContractError("this command needs --checkpoint (or checkpoint in "
                                    "the config file)")
            if not Path(self.checkpoint).is_file():
                raise ContractError(f"checkpoint file does not exist: {self.checkpoint}")
        return self

    def fusion_topology(self) -> FusionTopology:
        return FusionTopology.from_names(self.topology)

    def to_payload(self) -> dict:
        payload = {"schema": CONFIG_SCHEMA, "version": CONFIG_VERSION}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            payload[f.name] = list(value) if isinstance(value, tuple) else value
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "RunConfig":
        if not isinstance(payload, dict):
            raise SchemaError(f"config: expected a JSON object, got {type(payload).__name__}")
        if payload.get("schema") != CONFIG_SCHEMA:
            raise SchemaError(f"config.schema: expected {CONFIG_SCHEMA!r}, "
                              f"got {payload.get('schema')!r}")
        if payload.get("version") != CONFIG_VERSION:
            raise SchemaError(f"config.version: unsupported version {payload.get('version')!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known - {"schema", "version"})
        if unknown:
            raise SchemaError(f"config: unknown fields {unknown}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in payload:
                continue
            value = payload[f.name]
            if f.name in ("topology",):
                value = tuple(str(v) for v in value)
            elif f.name == "k_thresholds":
                value = tuple(float(v) for v in value)
            kwargs[f.name] = value
        return cls(**kwargs).validate()

    def with_overrides(self, **overrides) -> "RunConfig":
        cleaned = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **cleaned).validate()


def save_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_payload(), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: not valid JSON: {exc}") from exc
    return RunConfig.from_payload(payload)

"""Ablation variant registry: which pipeline pieces each named variant disables."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ContractError


@dataclass(frozen=True)
class VariantSpec:
    name: str
    drop_humans: bool = False
    drop_objects: bool = False
    use_embedding: bool = True
    use_similarity: bool = True
    topology_overrides: dict = field(default_factory=dict)


_SPECS = {
    "full": VariantSpec("full"),
    "no-skeletons": VariantSpec("no-skeletons", drop_humans=True),
    "no-objects": VariantSpec("no-objects", drop_objects=True),
    "no-embedding": VariantSpec("no-embedding", use_embedding=False),
    "no-similarity": VariantSpec("no-similarity", use_similarity=False),
    "no-human-object": VariantSpec("no-human-object", topology_overrides={"human_object": False}),
    "no-object-object": VariantSpec("no-object-object", topology_overrides={"object_object": False}),
    "with-geometry-human": VariantSpec("with-geometry-human", topology_overrides={"geometry_human": True}),
}

ABLATION_VARIANTS = tuple(_SPECS.keys())


def variant_spec(name: str) -> VariantSpec:
    if name not in _SPECS:
        raise ContractError(f"unknown ablation variant {name!r}; known: {', '.join(ABLATION_VARIANTS)}")
    return _SPECS[name]

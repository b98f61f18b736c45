"""Discrete search-space definition, validation, and uniform sampling.

A search space is an ordered list of named dimensions, each with a finite
ordered list of option labels. Option labels are opaque strings; nothing in
the engine interprets them. A model spec is one option index per dimension.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from importlib import resources
from typing import Iterator

import numpy as np
import yaml

from .errors import ConfigError

# A sampled child-model description: one 0-based option index per dimension.
ModelSpec = tuple[int, ...]


@dataclass(frozen=True)
class Dimension:
    """One named design choice with a finite, ordered set of option labels."""

    name: str
    options: tuple[str, ...]


@dataclass(frozen=True)
class SearchSpace:
    """Immutable, validated search space; safe to share across workers."""

    dimensions: tuple[Dimension, ...]

    @property
    def option_counts(self) -> tuple[int, ...]:
        return tuple(len(d.options) for d in self.dimensions)

    @property
    def num_dimensions(self) -> int:
        return len(self.dimensions)

    def cardinality(self) -> int:
        """Exact number of distinct model specs (arbitrary precision)."""
        out = 1
        for d in self.dimensions:
            out *= len(d.options)
        return out

    def content_hash(self) -> bytes:
        """32-byte digest of a canonical serialization.

        Length-prefixed names and option labels in declared order, so the
        hash is platform-independent and binds checkpoints to spaces.
        """
        h = hashlib.sha256()

        def put(text: str) -> None:
            raw = text.encode("utf-8")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)

        h.update(len(self.dimensions).to_bytes(4, "little"))
        for dim in self.dimensions:
            put(dim.name)
            h.update(len(dim.options).to_bytes(4, "little"))
            for opt in dim.options:
                put(opt)
        return h.digest()

    def content_hash_hex(self) -> str:
        return self.content_hash().hex()

    def validate_spec(self, spec: ModelSpec) -> None:
        """Raise ValueError unless ``spec`` has one in-range index per dimension."""
        if len(spec) != len(self.dimensions):
            raise ValueError(
                f"spec has {len(spec)} choices but the space has "
                f"{len(self.dimensions)} dimensions"
            )
        for d, (dim, idx) in enumerate(zip(self.dimensions, spec)):
            if not 0 <= int(idx) < len(dim.options):
                raise ValueError(
                    f"choice {idx} out of range for dimension {d} "
                    f"({dim.name!r} has {len(dim.options)} options)"
                )

    def sample_uniform(self, rng: np.random.Generator) -> ModelSpec:
        """Draw each dimension's index independently and uniformly."""
        return tuple(int(rng.integers(len(d.options))) for d in self.dimensions)

    def spec_to_labels(self, spec: ModelSpec) -> list[tuple[str, str]]:
        """Render a spec as (dimension name, option label) pairs in space order."""
        self.validate_spec(spec)
        return [(d.name, d.options[i]) for d, i in zip(self.dimensions, spec)]

    def iter_specs(self) -> Iterator[ModelSpec]:
        """Enumerate every spec in lexicographic order (use on small spaces)."""
        return itertools.product(*(range(len(d.options)) for d in self.dimensions))

    def to_definition(self) -> dict:
        """Config-section rendering; ``build_space`` round-trips it."""
        return {
            "dimensions": [
                {"name": d.name, "options": list(d.options)} for d in self.dimensions
            ]
        }


def build_space(definition: dict) -> SearchSpace:
    """Build and validate a SearchSpace from a parsed config section.

    The section either names a bundled preset (``{"preset": "table1_text"}``)
    or lists dimensions explicitly
    (``{"dimensions": [{"name": ..., "options": [...]}, ...]}``).
    """
    if not isinstance(definition, dict):
        raise ConfigError("space section must be a mapping")
    keys = set(definition)
    if "preset" in keys:
        if keys != {"preset"}:
            raise ConfigError("space section mixes 'preset' with other keys")
        return load_preset(definition["preset"])
    if keys != {"dimensions"}:
        raise ConfigError(
            "space section must contain exactly one of 'preset' or 'dimensions'"
        )
    raw_dims = definition["dimensions"]
    if not isinstance(raw_dims, list) or not raw_dims:
        raise ConfigError("space must declare at least one dimension")

    dims: list[Dimension] = []
    seen: set[str] = set()
    for i, entry in enumerate(raw_dims):
        if not isinstance(entry, dict) or set(entry) != {"name", "options"}:
            raise ConfigError(
                f"dimension {i} must be a mapping with exactly 'name' and 'options'"
            )
        name = entry["name"]
        if not isinstance(name, str) or not name:
            raise ConfigError(f"dimension {i} has an invalid name: {name!r}")
        if name in seen:
            raise ConfigError(f"duplicate dimension name {name!r}")
        seen.add(name)
        options = entry["options"]
        if not isinstance(options, list) or not options:
            raise ConfigError(f"dimension {name!r} must list at least one option")
        labels: list[str] = []
        for opt in options:
            if not isinstance(opt, str):
                raise ConfigError(
                    f"dimension {name!r}: option {opt!r} is not a string "
                    "(quote numeric labels)"
                )
            labels.append(opt)
        if len(set(labels)) != len(labels):
            raise ConfigError(f"dimension {name!r} has duplicate option labels")
        dims.append(Dimension(name=name, options=tuple(labels)))
    return SearchSpace(dimensions=tuple(dims))


def load_preset(name: str) -> SearchSpace:
    """Load a bundled search-space preset by name."""
    if not isinstance(name, str):
        raise ConfigError(f"preset name must be a string, got {name!r}")
    try:
        text = (
            resources.files("taml.presets").joinpath(f"{name}.yaml").read_text("utf-8")
        )
    except FileNotFoundError:
        raise ConfigError(f"unknown search-space preset {name!r}") from None
    return build_space(yaml.safe_load(text))


def table1_text_space() -> SearchSpace:
    """The bundled 12-dimension text search space (568,995,840 configurations)."""
    return load_preset("table1_text")

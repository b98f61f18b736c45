"""Run-config file parsing with a strict schema.

The config file is YAML with four sections: ``space``, ``tasks``,
``controller``, and ``run``. Unknown keys are rejected so a typo in a
hyperparameter name cannot silently corrupt an experiment. Command-line
overrides are applied after file values, and the fully resolved config is
echoed into the run directory for provenance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .policy import ControllerConfig
from .search_space import SearchSpace, build_space
from .seeding import derive_seed
from .tasks import FamilyConfig, TaskDefinition, make_task_family
from .trainer import MODES, RunConfig

_CONTROLLER_DEFAULTS: dict[str, Any] = {
    "learning_rate": 1e-4,
    "entropy_weight": 0.01,
    "init_range": 0.05,
    "optimizer": "adam",
    "embedding_size": 25,
    "hidden_size": 50,
    "baseline_decay": 0.01,
}

_RUN_DEFAULTS: dict[str, Any] = {
    "mode": None,  # required
    "budget": None,  # required
    "parallelism": 1,
    "seed": 0,
    "checkpoint_every": 0,
    "from_checkpoint": None,
    "top_n": 10,
    "stride": 5,
    "status_interval": 1,
    "freeze_shared_on_transfer": False,
}

_FAMILY_KEYS = {
    "n_clusters",
    "tasks_per_cluster",
    "shared_dims",
    "global_dim",
    "holdout_per_cluster",
    "outlier",
    "base_reward",
    "global_weight",
    "shared_weight",
    "specific_weight",
    "val_noise_std",
    "test_noise_std",
    "val_size",
    "cluster_preferences",
    "interaction_pairs",
    "interaction_weight",
}

_TASK_ENTRY_KEYS = {
    "name",
    "cluster",
    "preferred",
    "weights",
    "base_reward",
    "val_noise_std",
    "test_noise_std",
    "val_size",
    "interactions",
}


@dataclass(frozen=True)
class CliInvocation:
    """One parsed command line: a subcommand plus typed overrides."""

    subcommand: str
    config_path: Path | None = None
    overrides: dict[str, Any] | None = None
    out_dir: Path | None = None


def _require_mapping(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value

def _reject_unknown(section: dict, allowed: set[str], where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}.{key!r}")


def _as_float(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    return int(value)


def _as_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where} must be true or false, got {value!r}")
    return value


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    if raw is None:
        raise ConfigError(f"{p}: config file is empty")
    raw = _require_mapping(raw, str(p))
    _reject_unknown(raw, {"space", "tasks", "controller", "run"}, str(p))
    for section in ("space", "tasks", "run"):
        if section not in raw:
            raise ConfigError(f"{p}: missing required section {section!r}")
    return raw


def _resolve_controller(section: Any) -> dict:
    section = _require_mapping(section or {}, "controller")
    _reject_unknown(section, set(_CONTROLLER_DEFAULTS), "controller")
    resolved = dict(_CONTROLLER_DEFAULTS)
    resolved.update(section)
    for key in ("learning_rate", "entropy_weight", "init_range", "baseline_decay"):
        resolved[key] = _as_float(resolved[key], f"controller.{key}")
    for key in ("embedding_size", "hidden_size"):
        resolved[key] = _as_int(resolved[key], f"controller.{key}")
    if resolved["optimizer"] not in ("adam", "sgd"):
        raise ConfigError(
            f"controller.optimizer must be 'adam' or 'sgd', got "
            f"{resolved['optimizer']!r}"
        )
    return resolved


def _resolve_run(section: Any, overrides: dict[str, Any] | None) -> dict:
    section = _require_mapping(section, "run")
    _reject_unknown(section, set(_RUN_DEFAULTS), "run")
    resolved = dict(_RUN_DEFAULTS)
    resolved.update(section)
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                resolved[key] = value
    if resolved["mode"] is None:
        raise ConfigError("run.mode is required")
    if resolved["mode"] not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {resolved['mode']!r}")
    if resolved["budget"] is None:
        raise ConfigError("run.budget is required")
    for key in ("budget", "parallelism", "seed", "checkpoint_every", "top_n", "stride",
                "status_interval"):
        resolved[key] = _as_int(resolved[key], f"run.{key}")
    resolved["freeze_shared_on_transfer"] = _as_bool(
        resolved["freeze_shared_on_transfer"], "run.freeze_shared_on_transfer"
    )
    if resolved["from_checkpoint"] is not None and not isinstance(
        resolved["from_checkpoint"], str
    ):
        raise ConfigError("run.from_checkpoint must be a path string")
    return resolved


def _task_from_entry(entry: Any, index: int) -> TaskDefinition:
    entry = _require_mapping(entry, f"tasks.list[{index}]")
    _reject_unknown(entry, _TASK_ENTRY_KEYS, f"tasks.list[{index}]")
    for key in ("name", "preferred", "weights", "base_reward"):
        if key not in entry:
            raise ConfigError(f"tasks.list[{index}] is missing {key!r}")
    return TaskDefinition(
        name=str(entry["name"]),
        cluster_id=_as_int(entry.get("cluster", 0), f"tasks.list[{index}].cluster"),
        preferred=tuple(
            _as_int(v, f"tasks.list[{index}].preferred") for v in entry["preferred"]
        ),
        weights=tuple(
            _as_float(v, f"tasks.list[{index}].weights") for v in entry["weights"]
        ),
        base_reward=_as_float(entry["base_reward"], f"tasks.list[{index}].base_reward"),
        val_noise_std=_as_float(
            entry.get("val_noise_std", 0.0), f"tasks.list[{index}].val_noise_std"
        ),
        test_noise_std=_as_float(
            entry.get("test_noise_std", 0.0), f"tasks.list[{index}].test_noise_std"
        ),
        val_size=_as_int(entry.get("val_size", 1), f"tasks.list[{index}].val_size"),
        interactions=tuple(
            (int(a), int(b), float(w)) for a, b, w in entry.get("interactions", [])
        ),
    )


def _resolve_tasks(
    section: Any, space: SearchSpace, seed: int
) -> list[TaskDefinition]:
    section = _require_mapping(section, "tasks")
    _reject_unknown(section, {"family", "list", "select"}, "tasks")
    has_family = "family" in section
    has_list = "list" in section
    if has_family == has_list:
        raise ConfigError("tasks must give exactly one of 'family' or 'list'")

    if has_family:
        fam = _require_mapping(section["family"], "tasks.family")
        _reject_unknown(fam, _FAMILY_KEYS, "tasks.family")
        kwargs = dict(fam)
        if "shared_dims" in kwargs:
            kwargs["shared_dims"] = tuple(kwargs["shared_dims"])
        if "cluster_preferences" in kwargs and kwargs["cluster_preferences"] is not None:
            kwargs["cluster_preferences"] = tuple(
                tuple(p) for p in kwargs["cluster_preferences"]
            )
        family = FamilyConfig(**kwargs)
        all_tasks = make_task_family(space, family, derive_seed(seed, "family"))
    else:
        entries = section["list"]
        if not isinstance(entries, list) or not entries:
            raise ConfigError("tasks.list must be a non-empty list")
        all_tasks = [_task_from_entry(e, i) for i, e in enumerate(entries)]
        names = [t.name for t in all_tasks]
        if len(set(names)) != len(names):
            raise ConfigError("tasks.list has duplicate task names")

    if "select" in section and section["select"] is not None:
        wanted = section["select"]
        if not isinstance(wanted, list) or not wanted:
            raise ConfigError("tasks.select must be a non-empty list of task names")
        by_name = {t.name: t for t in all_tasks}
        missing = [n for n in wanted if n not in by_name]
        if missing:
            raise ConfigError(f"tasks.select names unknown tasks: {missing}")
        return [by_name[n] for n in wanted]
    return all_tasks


def resolve_config(
    raw: dict, overrides: dict[str, Any] | None = None
) -> tuple[RunConfig, dict]:
    """Turn a parsed config mapping (plus overrides) into a RunConfig.

    Returns the RunConfig and the fully materialized config mapping that
    gets echoed to the run directory: the space expanded from any preset
    and the tasks expanded from any family, so a run can be reproduced
    from its echo alone.
    """
    space = build_space(_require_mapping(raw["space"], "space"))
    run = _resolve_run(raw["run"], overrides)
    controller = _resolve_controller(raw.get("controller"))
    tasks = _resolve_tasks(raw["tasks"], space, run["seed"])

    config = RunConfig(
        mode=run["mode"],
        space=space,
        tasks=tasks,
        budget=run["budget"],
        parallelism=run["parallelism"],
        seed=run["seed"],
        controller=ControllerConfig(
            embedding_size=controller["embedding_size"],
            hidden_size=controller["hidden_size"],
            init_range=controller["init_range"],
            learning_rate=controller["learning_rate"],
            entropy_weight=controller["entropy_weight"],
            optimizer=controller["optimizer"],
        ),
        baseline_decay=controller["baseline_decay"],
        from_checkpoint=run["from_checkpoint"],
        checkpoint_every=run["checkpoint_every"],
        status_interval=run["status_interval"],
        freeze_shared_on_transfer=run["freeze_shared_on_transfer"],
    )

    resolved = {
        "space": space.to_definition(),
        "tasks": {
            "list": [
                {
                    "name": t.name,
                    "cluster": t.cluster_id,
                    "preferred": list(t.preferred),
                    "weights": list(t.weights),
                    "base_reward": t.base_reward,
                    "val_noise_std": t.val_noise_std,
                    "test_noise_std": t.test_noise_std,
                    "val_size": t.val_size,
                    "interactions": [list(i) for i in t.interactions],
                }
                for t in tasks
            ]
        },
        "controller": controller,
        "run": run,
    }
    config.config_digest = config_digest(resolved)
    return config, resolved


def render_resolved(resolved: dict) -> str:
    return yaml.safe_dump(resolved, sort_keys=True, default_flow_style=False)


def config_digest(resolved: dict) -> str:
    return hashlib.sha256(render_resolved(resolved).encode("utf-8")).hexdigest()


def load_run_config(
    path: str | Path, overrides: dict[str, Any] | None = None
) -> tuple[RunConfig, dict]:
    """Parse, validate, and resolve a config file with CLI overrides."""
    return resolve_config(load_config_file(path), overrides)

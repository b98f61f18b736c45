"""Surrogate task family: a pluggable child-model evaluator at desk scale.

Each task scores a spec by how many of its preferred options the spec hits,
weighted per dimension, plus Gaussian evaluation noise. The validation-set
size analog shrinks validation noise as std/sqrt(size), which reproduces
the small-validation overfitting effect without training real children.

The evaluator contract is a single call (task, spec, rng) -> Evaluation, so
a real child trainer can be swapped in without touching the search loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .search_space import ModelSpec, SearchSpace


@dataclass(frozen=True)
class TaskDefinition:
    """One synthetic task: preferred option per dimension plus noise model.

    ``interactions`` holds optional pairwise bonuses (dim_a, dim_b, weight)
    credited only when both dimensions hit their preferred option; they make
    the landscape non-separable, which stresses search much harder than the
    additive part.
    """

    name: str
    cluster_id: int
    preferred: tuple[int, ...]
    weights: tuple[float, ...]
    base_reward: float
    val_noise_std: float = 0.0
    test_noise_std: float = 0.0
    val_size: int = 1
    interactions: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self) -> None:
        if len(self.preferred) != len(self.weights):
            raise ConfigError(
                f"task {self.name!r}: preferred and weights lengths differ"
            )
        if any(w < 0 for w in self.weights):
            raise ConfigError(f"task {self.name!r}: weights must be >= 0")
        if self.base_reward < 0:
            raise ConfigError(f"task {self.name!r}: base reward must be >= 0")
        n_dims = len(self.preferred)
        for a, b, w in self.interactions:
            if not (0 <= a < n_dims and 0 <= b < n_dims and a != b):
                raise ConfigError(
                    f"task {self.name!r}: invalid interaction pair ({a}, {b})"
                )
            if w < 0:
                raise ConfigError(f"task {self.name!r}: interaction weights >= 0")
        if self.optimum() > 1.0 + 1e-9:
            raise ConfigError(
                f"task {self.name!r}: base + weights exceed 1 "
                f"({self.optimum():.4f})"
            )
        if self.val_noise_std < 0 or self.test_noise_std < 0:
            raise ConfigError(f"task {self.name!r}: noise stds must be >= 0")
        if self.val_size < 1:
            raise ConfigError(f"task {self.name!r}: val_size must be >= 1")

    def noiseless_score(self, spec: ModelSpec) -> float:
        if len(spec) != len(self.preferred):
            raise ValueError(
                f"spec has {len(spec)} choices, task {self.name!r} expects "
                f"{len(self.preferred)}"
            )
        s = self.base_reward
        for w, p, a in zip(self.weights, self.preferred, spec):
            if a == p:
                s += w
        for a, b, w in self.interactions:
            if spec[a] == self.preferred[a] and spec[b] == self.preferred[b]:
                s += w
        return s

    def optimum(self) -> float:
        """Noiseless score of the all-preferences-matched spec."""
        return (
            self.base_reward
            + sum(self.weights)
            + sum(w for _, _, w in self.interactions)
        )

    def effective_val_std(self) -> float:
        return self.val_noise_std / math.sqrt(self.val_size)


@dataclass(frozen=True)
class Evaluation:
    """Result of one trial; rewards are clipped to [0, 1]."""

    validation_reward: float
    test_reward: float
    cost: float = 1.0


def evaluate(
    task: TaskDefinition, spec: ModelSpec, rng: np.random.Generator
) -> Evaluation:
    """Score a spec with independent validation and test noise draws.

    Pure given (task, spec, rng seed); safe to call from many workers.
    """
    s = task.noiseless_score(spec)
    # Both normals are always drawn so the rng stream does not depend on
    # the noise settings.
    eta_v = rng.normal(0.0, 1.0) * task.effective_val_std()
    eta_t = rng.normal(0.0, 1.0) * task.test_noise_std
    return Evaluation(
        validation_reward=float(np.clip(s + eta_v, 0.0, 1.0)),
        test_reward=float(np.clip(s + eta_t, 0.0, 1.0)),
        cost=1.0,
    )


@dataclass(frozen=True)
class FamilyConfig:
    """Recipe for a clustered task family.

    Dimension roles: ``shared_dims`` are preferred identically within a
    cluster and differently across clusters; ``global_dim`` is preferred
    identically by every task (the optional outlier flips it); every other
    dimension is task-specific.
    """

    n_clusters: int = 2
    tasks_per_cluster: int = 4
    shared_dims: tuple[int, ...] = (1, 2, 3)
    global_dim: int = 0
    holdout_per_cluster: int = 0
    outlier: bool = False
    base_reward: float = 0.3
    global_weight: float = 0.15
    shared_weight: float = 0.1
    specific_weight: float = 0.1
    val_noise_std: float = 0.0
    test_noise_std: float = 0.0
    val_size: int = 1
    cluster_preferences: tuple[tuple[int, ...], ...] | None = None
    # Pairwise bonuses between consecutive shared dimensions; zero pairs
    # keeps the landscape fully separable.
    interaction_pairs: int = 0
    interaction_weight: float = 0.0


def make_task_family(
    space: SearchSpace, config: FamilyConfig, seed: int
) -> list[TaskDefinition]:
    """Deterministically build the family's tasks from one seed.

    Order: the n_clusters * tasks_per_cluster main tasks (cluster-major),
    then any holdout tasks, then the optional outlier. Holdouts and the
    outlier share their cluster's preferences on shared dimensions but get
    their own task-specific preferences, so they are genuinely new tasks.
    """
    counts = space.option_counts
    n_dims = len(counts)
    cfg = config
    if cfg.n_clusters < 1 or cfg.tasks_per_cluster < 1:
        raise ConfigError("family needs at least one cluster and one task")
    if not 0 <= cfg.global_dim < n_dims:
        raise ConfigError(f"global_dim {cfg.global_dim} out of range")
    if len(set(cfg.shared_dims)) != len(cfg.shared_dims):
        raise ConfigError("shared_dims contains duplicates")
    for d in cfg.shared_dims:
        if not 0 <= d < n_dims:
            raise ConfigError(f"shared dimension {d} out of range")
        if d == cfg.global_dim:
            raise ConfigError(f"dimension {d} cannot be both shared and global")
        if counts[d] < cfg.n_clusters:
            raise ConfigError(
                f"shared dimension {d} has {counts[d]} options, needs >= "
                f"{cfg.n_clusters} to separate clusters"
            )
    if cfg.outlier and counts[cfg.global_dim] < 2:
        raise ConfigError("outlier flip needs >= 2 options on the global dimension")

    specific_dims = [
        d for d in range(n_dims) if d != cfg.global_dim and d not in cfg.shared_dims
    ]
    variants = cfg.tasks_per_cluster + cfg.holdout_per_cluster + (1 if cfg.outlier else 0)
    for d in specific_dims:
        if counts[d] < variants:
            raise ConfigError(
                f"task-specific dimension {d} has {counts[d]} options, needs >= "
                f"{variants} so same-cluster tasks differ"
            )

    weights = [0.0] * n_dims
    weights[cfg.global_dim] = cfg.global_weight
    for d in cfg.shared_dims:
        weights[d] = cfg.shared_weight
    for d in specific_dims:
        weights[d] = cfg.specific_weight

    if cfg.interaction_pairs < 0 or cfg.interaction_weight < 0:
        raise ConfigError("interaction settings must be >= 0")
    if 2 * cfg.interaction_pairs > len(cfg.shared_dims):
        raise ConfigError(
            f"{cfg.interaction_pairs} interaction pairs need "
            f">= {2 * cfg.interaction_pairs} shared dimensions"
        )
    interactions = tuple(
        (cfg.shared_dims[2 * k], cfg.shared_dims[2 * k + 1], cfg.interaction_weight)
        for k in range(cfg.interaction_pairs)
    )

    total = (
        cfg.base_reward + sum(weights) + cfg.interaction_pairs * cfg.interaction_weight
    )
    if total > 1.0 + 1e-9:
        raise ConfigError(
            f"base reward + weights + interactions exceed 1 ({total:.4f}); "
            "lower the family weights"
        )

    rng = np.random.default_rng(seed)
    global_pref = int(rng.integers(counts[cfg.global_dim]))

    if cfg.cluster_preferences is not None:
        if len(cfg.cluster_preferences) != cfg.n_clusters or any(
            len(prefs) != len(cfg.shared_dims) for prefs in cfg.cluster_preferences
        ):
            raise ConfigError(
                "cluster_preferences must give one option per shared dimension "
                "for every cluster"
            )
        cluster_prefs = [
            {d: int(p) for d, p in zip(cfg.shared_dims, prefs)}
            for prefs in cfg.cluster_preferences
        ]
        for k, prefs in enumerate(cluster_prefs):
            for d, p in prefs.items():
                if not 0 <= p < counts[d]:
                    raise ConfigError(
                        f"cluster {k}: preference {p} out of range on dimension {d}"
                    )
    else:
        # Rotate a random offset per shared dimension: clusters provably
        # disagree as long as the option count covers n_clusters.
        cluster_prefs = []
        offsets = {d: int(rng.integers(counts[d])) for d in cfg.shared_dims}
        for k in range(cfg.n_clusters):
            cluster_prefs.append(
                {d: (offsets[d] + k) % counts[d] for d in cfg.shared_dims}
            )

    specific_offsets = {
        (k, d): int(rng.integers(counts[d]))
        for k in range(cfg.n_clusters)
        for d in specific_dims
    }

    def build_task(name: str, cluster: int, variant: int) -> TaskDefinition:
        preferred = [0] * n_dims
        preferred[cfg.global_dim] = global_pref
        for d, p in cluster_prefs[cluster].items():
            preferred[d] = p
        for d in specific_dims:
            preferred[d] = (specific_offsets[(cluster, d)] + variant) % counts[d]
        return TaskDefinition(
            name=name,
            cluster_id=cluster,
            preferred=tuple(preferred),
            weights=tuple(weights),
            base_reward=cfg.base_reward,
            val_noise_std=cfg.val_noise_std,
            test_noise_std=cfg.test_noise_std,
            val_size=cfg.val_size,
            interactions=interactions,
        )

    tasks = [
        build_task(f"c{k}_t{j}", k, j)
        for k in range(cfg.n_clusters)
        for j in range(cfg.tasks_per_cluster)
    ]
    for k in range(cfg.n_clusters):
        for j in range(cfg.holdout_per_cluster):
            tasks.append(build_task(f"c{k}_h{j}", k, cfg.tasks_per_cluster + j))

    if cfg.outlier:
        variant = cfg.tasks_per_cluster + cfg.holdout_per_cluster
        outlier = build_task("outlier", 0, variant)
        flip = (
            global_pref + 1 + int(rng.integers(counts[cfg.global_dim] - 1))
        ) % counts[cfg.global_dim]
        preferred = list(outlier.preferred)
        preferred[cfg.global_dim] = flip
        tasks.append(replace(outlier, preferred=tuple(preferred)))

    return tasks

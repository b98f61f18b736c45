"""Search-run orchestration: random search, single-task and multitask
controller training, transfer, and the two ablation modes.

One coordinator owns the controller parameters, optimizer state, and
reward statistics. Up to ``parallelism`` evaluations run concurrently;
rollouts are sampled from the current parameters at dispatch and
completions are consumed in dispatch order, so updates are serial, runs
are bit-reproducible at any fixed worker count, and a trial's sampling
parameter version never lags its completion version by more than the
worker count.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import policy
from .errors import ConfigError
from .metrics import TrialLog, TrialRecord
from .policy import ControllerConfig, ControllerParams, OptState
from .reward_stats import RewardStats
from .search_space import ModelSpec, SearchSpace
from .seeding import derive_seed
from .tasks import Evaluation, TaskDefinition, evaluate

MODES = (
    "random",
    "single_task",
    "multitask",
    "transfer",
    "ablate_no_task_embedding",
    "ablate_fixed_architecture",
)

# Modes that end the run holding controller parameters.
CONTROLLER_MODES = tuple(m for m in MODES if m != "random")

FINAL_CHECKPOINT_NAME = "checkpoint_final.ckpt"

Evaluator = Callable[[TaskDefinition, ModelSpec, np.random.Generator], Evaluation]


@dataclass
class RunConfig:
    """Everything one search run needs; see ``validate_run_config``."""

    mode: str
    space: SearchSpace
    tasks: list[TaskDefinition]
    budget: int
    parallelism: int = 1
    seed: int = 0
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    baseline_decay: float = 0.01
    from_checkpoint: str | Path | None = None
    checkpoint_every: int = 0
    out_dir: str | Path | None = None
    status_interval: int = 0
    freeze_shared_on_transfer: bool = False
    evaluator: Evaluator = evaluate
    config_digest: str = ""


@dataclass
class RunResult:
    log: TrialLog
    params: ControllerParams | None
    opt_state: OptState | None
    task_names: dict[int, str] = field(default_factory=dict)
    checkpoint_path: Path | None = None


def validate_run_config(config: RunConfig) -> None:
    if config.mode not in MODES:
        raise ConfigError(f"unknown mode {config.mode!r}; expected one of {MODES}")
    if config.budget < 1:
        raise ConfigError(f"budget must be >= 1, got {config.budget}")
    if config.parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {config.parallelism}")
    if not 0.0 < config.baseline_decay <= 1.0:
        raise ConfigError("baseline_decay must be in (0, 1]")
    n = len(config.tasks)
    needs_checkpoint = config.mode in ("transfer", "ablate_fixed_architecture") or (
        config.mode == "ablate_no_task_embedding" and config.from_checkpoint
    )
    if config.mode in ("random", "single_task", "transfer", "ablate_fixed_architecture"):
        if n != 1:
            raise ConfigError(f"mode {config.mode!r} needs exactly one task, got {n}")
    elif config.mode == "multitask":
        if n < 2:
            raise ConfigError(f"multitask needs at least two tasks, got {n}")
    elif config.mode == "ablate_no_task_embedding" and not config.from_checkpoint:
        if n < 2:
            raise ConfigError(
                "ablate_no_task_embedding pretraining needs at least two tasks; "
                "give from_checkpoint to transfer instead"
            )
    if needs_checkpoint and not config.from_checkpoint:
        raise ConfigError(f"mode {config.mode!r} requires from_checkpoint")
    n_dims = config.space.num_dimensions
    for task in config.tasks:
        if len(task.preferred) != n_dims:
            raise ConfigError(
                f"task {task.name!r} has {len(task.preferred)} preferences, "
                f"space has {n_dims} dimensions"
            )
        for d, p in enumerate(task.preferred):
            if not 0 <= p < config.space.option_counts[d]:
                raise ConfigError(
                    f"task {task.name!r}: preference {p} out of range on dimension {d}"
                )


def _metadata(config: RunConfig) -> dict:
    return {
        "mode": config.mode,
        "seed": config.seed,
        "space_hash": config.space.content_hash_hex(),
        "config_digest": config.config_digest,
        "budget": config.budget,
        "parallelism": config.parallelism,
    }


def _print_status(
    index: int, name: str, ev: Evaluation | None, stats: RewardStats, task_id: int,
    adv: float | None,
) -> None:
    if ev is None:
        print(f"trial {index:6d}  task {name:<14s}  FAILED")
        return
    st = stats.task(task_id)
    adv_text = f"{adv:+.4f}" if adv is not None else "   n/a"
    print(
        f"trial {index:6d}  task {name:<14s}  val {ev.validation_reward:.4f}  "
        f"b {st.baseline:.4f}  sigma {np.sqrt(st.sigma_sq):.4f}  adv {adv_text}"
    )


@dataclass
class _Pending:
    index: int
    task_id: int
    spec: ModelSpec
    version: int
    future: Future | None
    eval_rng: np.random.Generator
    trace: object | None = None


def _search_loop(
    config: RunConfig,
    params: ControllerParams | None,
    opt_state: OptState | None,
    task_map: dict[int, TaskDefinition],
    *,
    zero_task_input: bool = False,
    fixed_spec: ModelSpec | None = None,
) -> TrialLog:
    """Dispatch/collect pipeline shared by every mode.

    ``params is None`` means uniform random sampling and no updates;
    ``fixed_spec`` re-evaluates one spec without updates.
    """
    learn = params is not None and fixed_spec is None
    active = sorted(task_map)
    log = TrialLog(metadata=_metadata(config))
    stats = RewardStats(alpha=config.baseline_decay)
    pool = (
        ThreadPoolExecutor(max_workers=config.parallelism)
        if config.parallelism > 1
        else None
    )
    pending: deque[_Pending] = deque()
    dispatched = 0
    completed = 0
    vtime = 0.0
    out_dir = Path(config.out_dir) if config.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def pick_task(i: int) -> int:
        if len(active) == 1:
            return active[0]
        rng = np.random.default_rng(derive_seed(config.seed, "task", i))
        return active[int(rng.integers(len(active)))]

    def dispatch() -> None:
        nonlocal dispatched
        i = dispatched
        task_id = pick_task(i)
        task = task_map[task_id]
        trace = None
        if fixed_spec is not None:
            spec, version = fixed_spec, params.version
        elif params is None:
            rng = np.random.default_rng(derive_seed(config.seed, "rollout", i))
            spec, version = config.space.sample_uniform(rng), 0
        else:
            rng = np.random.default_rng(derive_seed(config.seed, "rollout", i))
            rollout, trace = policy.sample_rollout_with_trace(
                params, task_id, rng, zero_task_input=zero_task_input
            )
            spec, version = rollout.spec, rollout.parameter_version
        eval_rng = np.random.default_rng(
            derive_seed(config.seed, "eval", task.name, i)
        )
        future = (
            pool.submit(config.evaluator, task, spec, eval_rng) if pool else None
        )
        pending.append(_Pending(i, task_id, spec, version, future, eval_rng, trace))
        dispatched += 1

    try:
        while completed < config.budget:
            while dispatched < config.budget and len(pending) < config.parallelism:
                dispatch()
            item = pending.popleft()
            task = task_map[item.task_id]
            try:
                if item.future is not None:
                    ev = item.future.result()
                else:
                    ev = config.evaluator(task, item.spec, item.eval_rng)
            except Exception:
                ev = None

            adv = None
            if ev is not None:
                stats.update(item.task_id, ev.validation_reward)
                if learn:
                    adv = stats.normalized_advantage(
                        item.task_id, ev.validation_reward
                    )
                    if item.trace is not None and item.version == params.version:
                        grads = policy.gradient_from_trace(
                            params,
                            item.trace,
                            coefficient=adv,
                            entropy_weight=config.controller.entropy_weight,
                        )
                    else:
                        # Stale rollout (parallel pipeline): rescore the spec
                        # against the current parameters.
                        grads = policy.policy_gradient(
                            params,
                            item.task_id,
                            item.spec,
                            coefficient=adv,
                            entropy_weight=config.controller.entropy_weight,
                            zero_task_input=zero_task_input,
                        )
                    if config.freeze_shared_on_transfer:
                        for key, g in grads.items():
                            if key != "task_embedding":
                                g[:] = 0.0
                    policy.apply_update(
                        params, grads, opt_state, config.controller.learning_rate
                    )
                vtime += ev.cost

            log.append(
                TrialRecord(
                    index=completed,
                    task_id=item.task_id,
                    task_name=task.name,
                    spec=item.spec,
                    val_reward=None if ev is None else ev.validation_reward,
                    test_reward=None if ev is None else ev.test_reward,
                    version=item.version,
                    cost=0.0 if ev is None else ev.cost,
                    time=vtime,
                    ok=ev is not None,
                )
            )
            completed += 1
            if config.status_interval and completed % config.status_interval == 0:
                _print_status(completed - 1, task.name, ev, stats, item.task_id, adv)
            if (
                learn
                and out_dir is not None
                and config.checkpoint_every > 0
                and completed % config.checkpoint_every == 0
                and completed < config.budget
            ):
                policy.checkpoint_save(
                    params,
                    opt_state,
                    config.space.content_hash(),
                    out_dir / f"checkpoint_{completed:06d}.ckpt",
                )
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)

    return log


def _finish(
    config: RunConfig,
    log: TrialLog,
    params: ControllerParams | None,
    opt_state: OptState | None,
    task_names: dict[int, str],
) -> RunResult:
    checkpoint_path = None
    if params is not None and config.out_dir is not None:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / FINAL_CHECKPOINT_NAME
        policy.checkpoint_save(
            params, opt_state, config.space.content_hash(), checkpoint_path
        )
    return RunResult(
        log=log,
        params=params,
        opt_state=opt_state,
        task_names=task_names,
        checkpoint_path=checkpoint_path,
    )


def run_random_search(config: RunConfig) -> RunResult:
    """Uniform sampling baseline; no controller state."""
    validate_run_config(config)
    log = _search_loop(config, None, None, {0: config.tasks[0]})
    return RunResult(log=log, params=None, opt_state=None, task_names={0: config.tasks[0].name})


def _fresh_controller(
    config: RunConfig, n_tasks: int
) -> tuple[ControllerParams, OptState]:
    rng = np.random.default_rng(derive_seed(config.seed, "init"))
    params = policy.init_params(config.space, n_tasks, config.controller, rng)
    return params, policy.init_opt_state(params, config.controller.optimizer)


def run_single_task(config: RunConfig) -> RunResult:
    """Train a one-task controller from scratch, updating after every trial."""
    validate_run_config(config)
    params, opt_state = _fresh_controller(config, 1)
    task_map = {0: config.tasks[0]}
    log = _search_loop(config, params, opt_state, task_map)
    return _finish(config, log, params, opt_state, {0: config.tasks[0].name})


def run_multitask(config: RunConfig) -> RunResult:
    """Train one controller across all tasks, one embedding row per task."""
    validate_run_config(config)
    params, opt_state = _fresh_controller(config, len(config.tasks))
    task_map = dict(enumerate(config.tasks))
    log = _search_loop(config, params, opt_state, task_map)
    return _finish(
        config, log, params, opt_state, {i: t.name for i, t in task_map.items()}
    )


def _load_and_extend(
    config: RunConfig,
) -> tuple[ControllerParams, OptState, int]:
    params, opt_state = policy.checkpoint_load(config.from_checkpoint, config.space)
    rng = np.random.default_rng(derive_seed(config.seed, "task_embedding"))
    params, new_id = policy.add_task_embedding(params, rng)
    opt_state = policy.grow_opt_state(opt_state, params)
    if config.freeze_shared_on_transfer and opt_state.kind == "adam":
        # Frozen tensors get zero gradients; clearing the loaded momentum
        # keeps them bit-identical instead of coasting on stale moments.
        opt_state.m_flat[:] = 0.0
        opt_state.v_flat[:] = 0.0
    return params, opt_state, new_id


def run_transfer(config: RunConfig) -> RunResult:
    """Reload a pretrained controller, add a fresh task embedding, resume."""
    validate_run_config(config)
    params, opt_state, new_id = _load_and_extend(config)
    task_map = {new_id: config.tasks[0]}
    log = _search_loop(config, params, opt_state, task_map)
    return _finish(config, log, params, opt_state, {new_id: config.tasks[0].name})


def run_ablation_no_task_embedding(config: RunConfig) -> RunResult:
    """Multitask pretraining or transfer with the task input zeroed out."""
    validate_run_config(config)
    if config.from_checkpoint:
        params, opt_state, new_id = _load_and_extend(config)
        task_map = {new_id: config.tasks[0]}
    else:
        params, opt_state = _fresh_controller(config, len(config.tasks))
        task_map = dict(enumerate(config.tasks))
    log = _search_loop(config, params, opt_state, task_map, zero_task_input=True)
    names = {i: t.name for i, t in task_map.items()}
    return _finish(config, log, params, opt_state, names)


def run_fixed_architecture_transfer(config: RunConfig) -> RunResult:
    """Re-evaluate the loaded controller's modal spec; no training."""
    validate_run_config(config)
    params, opt_state = policy.checkpoint_load(config.from_checkpoint, config.space)
    modal = policy.greedy_spec(params, task_id=None)
    task_map = {0: config.tasks[0]}
    log = _search_loop(config, params, opt_state, task_map, fixed_spec=modal)
    return _finish(config, log, params, opt_state, {0: config.tasks[0].name})


_RUNNERS = {
    "random": run_random_search,
    "single_task": run_single_task,
    "multitask": run_multitask,
    "transfer": run_transfer,
    "ablate_no_task_embedding": run_ablation_no_task_embedding,
    "ablate_fixed_architecture": run_fixed_architecture_transfer,
}


def run(config: RunConfig) -> RunResult:
    """Dispatch to the configured mode's runner."""
    if config.mode not in _RUNNERS:
        raise ConfigError(f"unknown mode {config.mode!r}")
    return _RUNNERS[config.mode](config)

"""Autoregressive recurrent policy over a discrete search space.

The controller samples one design choice per step. At step d the input is
the task embedding concatenated with the embedding of the previous action
(a start-of-sequence vector at step 0). The input runs through two stacked
LSTM layers; a linear skip projection of the input is added to the top
layer's output before the per-dimension logits head.

All parameters live in one flat float64 buffer with named views, so
optimizer steps are single vector operations and checkpoints are exact.
Gradients are exact reverse-mode derivatives through the unrolled
sequence, which keeps finite-difference and enumeration oracles tight.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import CheckpointError, NumericError
from .search_space import ModelSpec, SearchSpace

CHECKPOINT_MAGIC = b"TAMLCKPT"
CHECKPOINT_FORMAT_VERSION = 1

# Adam constants (standard defaults).
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ControllerConfig:
    """Controller hyperparameters; defaults match the shipped presets."""

    embedding_size: int = 25
    hidden_size: int = 50
    init_range: float = 0.05
    learning_rate: float = 1e-4
    entropy_weight: float = 0.01
    optimizer: str = "adam"  # or "sgd"

    def __post_init__(self) -> None:
        if self.embedding_size < 1 or self.hidden_size < 1:
            raise ValueError("embedding_size and hidden_size must be >= 1")
        if self.init_range <= 0:
            raise ValueError("init_range must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@lru_cache(maxsize=64)
def _layout(
    option_counts: tuple[int, ...], n_tasks: int, emb: int, hidden: int
) -> tuple[tuple[tuple[str, tuple[int, ...], int, int], ...], int]:
    """Declared tensor order with flat offsets; initialization follows it."""
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("task_embedding", (n_tasks, emb)),
        ("sos_embedding", (emb,)),
    ]
    for d, count in enumerate(option_counts):
        shapes.append((f"action_embedding_{d}", (count, emb)))
    in_dim = 2 * emb
    for layer, x_dim in enumerate((in_dim, hidden)):
        shapes.append((f"lstm{layer}_wx", (x_dim, 4 * hidden)))
        shapes.append((f"lstm{layer}_wh", (hidden, 4 * hidden)))
        shapes.append((f"lstm{layer}_b", (4 * hidden,)))
    shapes.append(("skip_proj", (in_dim, hidden)))
    for d, count in enumerate(option_counts):
        shapes.append((f"head_w_{d}", (hidden, count)))
        shapes.append((f"head_b_{d}", (count,)))
    entries = []
    offset = 0
    for name, shape in shapes:
        size = 1
        for s in shape:
            size *= s
        entries.append((name, shape, offset, size))
        offset += size
    return tuple(entries), offset


def _tensor_shapes(
    option_counts: tuple[int, ...], n_tasks: int, emb: int, hidden: int
) -> list[tuple[str, tuple[int, ...]]]:
    entries, _ = _layout(option_counts, n_tasks, emb, hidden)
    return [(name, shape) for name, shape, _, _ in entries]


def _build_views(
    flat: np.ndarray, shapes: list[tuple[str, tuple[int, ...]]]
) -> dict[str, np.ndarray]:
    views: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        size = 1
        for s in shape:
            size *= s
        views[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise ValueError("flat buffer does not match the declared layout")
    return views


@dataclass
class ControllerParams:
    """All trainable tensors plus the metadata needed to interpret them.

    ``tensors`` maps names to views into ``flat``; see ``_tensor_shapes``
    for the layout. ``version`` counts applied updates and tags every
    rollout.
    """

    option_counts: tuple[int, ...]
    n_tasks: int
    embedding_size: int
    hidden_size: int
    init_range: float
    version: int
    flat: np.ndarray
    tensors: dict[str, np.ndarray]

    @property
    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return _tensor_shapes(
            self.option_counts, self.n_tasks, self.embedding_size, self.hidden_size
        )

    def copy(self) -> "ControllerParams":
        flat = self.flat.copy()
        return ControllerParams(
            option_counts=self.option_counts,
            n_tasks=self.n_tasks,
            embedding_size=self.embedding_size,
            hidden_size=self.hidden_size,
            init_range=self.init_range,
            version=self.version,
            flat=flat,
            tensors=_build_views(flat, self.shapes),
        )


@dataclass(frozen=True)
class PolicyRollout:
    """One sampled spec with its log-probabilities and entropy."""

    task_id: int
    spec: ModelSpec
    per_step_log_probs: tuple[float, ...]
    total_log_prob: float
    total_entropy: float
    parameter_version: int


# Gradients are shape-matched arrays keyed like ControllerParams.tensors.
GradientSet = dict[str, np.ndarray]


@dataclass
class OptState:
    """Optimizer state owned by the trainer alongside the params."""

    kind: str
    step: int = 0
    m_flat: np.ndarray | None = None
    v_flat: np.ndarray | None = None
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # Scratch buffers so updates allocate nothing; never serialized.
    _scratch: list[np.ndarray] | None = field(default=None, repr=False)

    def scratch(self, size: int) -> list[np.ndarray]:
        if self._scratch is None or self._scratch[0].size != size:
            self._scratch = [np.empty(size) for _ in range(4)]
        return self._scratch


def _make_params(
    option_counts: tuple[int, ...],
    n_tasks: int,
    emb: int,
    hidden: int,
    init_range: float,
    version: int,
    flat: np.ndarray,
) -> ControllerParams:
    shapes = _tensor_shapes(option_counts, n_tasks, emb, hidden)
    return ControllerParams(
        option_counts=option_counts,
        n_tasks=n_tasks,
        embedding_size=emb,
        hidden_size=hidden,
        init_range=init_range,
        version=version,
        flat=flat,
        tensors=_build_views(flat, shapes),
    )


def init_params(
    space: SearchSpace,
    n_tasks: int,
    config: ControllerConfig,
    rng: np.random.Generator,
) -> ControllerParams:
    """Draw every parameter i.i.d. uniform on [-init_range, init_range].

    Near-zero logits give an approximately uniform initial distribution
    over actions in every dimension.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    counts = space.option_counts
    shapes = _tensor_shapes(counts, n_tasks, config.embedding_size, config.hidden_size)
    _, total = _layout(counts, n_tasks, config.embedding_size, config.hidden_size)
    flat = np.empty(total)
    params = _make_params(
        counts,
        n_tasks,
        config.embedding_size,
        config.hidden_size,
        config.init_range,
        0,
        flat,
    )
    # One draw per tensor, in declared order, so seeds reproduce exactly.
    for name, shape in shapes:
        params.tensors[name][...] = rng.uniform(
            -config.init_range, config.init_range, size=shape
        )
    return params


def _check_task(params: ControllerParams, task_id: int) -> int:
    task_id = int(task_id)
    if not 0 <= task_id < params.n_tasks:
        raise ValueError(f"unknown task id {task_id} (n_tasks={params.n_tasks})")
    return task_id


def _check_spec(params: ControllerParams, spec: ModelSpec) -> tuple[int, ...]:
    spec = tuple(int(a) for a in spec)
    if len(spec) != len(params.option_counts):
        raise ValueError(
            f"spec has {len(spec)} choices, space has {len(params.option_counts)}"
        )
    for d, (a, count) in enumerate(zip(spec, params.option_counts)):
        if not 0 <= a < count:
            raise ValueError(f"choice {a} out of range for dimension {d}")
    return spec


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Clipping at |z| = 40 is exact at double precision.
    return 1.0 / (1.0 + np.exp(-np.clip(z, -40.0, 40.0)))


class _Trace:
    """Forward-pass cache for one unrolled sequence (needed by backward)."""

    __slots__ = (
        "task_id",
        "zero_task_input",
        "version",
        "actions",
        "xs",
        "gates",
        "cells",
        "hiddens",
        "outs",
        "probs",
        "log_probs",
        "entropies",
        "step_log_probs",
    )

    def __init__(self, n_steps: int, hidden: int) -> None:
        self.xs: list[np.ndarray] = []
        # gates[layer][d] = (i, f, g, o); cells/hiddens[layer] shape (D, H).
        self.gates: list[list[tuple[np.ndarray, ...]]] = [[], []]
        self.cells = [np.zeros((n_steps, hidden)), np.zeros((n_steps, hidden))]
        self.hiddens = [np.zeros((n_steps, hidden)), np.zeros((n_steps, hidden))]
        self.outs = np.zeros((n_steps, hidden))
        self.probs: list[np.ndarray] = []
        self.log_probs: list[np.ndarray] = []
        self.entropies: list[float] = []
        self.step_log_probs: list[float] = []
        self.actions: list[int] = []


def _forward(
    params: ControllerParams,
    task_id: int | None,
    *,
    actions: tuple[int, ...] | None = None,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
    zero_task_input: bool = False,
) -> _Trace:
    """Run the unrolled sequence, sampling or teacher-forcing actions.

    Exactly one of ``actions`` (teacher forcing), ``rng`` (sampling), or
    ``greedy`` selects each step's action. ``task_id is None`` forces the
    zero task input regardless of ``zero_task_input``.
    """
    t = params.tensors
    hidden = params.hidden_size
    emb = params.embedding_size
    n_steps = len(params.option_counts)

    if task_id is None:
        zero_task_input = True
        task_vec = np.zeros(emb)
    else:
        task_vec = np.zeros(emb) if zero_task_input else t["task_embedding"][task_id]

    trace = _Trace(n_steps, hidden)
    trace.task_id = -1 if task_id is None else task_id
    trace.zero_task_input = zero_task_input
    trace.version = params.version

    h = [np.zeros(hidden), np.zeros(hidden)]
    c = [np.zeros(hidden), np.zeros(hidden)]
    skip = t["skip_proj"]

    for d in range(n_steps):
        prev = (
            t["sos_embedding"]
            if d == 0
            else t[f"action_embedding_{d - 1}"][trace.actions[d - 1]]
        )
        x = np.concatenate((task_vec, prev))
        trace.xs.append(x)

        layer_in = x
        for layer in range(2):
            pre = (
                layer_in @ t[f"lstm{layer}_wx"]
                + h[layer] @ t[f"lstm{layer}_wh"]
                + t[f"lstm{layer}_b"]
            )
            # Gate packing is (input, forget, output, candidate) so the three
            # sigmoids happen in one call.
            sig = _sigmoid(pre[: 3 * hidden])
            gi = sig[:hidden]
            gf = sig[hidden : 2 * hidden]
            go = sig[2 * hidden :]
            gg = np.tanh(pre[3 * hidden :])
            c[layer] = gf * c[layer] + gi * gg
            h[layer] = go * np.tanh(c[layer])
            trace.gates[layer].append((gi, gf, gg, go))
            trace.cells[layer][d] = c[layer]
            trace.hiddens[layer][d] = h[layer]
            layer_in = h[layer]

        out = h[1] + x @ skip
        trace.outs[d] = out
        logits = out @ t[f"head_w_{d}"] + t[f"head_b_{d}"]
        zmax = logits.max()
        log_p = logits - (zmax + math.log(np.exp(logits - zmax).sum()))
        p = np.exp(log_p)

        if actions is not None:
            a = actions[d]
        elif greedy:
            a = int(np.argmax(p))
        else:
            assert rng is not None, "sampling requires an rng"
            u = rng.random()
            a = min(int(np.searchsorted(np.cumsum(p), u, side="right")), len(p) - 1)

        trace.probs.append(p)
        trace.log_probs.append(log_p)
        trace.entropies.append(float(-(p * log_p).sum()))
        trace.step_log_probs.append(float(log_p[a]))
        trace.actions.append(int(a))

    return trace


def _rollout_from_trace(trace: _Trace) -> PolicyRollout:
    return PolicyRollout(
        task_id=trace.task_id,
        spec=tuple(trace.actions),
        per_step_log_probs=tuple(trace.step_log_probs),
        total_log_prob=float(sum(trace.step_log_probs)),
        total_entropy=float(sum(trace.entropies)),
        parameter_version=trace.version,
    )


def sample_rollout(
    params: ControllerParams,
    task_id: int,
    rng: np.random.Generator,
    *,
    zero_task_input: bool = False,
) -> PolicyRollout:
    """Sample one spec autoregressively, conditioned on the task embedding."""
    task_id = _check_task(params, task_id)
    trace = _forward(params, task_id, rng=rng, zero_task_input=zero_task_input)
    return _rollout_from_trace(trace)


def sample_rollout_with_trace(
    params: ControllerParams,
    task_id: int,
    rng: np.random.Generator,
    *,
    zero_task_input: bool = False,
) -> tuple[PolicyRollout, _Trace]:
    """Like ``sample_rollout`` but keeps the forward cache so the trainer
    can backpropagate without repeating the forward pass."""
    task_id = _check_task(params, task_id)
    trace = _forward(params, task_id, rng=rng, zero_task_input=zero_task_input)
    return _rollout_from_trace(trace), trace


def log_prob(
    params: ControllerParams,
    task_id: int,
    spec: ModelSpec,
    *,
    zero_task_input: bool = False,
) -> tuple[float, tuple[float, ...], float]:
    """Teacher-forced score of ``spec``: same network dynamics as sampling."""
    task_id = _check_task(params, task_id)
    spec = _check_spec(params, spec)
    trace = _forward(params, task_id, actions=spec, zero_task_input=zero_task_input)
    return (
        float(sum(trace.step_log_probs)),
        tuple(trace.step_log_probs),
        float(sum(trace.entropies)),
    )


def step_probs(
    params: ControllerParams,
    task_id: int,
    spec: ModelSpec,
    *,
    zero_task_input: bool = False,
) -> list[np.ndarray]:
    """Per-step action distributions along the teacher-forced trajectory."""
    task_id = _check_task(params, task_id)
    spec = _check_spec(params, spec)
    trace = _forward(params, task_id, actions=spec, zero_task_input=zero_task_input)
    return trace.probs


def greedy_spec(params: ControllerParams, task_id: int | None = None) -> ModelSpec:
    """Argmax decode. ``task_id=None`` decodes with the zero task input."""
    if task_id is not None:
        task_id = _check_task(params, task_id)
    trace = _forward(params, task_id, greedy=True)
    return tuple(trace.actions)


def zero_gradients(params: ControllerParams) -> GradientSet:
    flat = np.zeros_like(params.flat)
    entries, _ = _layout(
        params.option_counts, params.n_tasks, params.embedding_size, params.hidden_size
    )
    return {
        name: flat[offset : offset + size].reshape(shape)
        for name, shape, offset, size in entries
    }


def _backward(
    params: ControllerParams,
    trace: _Trace,
    coefficient: float,
    entropy_weight: float,
) -> GradientSet:
    """Reverse-mode pass over a cached forward trace.

    The time recursion only flows through the hidden/cell carries, so the
    per-step gate deltas are collected and the weight gradients land in a
    handful of batched matmuls at the end.
    """
    grads = zero_gradients(params)
    t = params.tensors
    hidden = params.hidden_size
    emb = params.embedding_size
    n_steps = len(params.option_counts)
    actions = trace.actions

    dh_carry = [np.zeros(hidden), np.zeros(hidden)]
    dc_carry = [np.zeros(hidden), np.zeros(hidden)]
    das = [np.empty((n_steps, 4 * hidden)), np.empty((n_steps, 4 * hidden))]
    douts = np.empty((n_steps, hidden))

    for d in range(n_steps - 1, -1, -1):
        p = trace.probs[d]
        log_p = trace.log_probs[d]
        a = actions[d]

        # d(objective)/d(logits): log-prob term plus entropy term.
        dlogits = -coefficient * p
        dlogits[a] += coefficient
        if entropy_weight != 0.0:
            dlogits -= entropy_weight * p * (log_p + trace.entropies[d])

        grads[f"head_w_{d}"][...] = trace.outs[d][:, None] * dlogits
        grads[f"head_b_{d}"][...] = dlogits
        dout = t[f"head_w_{d}"] @ dlogits
        douts[d] = dout

        dh = dout + dh_carry[1]
        for layer in (1, 0):
            gi, gf, gg, go = trace.gates[layer][d]
            c_prev = trace.cells[layer][d - 1] if d > 0 else 0.0
            tanh_c = np.tanh(trace.cells[layer][d])

            d_go = dh * tanh_c
            dc = dc_carry[layer] + dh * go * (1.0 - tanh_c * tanh_c)
            dc_carry[layer] = dc * gf

            da = das[layer][d]
            da[:hidden] = dc * gg * gi * (1.0 - gi)
            da[hidden : 2 * hidden] = dc * c_prev * gf * (1.0 - gf)
            da[2 * hidden : 3 * hidden] = d_go * go * (1.0 - go)
            da[3 * hidden :] = dc * gi * (1.0 - gg * gg)

            dh_carry[layer] = t[f"lstm{layer}_wh"] @ da
            if layer == 1:
                dh = t["lstm1_wx"] @ da + dh_carry[0]

    # Batched weight gradients over the whole sequence.
    xs = np.asarray(trace.xs)
    h_prev = [np.vstack((np.zeros(hidden), trace.hiddens[k][:-1])) for k in (0, 1)]
    grads["skip_proj"][...] = xs.T @ douts
    grads["lstm0_wx"][...] = xs.T @ das[0]
    grads["lstm0_wh"][...] = h_prev[0].T @ das[0]
    grads["lstm0_b"][...] = das[0].sum(axis=0)
    grads["lstm1_wx"][...] = trace.hiddens[0].T @ das[1]
    grads["lstm1_wh"][...] = h_prev[1].T @ das[1]
    grads["lstm1_b"][...] = das[1].sum(axis=0)

    # Input gradients route to the task embedding and action embeddings.
    dxs = douts @ t["skip_proj"].T + das[0] @ t["lstm0_wx"].T
    if not trace.zero_task_input:
        grads["task_embedding"][trace.task_id] = dxs[:, :emb].sum(axis=0)
    grads["sos_embedding"][...] = dxs[0, emb:]
    for d in range(1, n_steps):
        grads[f"action_embedding_{d - 1}"][actions[d - 1]] += dxs[d, emb:]

    return grads


def policy_gradient(
    params: ControllerParams,
    task_id: int,
    spec: ModelSpec,
    coefficient: float,
    entropy_weight: float,
    *,
    zero_task_input: bool = False,
) -> GradientSet:
    """Exact gradient of the per-trial objective.

    Objective: ``coefficient * log pi(spec | task)`` plus ``entropy_weight``
    times the sum of per-step action-distribution entropies along the given
    trajectory. Backpropagates through the whole unrolled sequence; task
    embeddings of other tasks receive exactly zero.
    """
    task_id = _check_task(params, task_id)
    spec = _check_spec(params, spec)
    if not math.isfinite(coefficient):
        raise ValueError(f"coefficient must be finite, got {coefficient}")
    if not math.isfinite(entropy_weight):
        raise ValueError(f"entropy_weight must be finite, got {entropy_weight}")
    if coefficient == 0.0 and entropy_weight == 0.0:
        return zero_gradients(params)
    trace = _forward(params, task_id, actions=spec, zero_task_input=zero_task_input)
    return _backward(params, trace, coefficient, entropy_weight)


def gradient_from_trace(
    params: ControllerParams,
    trace: _Trace,
    coefficient: float,
    entropy_weight: float,
) -> GradientSet:
    """Backward pass reusing a forward trace taken at the same version."""
    if trace.version != params.version:
        raise ValueError(
            f"trace was recorded at version {trace.version}, params are at "
            f"{params.version}"
        )
    if not math.isfinite(coefficient):
        raise ValueError(f"coefficient must be finite, got {coefficient}")
    if coefficient == 0.0 and entropy_weight == 0.0:
        return zero_gradients(params)
    return _backward(params, trace, coefficient, entropy_weight)


def init_opt_state(params: ControllerParams, kind: str) -> OptState:
    if kind not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {kind!r}")
    if kind == "sgd":
        return OptState(kind="sgd")
    m_flat = np.zeros_like(params.flat)
    v_flat = np.zeros_like(params.flat)
    return OptState(
        kind="adam",
        step=0,
        m_flat=m_flat,
        v_flat=v_flat,
        m=_build_views(m_flat, params.shapes),
        v=_build_views(v_flat, params.shapes),
    )


def grow_opt_state(opt_state: OptState, params: ControllerParams) -> OptState:
    """Align moment tensors after the task-embedding table gained rows."""
    if opt_state.kind == "sgd":
        return opt_state
    grown = init_opt_state(params, "adam")
    grown.step = opt_state.step
    for store_old, store_new in ((opt_state.m, grown.m), (opt_state.v, grown.v)):
        for key, arr in store_new.items():
            old = store_old.get(key)
            if old is None:
                continue
            if old.shape == arr.shape:
                arr[...] = old
            elif old.ndim == arr.ndim and old.shape[1:] == arr.shape[1:]:
                arr[: old.shape[0]] = old
            else:
                raise ValueError(f"optimizer state for {key} cannot be aligned")
    return grown


def _flat_gradient(params: ControllerParams, grads: GradientSet) -> np.ndarray:
    # Fast path: views from zero_gradients share one canonical backing buffer.
    if len(grads) == len(params.tensors):
        base = next(iter(grads.values())).base
        if (
            isinstance(base, np.ndarray)
            and base.size == params.flat.size
            and all(g.base is base for g in grads.values())
        ):
            return base
    shapes = params.shapes
    if set(grads) != {name for name, _ in shapes}:
        missing = set(g for g, _ in shapes) ^ set(grads)
        raise ValueError(f"gradient set does not match parameters: {sorted(missing)}")
    parts = []
    for name, shape in shapes:
        g = np.asarray(grads[name])
        if g.shape != shape:
            raise ValueError(f"shape mismatch for {name}: grad {g.shape} vs {shape}")
        parts.append(g.ravel())
    return np.concatenate(parts)


def apply_update(
    params: ControllerParams,
    grads: GradientSet,
    opt_state: OptState,
    learning_rate: float,
) -> None:
    """One gradient-ascent step; mutates params and opt_state atomically.

    New values are staged and checked for finiteness before anything is
    committed, so a rejected update leaves both untouched.
    """
    g = _flat_gradient(params, grads)
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient; update rejected")

    if opt_state.kind == "sgd":
        # Overflow here is caught by the finiteness check, not a warning.
        with np.errstate(over="ignore", invalid="ignore"):
            new_flat = params.flat + learning_rate * g
        if not np.isfinite(new_flat).all():
            raise NumericError("update would make parameters non-finite; rejected")
        params.flat[:] = new_flat
        params.version += 1
        return

    # Adam ascent, staged in scratch buffers and committed atomically.
    new_m, new_v, tmp, new_flat = opt_state.scratch(params.flat.size)
    step = opt_state.step + 1
    np.multiply(opt_state.m_flat, ADAM_BETA1, out=new_m)
    np.multiply(g, 1.0 - ADAM_BETA1, out=tmp)
    new_m += tmp
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - ADAM_BETA2
    np.multiply(opt_state.v_flat, ADAM_BETA2, out=new_v)
    new_v += tmp
    np.multiply(new_v, 1.0 / (1.0 - ADAM_BETA2**step), out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += ADAM_EPS
    np.multiply(new_m, learning_rate / (1.0 - ADAM_BETA1**step), out=new_flat)
    new_flat /= tmp
    new_flat += params.flat

    if not np.isfinite(new_flat).all():
        raise NumericError("update would make parameters non-finite; rejected")

    params.flat[:] = new_flat
    params.version += 1
    opt_state.m_flat[:] = new_m
    opt_state.v_flat[:] = new_v
    opt_state.step += 1


def add_task_embedding(
    params: ControllerParams, rng: np.random.Generator
) -> tuple[ControllerParams, int]:
    """Return params with one fresh uniformly drawn task-embedding row.

    Every other tensor is copied bit-identically; the new dense task id is
    the previous ``n_tasks``.
    """
    new_row = rng.uniform(-params.init_range, params.init_range, params.embedding_size)
    shapes = _tensor_shapes(
        params.option_counts,
        params.n_tasks + 1,
        params.embedding_size,
        params.hidden_size,
    )
    _, total = _layout(
        params.option_counts, params.n_tasks + 1, params.embedding_size,
        params.hidden_size,
    )
    flat = np.empty(total)
    grown = ControllerParams(
        option_counts=params.option_counts,
        n_tasks=params.n_tasks + 1,
        embedding_size=params.embedding_size,
        hidden_size=params.hidden_size,
        init_range=params.init_range,
        version=params.version,
        flat=flat,
        tensors=_build_views(flat, shapes),
    )
    for name, _ in shapes:
        if name == "task_embedding":
            grown.tensors[name][: params.n_tasks] = params.tensors[name]
            grown.tensors[name][params.n_tasks] = new_row
        else:
            grown.tensors[name][...] = params.tensors[name]
    return grown, params.n_tasks


# --- checkpoint serialization ------------------------------------------------
#
# Single little-endian binary file:
#   magic "TAMLCKPT", u32 format version, 32-byte space hash, u32 n_tasks,
#   u32 n_dims, u32*n_dims option counts, u32 embedding size, u32 hidden
#   size, f64 init range, u64 parameter version, optimizer name (u32 length
#   + utf-8), u64 optimizer step, u32 entry count, then entries sorted by
#   key ("p/<name>", "m/<name>", "v/<name>"): u32 key length, key, u32 ndim,
#   u64*ndim shape, raw float64 data.


def _write_str(out: list[bytes], text: str) -> None:
    raw = text.encode("utf-8")
    out.append(struct.pack("<I", len(raw)))
    out.append(raw)


def checkpoint_save(
    params: ControllerParams,
    opt_state: OptState,
    space_hash: bytes,
    path: str | Path,
) -> None:
    """Write params + optimizer state; the round trip is bit-exact."""
    if len(space_hash) != 32:
        raise ValueError("space_hash must be 32 bytes")
    out: list[bytes] = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_FORMAT_VERSION),
        space_hash,
        struct.pack("<II", params.n_tasks, len(params.option_counts)),
        struct.pack(f"<{len(params.option_counts)}I", *params.option_counts),
        struct.pack("<II", params.embedding_size, params.hidden_size),
        struct.pack("<d", params.init_range),
        struct.pack("<Q", params.version),
    ]
    _write_str(out, opt_state.kind)
    out.append(struct.pack("<Q", opt_state.step))

    entries: list[tuple[str, np.ndarray]] = [
        (f"p/{k}", a) for k, a in params.tensors.items()
    ]
    entries += [(f"m/{k}", a) for k, a in opt_state.m.items()]
    entries += [(f"v/{k}", a) for k, a in opt_state.v.items()]
    entries.sort(key=lambda kv: kv[0])

    out.append(struct.pack("<I", len(entries)))
    for key, arr in entries:
        _write_str(out, key)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated or corrupt checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def checkpoint_inspect(path: str | Path) -> dict:
    """Read only the checkpoint header; no search space required."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"{p}: checkpoint does not exist")
    r = _Reader(p.read_bytes(), str(p))
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{p}: not a controller checkpoint (bad magic)")
    (fmt_version,) = r.unpack("<I")
    space_hash = r.take(32)
    n_tasks, n_dims = r.unpack("<II")
    counts = r.unpack(f"<{n_dims}I")
    emb, hidden = r.unpack("<II")
    (init_range,) = r.unpack("<d")
    (version,) = r.unpack("<Q")
    opt_kind = r.read_str()
    (opt_step,) = r.unpack("<Q")
    return {
        "format_version": fmt_version,
        "space_hash": space_hash.hex(),
        "n_tasks": n_tasks,
        "option_counts": list(counts),
        "embedding_size": emb,
        "hidden_size": hidden,
        "init_range": init_range,
        "parameter_version": version,
        "optimizer": opt_kind,
        "optimizer_step": opt_step,
    }


def checkpoint_load(
    path: str | Path, space: SearchSpace
) -> tuple[ControllerParams, OptState]:
    """Load a checkpoint, refusing files written for a different space."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"{p}: checkpoint does not exist")
    r = _Reader(p.read_bytes(), str(p))

    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{p}: not a controller checkpoint (bad magic)")
    (fmt_version,) = r.unpack("<I")
    if fmt_version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{p}: unsupported checkpoint format {fmt_version}")
    stored_hash = r.take(32)
    if stored_hash != space.content_hash():
        raise CheckpointError(
            f"{p}: checkpoint was written for a different search space "
            f"(hash {stored_hash.hex()[:12]}.. != {space.content_hash_hex()[:12]}..)"
        )
    n_tasks, n_dims = r.unpack("<II")
    counts = r.unpack(f"<{n_dims}I")
    if counts != space.option_counts:
        raise CheckpointError(f"{p}: option counts do not match the search space")
    emb, hidden = r.unpack("<II")
    (init_range,) = r.unpack("<d")
    (version,) = r.unpack("<Q")
    opt_kind = r.read_str()
    (opt_step,) = r.unpack("<Q")
    if opt_kind not in ("adam", "sgd"):
        raise CheckpointError(f"{p}: unknown optimizer {opt_kind!r}")

    (n_entries,) = r.unpack("<I")
    stores: dict[str, dict[str, np.ndarray]] = {"p": {}, "m": {}, "v": {}}
    for _ in range(n_entries):
        key = r.read_str()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape)) if shape else 1
        raw = r.take(8 * size)
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        prefix, _, name = key.partition("/")
        if prefix not in stores or not name:
            raise CheckpointError(f"{p}: unexpected entry {key!r}")
        stores[prefix][name] = arr
    if r.pos != len(r.data):
        raise CheckpointError(f"{p}: trailing bytes after last tensor")

    shapes = _tensor_shapes(counts, n_tasks, emb, hidden)
    expected = dict(shapes)
    if set(stores["p"]) != set(expected):
        raise CheckpointError(f"{p}: tensor set does not match declared space")
    for name, arr in stores["p"].items():
        if arr.shape != expected[name]:
            raise CheckpointError(f"{p}: tensor {name} has shape {arr.shape}")

    _, total = _layout(counts, n_tasks, emb, hidden)
    flat = np.empty(total)
    params = _make_params(counts, n_tasks, emb, hidden, init_range, version, flat)
    for name, _ in shapes:
        params.tensors[name][...] = stores["p"][name]

    if opt_kind == "sgd":
        return params, OptState(kind="sgd", step=opt_step)
    if set(stores["m"]) != set(expected) or set(stores["v"]) != set(expected):
        raise CheckpointError(f"{p}: optimizer state does not match parameters")
    opt_state = init_opt_state(params, "adam")
    opt_state.step = opt_step
    for name, _ in shapes:
        opt_state.m[name][...] = stores["m"][name]
        opt_state.v[name][...] = stores["v"][name]
    return params, opt_state

import math

import numpy as np
import pytest

from taml import policy
from taml.errors import CheckpointError, NumericError
from taml.policy import ControllerConfig

from conftest import make_space

SMALL = ControllerConfig(embedding_size=4, hidden_size=6)


def small_params(counts, n_tasks=2, seed=0, jitter=0.0):
    space = make_space(counts)
    params = policy.init_params(space, n_tasks, SMALL, np.random.default_rng(seed))
    if jitter:
        rng = np.random.default_rng(seed + 1)
        params.flat += rng.normal(0.0, jitter, params.flat.size)
    return space, params


def objective(params, task_id, spec, coefficient, entropy_weight):
    total, _, entropy = policy.log_prob(params, task_id, spec)
    return coefficient * total + entropy_weight * entropy


class TestInit:
    def test_same_seed_bit_identical(self):
        space = make_space([3, 4])
        a = policy.init_params(space, 2, SMALL, np.random.default_rng(5))
        b = policy.init_params(space, 2, SMALL, np.random.default_rng(5))
        assert np.array_equal(a.flat, b.flat)
        assert a.version == 0

    def test_task_embedding_rows(self):
        space = make_space([2])
        params = policy.init_params(space, 3, SMALL, np.random.default_rng(0))
        assert params.tensors["task_embedding"].shape == (3, SMALL.embedding_size)

    def test_zero_tasks_rejected(self):
        with pytest.raises(ValueError):
            policy.init_params(make_space([2]), 0, SMALL, np.random.default_rng(0))

    def test_values_within_init_range(self):
        space = make_space([5, 2])
        params = policy.init_params(space, 1, SMALL, np.random.default_rng(1))
        assert np.all(np.abs(params.flat) <= SMALL.init_range)

    def test_initial_marginals_near_uniform(self):
        # Uniform init must give an approximately uniform action distribution
        # for every option of every dimension (paper-default sizes).
        space = make_space([8, 2, 5, 3, 9])
        params = policy.init_params(
            space, 1, ControllerConfig(), np.random.default_rng(42)
        )
        rng = np.random.default_rng(7)
        n = 10_000
        freq = [np.zeros(c) for c in space.option_counts]
        for _ in range(n):
            spec = policy.sample_rollout(params, 0, rng).spec
            for d, a in enumerate(spec):
                freq[d][a] += 1
        for d, c in enumerate(space.option_counts):
            assert np.all(np.abs(freq[d] / n - 1.0 / c) < 0.02), f"dimension {d}"


class TestRolloutAndLogProb:
    def test_single_option_space_forced(self):
        _, params = small_params([1, 1, 1])
        r = policy.sample_rollout(params, 0, np.random.default_rng(0))
        assert r.spec == (0, 0, 0)
        assert r.total_log_prob == 0.0
        assert r.total_entropy == 0.0

    def test_rollout_deterministic_given_seed(self):
        _, params = small_params([4, 4, 4], jitter=0.2)
        a = policy.sample_rollout(params, 1, np.random.default_rng(3))
        b = policy.sample_rollout(params, 1, np.random.default_rng(3))
        assert a == b

    def test_log_prob_consistent_with_rollout(self):
        _, params = small_params([3, 5, 2], jitter=0.3)
        for seed in range(5):
            r = policy.sample_rollout(params, 0, np.random.default_rng(seed))
            total, steps, entropy = policy.log_prob(params, 0, r.spec)
            assert total == pytest.approx(r.total_log_prob, abs=1e-12)
            assert entropy == pytest.approx(r.total_entropy, abs=1e-12)
            assert steps == pytest.approx(r.per_step_log_probs, abs=1e-12)

    def test_zeroed_heads_give_uniform(self):
        _, params = small_params([2, 3, 4], jitter=0.2)
        for d in range(3):
            params.tensors[f"head_w_{d}"][...] = 0.0
            params.tensors[f"head_b_{d}"][...] = 0.0
        total, _, entropy = policy.log_prob(params, 0, (1, 2, 3))
        assert total == pytest.approx(-math.log(24), abs=1e-12)
        assert entropy == pytest.approx(math.log(24), abs=1e-12)

    @pytest.mark.parametrize("counts", [[2, 3, 4], [4, 4, 4], [5, 7]])
    def test_exp_log_prob_sums_to_one(self, counts):
        space, params = small_params(counts, jitter=0.25)
        total = sum(
            math.exp(policy.log_prob(params, 1, spec)[0])
            for spec in space.iter_specs()
        )
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_step_probs_sum_to_one(self):
        _, params = small_params([3, 4], jitter=0.4)
        for p in policy.step_probs(params, 0, (2, 3)):
            assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_unknown_task_rejected(self):
        _, params = small_params([2])
        with pytest.raises(ValueError):
            policy.sample_rollout(params, 5, np.random.default_rng(0))

    def test_invalid_spec_rejected(self):
        _, params = small_params([2, 2])
        with pytest.raises(ValueError):
            policy.log_prob(params, 0, (0, 3))

    def test_entropy_bounded_by_uniform(self):
        _, params = small_params([4, 6], jitter=0.5)
        r = policy.sample_rollout(params, 0, np.random.default_rng(2))
        assert 0.0 <= r.total_entropy <= math.log(4) + math.log(6) + 1e-12
        assert r.total_log_prob <= 0.0

    def test_zero_task_input_ignores_task_id(self):
        _, params = small_params([3, 3, 3], n_tasks=4, jitter=0.3)
        specs = {
            policy.sample_rollout(
                params, tid, np.random.default_rng(11), zero_task_input=True
            ).spec
            for tid in range(4)
        }
        assert len(specs) == 1

    def test_greedy_spec_is_stepwise_argmax(self):
        _, params = small_params([4, 3, 5], jitter=0.4)
        for task_id in (None, 1):
            spec = policy.greedy_spec(params, task_id)
            probs = policy.step_probs(
                params, 0 if task_id is None else task_id, spec,
                zero_task_input=task_id is None,
            )
            assert all(int(np.argmax(p)) == a for p, a in zip(probs, spec))


class TestPolicyGradient:
    def test_zero_objective_gives_zero_gradients(self):
        _, params = small_params([3, 2])
        grads = policy.policy_gradient(params, 0, (1, 0), 0.0, 0.0)
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_matches_finite_differences(self):
        shapes = [(2, 3, 4), (5, 2), (3, 3, 3, 2)]
        h = 1e-5
        for case in range(4):
            rng = np.random.default_rng(9100 + case)
            space, params = small_params(
                shapes[case % 3], n_tasks=3, seed=200 + case, jitter=0.15
            )
            task = int(rng.integers(3))
            spec = space.sample_uniform(rng)
            coef = float(rng.uniform(-2, 2))
            ew = float(rng.uniform(0, 0.1))
            grads = policy.policy_gradient(params, task, spec, coef, ew)
            for key, arr in params.tensors.items():
                g = grads[key]
                for idx in np.ndindex(arr.shape):
                    if abs(g[idx]) <= 1e-6:
                        continue
                    orig = arr[idx]
                    arr[idx] = orig + h
                    fp = objective(params, task, spec, coef, ew)
                    arr[idx] = orig - h
                    fm = objective(params, task, spec, coef, ew)
                    arr[idx] = orig
                    fd = (fp - fm) / (2 * h)
                    rel = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd))
                    assert rel < 1e-4, f"{key}{idx}: {g[idx]} vs {fd}"

    def test_other_task_rows_exactly_zero(self):
        _, params = small_params([3, 4], n_tasks=5, jitter=0.2)
        grads = policy.policy_gradient(params, 2, (1, 3), 1.5, 0.05)
        emb = grads["task_embedding"]
        for row in (0, 1, 3, 4):
            assert np.all(emb[row] == 0.0)
        assert np.any(emb[2] != 0.0)

    def test_zero_task_input_blocks_embedding_gradient(self):
        _, params = small_params([3, 4], n_tasks=2, jitter=0.2)
        grads = policy.policy_gradient(
            params, 0, (1, 3), 1.5, 0.05, zero_task_input=True
        )
        assert np.all(grads["task_embedding"] == 0.0)

    def test_non_finite_coefficient_rejected(self):
        _, params = small_params([2, 2])
        with pytest.raises(ValueError):
            policy.policy_gradient(params, 0, (0, 0), float("nan"), 0.0)

    def test_gradient_from_trace_matches_fresh_computation(self):
        _, params = small_params([3, 3], jitter=0.3)
        rollout, trace = policy.sample_rollout_with_trace(
            params, 0, np.random.default_rng(4)
        )
        a = policy.gradient_from_trace(params, trace, 0.7, 0.02)
        b = policy.policy_gradient(params, 0, rollout.spec, 0.7, 0.02)
        for key in a:
            assert np.array_equal(a[key], b[key])

    def test_gradient_from_stale_trace_rejected(self):
        _, params = small_params([3, 3])
        _, trace = policy.sample_rollout_with_trace(params, 0, np.random.default_rng(4))
        opt = policy.init_opt_state(params, "sgd")
        policy.apply_update(params, policy.zero_gradients(params), opt, 0.1)
        with pytest.raises(ValueError):
            policy.gradient_from_trace(params, trace, 1.0, 0.0)


class TestApplyUpdate:
    def test_sgd_ascent_arithmetic(self):
        # theta' = theta + lr * gradient: 1.0 + 0.1 * 2.0 = 1.2
        _, params = small_params([2])
        opt = policy.init_opt_state(params, "sgd")
        params.tensors["sos_embedding"][0] = 1.0
        grads = policy.zero_gradients(params)
        grads["sos_embedding"][0] = 2.0
        policy.apply_update(params, grads, opt, 0.1)
        assert params.tensors["sos_embedding"][0] == pytest.approx(1.2, abs=1e-15)

    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_zero_gradient_keeps_parameters_bumps_version(self, kind):
        _, params = small_params([2, 3], jitter=0.1)
        opt = policy.init_opt_state(params, kind)
        before = params.flat.copy()
        policy.apply_update(params, policy.zero_gradients(params), opt, 0.1)
        assert np.array_equal(params.flat, before)
        assert params.version == 1

    def test_repeated_ascent_saturates_log_prob(self):
        # Climbing log pi(spec) drives the softmax toward the spec.
        _, params = small_params([2, 2], n_tasks=1, seed=3)
        opt = policy.init_opt_state(params, "adam")
        spec = (1, 0)
        for _ in range(500):
            grads = policy.policy_gradient(params, 0, spec, 1.0, 0.0)
            policy.apply_update(params, grads, opt, 1e-2)
        total, _, _ = policy.log_prob(params, 0, spec)
        assert total > -0.1
        assert params.version == 500

    def test_non_finite_gradient_rejected_without_mutation(self):
        _, params = small_params([2, 3])
        opt = policy.init_opt_state(params, "adam")
        before = params.flat.copy()
        grads = policy.zero_gradients(params)
        grads["sos_embedding"][0] = float("inf")
        with pytest.raises(NumericError):
            policy.apply_update(params, grads, opt, 0.1)
        assert np.array_equal(params.flat, before)
        assert params.version == 0
        assert opt.step == 0

    def test_non_finite_result_rejected_without_mutation(self):
        _, params = small_params([2, 3])
        opt = policy.init_opt_state(params, "sgd")
        before = params.flat.copy()
        grads = policy.zero_gradients(params)
        grads["sos_embedding"][0] = 1e308
        with pytest.raises(NumericError):
            policy.apply_update(params, grads, opt, 1e300)
        assert np.array_equal(params.flat, before)
        assert params.version == 0

    def test_shape_mismatch_rejected(self):
        _, params = small_params([2, 3])
        opt = policy.init_opt_state(params, "sgd")
        grads = policy.zero_gradients(params)
        grads["sos_embedding"] = np.zeros(99)
        with pytest.raises(ValueError):
            policy.apply_update(params, grads, opt, 0.1)

    def test_missing_tensor_rejected(self):
        _, params = small_params([2, 3])
        opt = policy.init_opt_state(params, "sgd")
        grads = policy.zero_gradients(params)
        del grads["skip_proj"]
        with pytest.raises(ValueError):
            policy.apply_update(params, grads, opt, 0.1)


class TestAddTaskEmbedding:
    def test_grows_table_and_returns_dense_id(self):
        _, params = small_params([3], n_tasks=8)
        grown, new_id = policy.add_task_embedding(params, np.random.default_rng(0))
        assert new_id == 8
        assert grown.n_tasks == 9
        assert grown.tensors["task_embedding"].shape[0] == 9

    def test_existing_tensors_bit_identical(self):
        _, params = small_params([3, 4], n_tasks=2, jitter=0.3)
        grown, _ = policy.add_task_embedding(params, np.random.default_rng(1))
        for name, arr in params.tensors.items():
            if name == "task_embedding":
                assert np.array_equal(grown.tensors[name][:2], arr)
            else:
                assert np.array_equal(grown.tensors[name], arr)
        assert grown.version == params.version

    def test_new_row_deterministic(self):
        _, params = small_params([3], n_tasks=2)
        a, _ = policy.add_task_embedding(params, np.random.default_rng(7))
        b, _ = policy.add_task_embedding(params, np.random.default_rng(7))
        assert np.array_equal(a.tensors["task_embedding"], b.tensors["task_embedding"])
        assert np.all(np.abs(a.tensors["task_embedding"][-1]) <= params.init_range)


class TestCheckpoints:
    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_round_trip_bit_exact(self, tmp_path, kind):
        space, params = small_params([3, 4], n_tasks=3, jitter=0.4)
        opt = policy.init_opt_state(params, kind)
        for _ in range(3):
            grads = policy.policy_gradient(params, 1, (2, 1), 0.5, 0.01)
            policy.apply_update(params, grads, opt, 0.01)
        path = tmp_path / "ctrl.ckpt"
        policy.checkpoint_save(params, opt, space.content_hash(), path)
        loaded, opt2 = policy.checkpoint_load(path, space)
        assert np.array_equal(loaded.flat, params.flat)
        assert loaded.version == params.version == 3
        assert loaded.option_counts == params.option_counts
        assert loaded.init_range == params.init_range
        assert opt2.kind == kind
        assert opt2.step == opt.step
        for key in opt.m:
            assert np.array_equal(opt2.m[key], opt.m[key])
            assert np.array_equal(opt2.v[key], opt.v[key])

    def test_space_mismatch_refused(self, tmp_path):
        space, params = small_params([3, 4])
        opt = policy.init_opt_state(params, "sgd")
        path = tmp_path / "ctrl.ckpt"
        policy.checkpoint_save(params, opt, space.content_hash(), path)
        other = make_space([3, 5])
        with pytest.raises(CheckpointError, match="different search space"):
            policy.checkpoint_load(path, other)

    def test_truncated_file_refused(self, tmp_path):
        space, params = small_params([3, 4])
        opt = policy.init_opt_state(params, "adam")
        path = tmp_path / "ctrl.ckpt"
        policy.checkpoint_save(params, opt, space.content_hash(), path)
        data = path.read_bytes()
        for cut in (4, 40, len(data) // 2, len(data) - 3):
            (tmp_path / "cut.ckpt").write_bytes(data[:cut])
            with pytest.raises(CheckpointError):
                policy.checkpoint_load(tmp_path / "cut.ckpt", space)

    def test_trailing_garbage_refused(self, tmp_path):
        space, params = small_params([2])
        opt = policy.init_opt_state(params, "sgd")
        path = tmp_path / "ctrl.ckpt"
        policy.checkpoint_save(params, opt, space.content_hash(), path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError):
            policy.checkpoint_load(path, space)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            policy.checkpoint_load(tmp_path / "nope.ckpt", make_space([2]))

    def test_inspect_header(self, tmp_path):
        space, params = small_params([3, 4], n_tasks=5)
        opt = policy.init_opt_state(params, "adam")
        path = tmp_path / "ctrl.ckpt"
        policy.checkpoint_save(params, opt, space.content_hash(), path)
        info = policy.checkpoint_inspect(path)
        assert info["n_tasks"] == 5
        assert info["option_counts"] == [3, 4]
        assert info["parameter_version"] == 0
        assert info["optimizer"] == "adam"
        assert info["space_hash"] == space.content_hash_hex()


class TestRolloutDistribution:
    def test_empirical_frequencies_match_log_prob(self):
        # Lighter version of the acceptance check: 20k rollouts on a
        # cardinality-12 space against exact probabilities.
        space, params = small_params([3, 4], jitter=0.35)
        exact = {
            spec: math.exp(policy.log_prob(params, 0, spec)[0])
            for spec in space.iter_specs()
        }
        rng = np.random.default_rng(31)
        n = 20_000
        counts = {spec: 0 for spec in exact}
        for _ in range(n):
            counts[policy.sample_rollout(params, 0, rng).spec] += 1
        for spec, p in exact.items():
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[spec] / n - p) <= 3.5 * se + 1e-9

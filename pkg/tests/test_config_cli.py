import hashlib
import json

import pytest
import yaml

from taml.cli import main
from taml.config import load_run_config
from taml.errors import ConfigError
from taml.metrics import TrialLog, accuracy_topn

MINIMAL = {
    "space": {
        "dimensions": [
            {"name": "a", "options": ["x", "y", "z"]},
            {"name": "b", "options": ["p", "q"]},
        ]
    },
    "tasks": {
        "list": [
            {
                "name": "demo",
                "preferred": [1, 0],
                "weights": [0.3, 0.3],
                "base_reward": 0.2,
            }
        ]
    },
    "run": {"mode": "single_task", "budget": 8},
}


def write_config(tmp_path, data, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


class TestConfigParsing:
    def test_defaults_applied(self, tmp_path):
        cfg, resolved = load_run_config(write_config(tmp_path, MINIMAL))
        assert cfg.controller.learning_rate == 1e-4
        assert cfg.controller.embedding_size == 25
        assert cfg.controller.hidden_size == 50
        assert cfg.baseline_decay == 0.01
        assert resolved["run"]["top_n"] == 10
        assert resolved["run"]["stride"] == 5
        assert cfg.seed == 0

    def test_seed_override_wins(self, tmp_path):
        data = dict(MINIMAL)
        data["run"] = {**MINIMAL["run"], "seed": 3}
        cfg, _ = load_run_config(write_config(tmp_path, data), {"seed": 7})
        assert cfg.seed == 7

    def test_unknown_key_named(self, tmp_path):
        data = {**MINIMAL, "controller": {"learnig_rate": 0.1}}
        with pytest.raises(ConfigError, match="learnig_rate"):
            load_run_config(write_config(tmp_path, data))

    def test_unknown_run_key_named(self, tmp_path):
        data = dict(MINIMAL)
        data["run"] = {**MINIMAL["run"], "bugdet": 5}
        with pytest.raises(ConfigError, match="bugdet"):
            load_run_config(write_config(tmp_path, data))

    def test_missing_section(self, tmp_path):
        data = {k: v for k, v in MINIMAL.items() if k != "tasks"}
        with pytest.raises(ConfigError, match="tasks"):
            load_run_config(write_config(tmp_path, data))

    def test_missing_mode(self, tmp_path):
        data = dict(MINIMAL)
        data["run"] = {"budget": 5}
        with pytest.raises(ConfigError, match="mode"):
            load_run_config(write_config(tmp_path, data))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="missing.yaml"):
            load_run_config(tmp_path / "missing.yaml")

    def test_family_section_and_select(self, tmp_path):
        data = {
            "space": {
                "dimensions": [
                    {"name": f"d{i}", "options": ["a", "b", "c", "d"]}
                    for i in range(4)
                ]
                + [
                    {"name": "s0", "options": list("abcdef")},
                    {"name": "s1", "options": list("abcdef")},
                ]
            },
            "tasks": {
                "family": {
                    "n_clusters": 2,
                    "tasks_per_cluster": 2,
                    "shared_dims": [1, 2, 3],
                    "base_reward": 0.2,
                    "global_weight": 0.1,
                    "shared_weight": 0.1,
                    "specific_weight": 0.1,
                },
                "select": ["c0_t0", "c1_t1"],
            },
            "run": {"mode": "multitask", "budget": 4},
        }
        cfg, resolved = load_run_config(write_config(tmp_path, data))
        assert [t.name for t in cfg.tasks] == ["c0_t0", "c1_t1"]
        assert len(resolved["tasks"]["list"]) == 2

    def test_resolved_config_reproduces_run_config(self, tmp_path):
        _, resolved = load_run_config(write_config(tmp_path, MINIMAL))
        again, resolved2 = load_run_config(
            write_config(tmp_path, resolved, name="echo.yaml")
        )
        assert resolved == resolved2
        assert again.config_digest == resolved2["run"].get(
            "config_digest", again.config_digest
        )

    def test_digest_stable(self, tmp_path):
        cfg1, _ = load_run_config(write_config(tmp_path, MINIMAL))
        cfg2, _ = load_run_config(write_config(tmp_path, MINIMAL, name="c2.yaml"))
        assert cfg1.config_digest == cfg2.config_digest


class TestCliRun:
    def run_dir(self, tmp_path, name, seed=1, budget=10, extra_argv=()):
        path = write_config(tmp_path, MINIMAL)
        out = tmp_path / name
        code = main(
            [
                "run",
                "--config",
                str(path),
                "--seed",
                str(seed),
                "--budget",
                str(budget),
                "--out",
                str(out),
                *extra_argv,
            ]
        )
        assert code == 0
        return out

    def test_run_writes_all_artifacts(self, tmp_path):
        out = self.run_dir(tmp_path, "run1")
        for name in (
            "config_resolved.yaml",
            "trials.jsonl",
            "checkpoint_final.ckpt",
            "learning_curve.csv",
            "embedding_similarity.csv",
            "manifest.json",
        ):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        for name, digest in manifest["files"].items():
            actual = hashlib.sha256((out / name).read_bytes()).hexdigest()
            assert actual == digest

    def test_repeat_run_byte_identical_log(self, tmp_path):
        a = self.run_dir(tmp_path, "run_a", seed=4)
        b = self.run_dir(tmp_path, "run_b", seed=4)
        assert (a / "trials.jsonl").read_bytes() == (b / "trials.jsonl").read_bytes()
        assert (a / "checkpoint_final.ckpt").read_bytes() == (
            b / "checkpoint_final.ckpt"
        ).read_bytes()

    def test_random_mode_has_no_checkpoint(self, tmp_path):
        out = self.run_dir(tmp_path, "run_rs", extra_argv=("--mode", "random"))
        assert not (out / "checkpoint_final.ckpt").exists()
        assert (out / "trials.jsonl").exists()

    def test_out_root_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TAML_OUT", str(tmp_path / "root"))
        path = write_config(tmp_path, MINIMAL)
        code = main(["run", "--config", str(path), "--budget", "5"])
        assert code == 0
        assert (tmp_path / "root" / "single_task_seed0" / "trials.jsonl").exists()


class TestCliErrors:
    def test_unknown_key_exit_code(self, tmp_path, capsys):
        data = {**MINIMAL, "controller": {"learnig_rate": 0.1}}
        path = write_config(tmp_path, data)
        assert main(["run", "--config", str(path)]) == 2
        assert "learnig_rate" in capsys.readouterr().err

    def test_zero_budget_exit_code(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        assert main(["run", "--config", str(path), "--budget", "0"]) == 2

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_checkpoint_error_exit_code(self, tmp_path):
        assert main(["inspect-checkpoint", str(tmp_path / "nope.ckpt")]) == 3

    def test_transfer_without_checkpoint_exit_code(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        out = tmp_path / "x"
        assert (
            main(
                ["run", "--config", str(path), "--mode", "transfer", "--out", str(out)]
            )
            == 2
        )


class TestCliQueries:
    def test_validate_config_writes_nothing(self, tmp_path, capsys, monkeypatch):
        path = write_config(tmp_path, MINIMAL)
        monkeypatch.chdir(tmp_path)
        before = sorted(p.name for p in tmp_path.iterdir())
        assert main(["validate-config", "--config", str(path)]) == 0
        after = sorted(p.name for p in tmp_path.iterdir())
        assert before == after
        assert "ok" in capsys.readouterr().out

    def test_inspect_checkpoint_prints_header(self, tmp_path, capsys):
        out = TestCliRun().run_dir(tmp_path, "run_i")
        capsys.readouterr()
        assert main(["inspect-checkpoint", str(out / "checkpoint_final.ckpt")]) == 0
        text = capsys.readouterr().out
        assert "n_tasks: 1" in text
        assert "option_counts: [3, 2]" in text
        assert "parameter_version: 10" in text

    def test_metrics_consistent_with_accuracy_topn(self, tmp_path, capsys):
        out = TestCliRun().run_dir(tmp_path, "run_m", budget=17)
        capsys.readouterr()
        assert (
            main(
                [
                    "metrics",
                    "--log",
                    str(out / "trials.jsonl"),
                    "--top-n",
                    "3",
                    "--stride",
                    "5",
                    "--out",
                    str(tmp_path / "mx"),
                ]
            )
            == 0
        )
        log = TrialLog.load(out / "trials.jsonl")
        val, test = accuracy_topn(log, 3)
        curve = (tmp_path / "mx" / "learning_curve.csv").read_text().splitlines()
        last = curve[-1].split(",")
        assert int(last[0]) == 17
        assert float(last[1]) == pytest.approx(val, abs=1e-12)
        assert float(last[2]) == pytest.approx(test, abs=1e-12)

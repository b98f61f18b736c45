"""Command-line entry point.

Subcommands:
  run                 execute a configured search run and write artifacts
  validate-config     parse and validate a config without writing anything
  inspect-checkpoint  print a checkpoint's header fields
  metrics             compute metrics and a learning-curve CSV from a log

Exit codes: 0 success, 2 configuration error, 3 I/O or checkpoint error,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import metrics as metrics_mod
from . import trainer
from .config import CliInvocation, load_run_config, render_resolved
from .errors import CheckpointError, ConfigError, NumericError
from .policy import checkpoint_inspect

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

OUT_ROOT_ENV = "TAML_OUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taml",
        description="Multitask architecture/hyperparameter search runs",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run_p = sub.add_parser("run", help="execute a search run")
    run_p.add_argument("--config", required=True, help="path to the run config file")
    run_p.add_argument("--seed", type=int, default=None, help="override run.seed")
    run_p.add_argument("--budget", type=int, default=None, help="override run.budget")
    run_p.add_argument(
        "--parallelism", type=int, default=None, help="override run.parallelism"
    )
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--mode", default=None, help="override run.mode")
    run_p.add_argument(
        "--from-checkpoint", default=None, help="override run.from_checkpoint"
    )

    val_p = sub.add_parser("validate-config", help="check a config file")
    val_p.add_argument("--config", required=True)

    ins_p = sub.add_parser("inspect-checkpoint", help="print checkpoint header")
    ins_p.add_argument("path")

    met_p = sub.add_parser("metrics", help="metrics from a finished trial log")
    met_p.add_argument("--log", required=True, help="path to a trial log")
    met_p.add_argument("--top-n", type=int, default=10)
    met_p.add_argument("--stride", type=int, default=5)
    met_p.add_argument(
        "--threshold", type=float, default=None, help="report trials to this reward"
    )
    met_p.add_argument(
        "--out", default=None, help="directory for the learning-curve CSV"
    )
    return parser


def parse_invocation(argv: list[str]) -> CliInvocation:
    args = build_parser().parse_args(argv)
    if args.subcommand == "run":
        return CliInvocation(
            subcommand="run",
            config_path=Path(args.config),
            overrides={
                "seed": args.seed,
                "budget": args.budget,
                "parallelism": args.parallelism,
                "mode": args.mode,
                "from_checkpoint": args.from_checkpoint,
            },
            out_dir=Path(args.out) if args.out else None,
        )
    if args.subcommand == "validate-config":
        return CliInvocation(subcommand="validate-config", config_path=Path(args.config))
    if args.subcommand == "inspect-checkpoint":
        return CliInvocation(subcommand="inspect-checkpoint", config_path=Path(args.path))
    return CliInvocation(
        subcommand="metrics",
        config_path=Path(args.log),
        overrides={
            "top_n": args.top_n,
            "stride": args.stride,
            "threshold": args.threshold,
        },
        out_dir=Path(args.out) if args.out else None,
    )


def _default_out_dir(mode: str, seed: int) -> Path:
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / f"{mode}_seed{seed}"


def _write_manifest(out_dir: Path) -> None:
    digests = {}
    for path in sorted(out_dir.iterdir()):
        if path.is_file() and path.name != "manifest.json":
            digests[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    (out_dir / "manifest.json").write_text(
        json.dumps({"files": digests}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _cmd_run(invocation: CliInvocation) -> int:
    config, resolved = load_run_config(invocation.config_path, invocation.overrides)
    out_dir = invocation.out_dir or _default_out_dir(config.mode, config.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.out_dir = out_dir

    (out_dir / "config_resolved.yaml").write_text(
        render_resolved(resolved), encoding="utf-8"
    )

    result = trainer.run(config)
    result.log.save(out_dir / "trials.jsonl")

    top_n = resolved["run"]["top_n"]
    stride = resolved["run"]["stride"]
    metrics_mod.write_learning_curve_csv(
        out_dir / "learning_curve.csv", result.log, n=top_n, stride=stride
    )
    if result.params is not None:
        sim = metrics_mod.embedding_similarity(result.params)
        names = [
            result.task_names.get(i, f"task{i}")
            for i in range(result.params.n_tasks)
        ]
        metrics_mod.write_similarity_csv(
            out_dir / "embedding_similarity.csv", sim, names
        )

    _write_manifest(out_dir)
    val, test = metrics_mod.accuracy_topn(result.log, top_n)
    print(
        f"completed {len(result.log)} trials; accuracy-top{top_n} "
        f"val {val:.4f} test {test:.4f}; artifacts in {out_dir}"
    )
    return EXIT_OK


def _cmd_validate(invocation: CliInvocation) -> int:
    config, resolved = load_run_config(invocation.config_path, None)
    trainer.validate_run_config(config)
    print(
        f"ok: mode {config.mode}, {len(config.tasks)} task(s), "
        f"budget {config.budget}, space of {config.space.cardinality()} specs, "
        f"digest {config.config_digest[:12]}"
    )
    return EXIT_OK


def _cmd_inspect(invocation: CliInvocation) -> int:
    info = checkpoint_inspect(invocation.config_path)
    for key, value in info.items():
        print(f"{key}: {value}")
    return EXIT_OK


def _cmd_metrics(invocation: CliInvocation) -> int:
    log_path = invocation.config_path
    log = metrics_mod.TrialLog.load(log_path)
    top_n = invocation.overrides["top_n"]
    stride = invocation.overrides["stride"]
    out_dir = invocation.out_dir or log_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_mod.write_learning_curve_csv(
        out_dir / "learning_curve.csv", log, n=top_n, stride=stride
    )
    val, test = metrics_mod.accuracy_topn(log, top_n)
    print(f"trials: {len(log)}")
    print(f"accuracy-top{top_n}: val {val:.6f} test {test:.6f}")
    threshold = invocation.overrides.get("threshold")
    if threshold is not None:
        reached = metrics_mod.trials_to_threshold(log, threshold, n=top_n, stride=stride)
        print(f"trials-to-threshold({threshold}): {reached}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        invocation = parse_invocation(argv)
        if invocation.subcommand == "run":
            return _cmd_run(invocation)
        if invocation.subcommand == "validate-config":
            return _cmd_validate(invocation)
        if invocation.subcommand == "inspect-checkpoint":
            return _cmd_inspect(invocation)
        return _cmd_metrics(invocation)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

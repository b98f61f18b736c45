"""Trial-log persistence and search-quality metrics.

The log is an append-only sequence of trial records with one JSON object
per line; the first line is a metadata header. Metrics select the best-N
trials by validation reward and report validation and test means of that
same selection, which is exactly the mechanism that lets tiny validation
sets inflate validation scores relative to test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .policy import ControllerParams

LOG_KIND = "taml_trial_log"


@dataclass(frozen=True)
class TrialRecord:
    """One completed trial. ``time`` is deterministic virtual time
    (cumulative evaluation cost at completion), not wall clock, so logs of
    identical runs are byte-identical."""

    index: int
    task_id: int
    task_name: str
    spec: tuple[int, ...]
    val_reward: float | None
    test_reward: float | None
    version: int
    cost: float
    time: float
    ok: bool = True


@dataclass
class TrialLog:
    """Append-only trial records plus run metadata."""

    metadata: dict = field(default_factory=dict)
    records: list[TrialRecord] = field(default_factory=list)

    def append(self, record: TrialRecord) -> None:
        expected = len(self.records)
        if record.index != expected:
            raise ValueError(f"record index {record.index}, expected {expected}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def ok_records(self) -> list[TrialRecord]:
        return [r for r in self.records if r.ok]

    def save(self, path: str | Path) -> None:
        lines = [json.dumps({"kind": LOG_KIND, **self.metadata}, sort_keys=True)]
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "trial": r.index,
                        "task": r.task_id,
                        "task_name": r.task_name,
                        "spec": list(r.spec),
                        "val": r.val_reward,
                        "test": r.test_reward,
                        "version": r.version,
                        "wall_cost": r.cost,
                        "time": r.time,
                        "ok": r.ok,
                    },
                    sort_keys=True,
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrialLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ValueError(f"{path}: empty trial log")
        header = json.loads(lines[0])
        if header.pop("kind", None) != LOG_KIND:
            raise ValueError(f"{path}: not a trial log")
        log = cls(metadata=header)
        for line in lines[1:]:
            row = json.loads(line)
            log.append(
                TrialRecord(
                    index=row["trial"],
                    task_id=row["task"],
                    task_name=row["task_name"],
                    spec=tuple(row["spec"]),
                    val_reward=row["val"],
                    test_reward=row["test"],
                    version=row["version"],
                    cost=row["wall_cost"],
                    time=row["time"],
                    ok=row["ok"],
                )
            )
        return log


def accuracy_topn(
    log: TrialLog, n: int, up_to_trial: int | None = None
) -> tuple[float, float]:
    """Mean validation and test reward of the N best-validation trials.

    Selection is by validation reward with ties broken toward earlier
    trials; the test mean is over the same selection. Considers trials
    with index <= up_to_trial (all, if None); failed trials are skipped.
    With fewer than N usable trials the mean is over all of them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    usable = [
        r
        for r in log.ok_records()
        if up_to_trial is None or r.index <= up_to_trial
    ]
    if not usable:
        raise ValueError("trial log has no successful trials in range")
    usable.sort(key=lambda r: (-r.val_reward, r.index))
    top = usable[:n]
    val = sum(r.val_reward for r in top) / len(top)
    test = sum(r.test_reward for r in top) / len(top)
    return val, test


def _stride_points(total: int, stride: int) -> list[int]:
    """Trial counts at which cumulative metrics are evaluated."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    points = list(range(stride, total + 1, stride))
    if not points or points[-1] != total:
        points.append(total)
    return points


def trials_to_threshold(
    log: TrialLog, theta: float, n: int = 10, stride: int = 5
) -> int | None:
    """Smallest evaluated trial count whose validation accuracy-topN meets
    ``theta``; None if the log never gets there."""
    for count in _stride_points(len(log), stride):
        window = [r for r in log.records[:count] if r.ok]
        if not window:
            continue
        val, _ = accuracy_topn(log, n, up_to_trial=count - 1)
        if val >= theta:
            return count
    return None


def export_learning_curve(
    log: TrialLog, n: int = 10, stride: int = 5
) -> list[tuple[int, float, float]]:
    """Cumulative (trial count, val topN, test topN) rows on the stride grid.

    The validation column is monotone non-decreasing by construction; the
    test column may plateau or fall.
    """
    rows = []
    for count in _stride_points(len(log), stride):
        window = [r for r in log.records[:count] if r.ok]
        if not window:
            continue
        val, test = accuracy_topn(log, n, up_to_trial=count - 1)
        rows.append((count, val, test))
    return rows


def write_learning_curve_csv(
    path: str | Path, log: TrialLog, n: int = 10, stride: int = 5
) -> None:
    lines = ["trial,val_topN,test_topN"]
    for count, val, test in export_learning_curve(log, n, stride):
        lines.append(f"{count},{val!r},{test!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def embedding_similarity(params: ControllerParams) -> np.ndarray:
    """Cosine similarity matrix between task embeddings.

    Pairs involving a zero vector map to 0 by convention.
    """
    emb = params.tensors["task_embedding"]
    norms = np.linalg.norm(emb, axis=1)
    sim = np.zeros((len(emb), len(emb)))
    for i in range(len(emb)):
        for j in range(len(emb)):
            if norms[i] == 0.0 or norms[j] == 0.0:
                continue
            if i == j:
                sim[i, j] = 1.0
            else:
                sim[i, j] = float(emb[i] @ emb[j] / (norms[i] * norms[j]))
    return sim


def write_similarity_csv(
    path: str | Path, sim: np.ndarray, names: list[str]
) -> None:
    if sim.shape != (len(names), len(names)):
        raise ValueError("similarity matrix does not match the task names")
    lines = ["task," + ",".join(names)]
    for name, row in zip(names, sim):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

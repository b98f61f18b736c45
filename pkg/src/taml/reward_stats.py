"""Per-task reward normalization.

Keeps an exponential moving average of each task's rewards (the baseline)
and of the squared deviation from that baseline (the variance), and turns
raw rewards into normalized advantages so gradient updates stay balanced
across tasks with different reward scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Floor on the standard deviation: deterministic tasks can drive the
# variance estimate to zero.
STD_FLOOR = 1e-6


@dataclass
class TaskStats:
    baseline: float = 0.0
    sigma_sq: float = 0.0
    count: int = 0


@dataclass
class RewardStats:
    """EMA baseline and variance per task, single-writer.

    ``alpha`` is the decay factor of both moving averages and is shared by
    every task in a run.
    """

    alpha: float = 0.01
    _tasks: dict[int, TaskStats] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")

    def task(self, task_id: int) -> TaskStats:
        return self._tasks.setdefault(int(task_id), TaskStats())

    def update(self, task_id: int, reward: float) -> TaskStats:
        """Fold one reward into the task's moving averages.

        The first observation warm-starts the baseline at the reward itself
        and the variance at 1.0, so the first advantage is exactly zero and
        early normalization cannot divide by a near-zero deviation. After
        that the baseline moves first and the variance update uses the
        already-moved baseline.
        """
        reward = float(reward)
        if not math.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        st = self.task(task_id)
        if st.count == 0:
            st.baseline = reward
            st.sigma_sq = 1.0
        else:
            st.baseline = (1.0 - self.alpha) * st.baseline + self.alpha * reward
            delta = reward - st.baseline
            st.sigma_sq = (1.0 - self.alpha) * st.sigma_sq + self.alpha * delta * delta
        st.count += 1
        return st

    def normalized_advantage(self, task_id: int, reward: float) -> float:
        """(reward - baseline) / max(std, floor) using the task's current stats."""
        st = self._tasks.get(int(task_id))
        if st is None or st.count == 0:
            raise ValueError(f"task {task_id} has no reward observations yet")
        std = max(math.sqrt(st.sigma_sq), STD_FLOOR)
        return (float(reward) - st.baseline) / std

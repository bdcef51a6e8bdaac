"""
Proximity targets, the output decoder and the R^2 score.

P(t)  = max(N - floor(T(t) / L), 0), T(t) = time to the next reward at or after t.
P*(t) is decoded from output spikes (time, value n) by the step recursion:
    P*(0) = 0
    P*(t+1) = 0                 if t is a reward time
            = n                 if an output spike with value n occurs at t+1
            = 0                 if no output spike occurred in (t - L, t + 1]
            = P*(t)             otherwise
Simultaneous output spikes resolve to the largest n (the soonest claim).
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class UndefinedScoreError(ValueError):
    pass


@dataclass
class PredictionTrace:
    P: np.ndarray
    P_star: np.ndarray
    N: int
    L: int

    def __post_init__(self):
        if len(self.P) != len(self.P_star):
            raise ValueError(f"length mismatch: P={len(self.P)}, P_star={len(self.P_star)}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'time_ms': np.arange(len(self.P)), 'P': self.P, 'P_star': self.P_star})


def ground_truth(reward_times: Sequence[int], horizon: int, N: int, L: int) -> np.ndarray:
    """
    Proximity to the next reward for t in [0, horizon). Rewards past the
    horizon act as lookahead; after the last reward P is 0.
    """
    rewards = np.asarray(reward_times, dtype=np.int64)
    t = np.arange(horizon, dtype=np.int64)
    if len(rewards) == 0:
        return np.zeros(horizon, dtype=np.int64)
    idx = np.searchsorted(rewards, t, side='left')
    has_next = idx < len(rewards)
    next_reward = rewards[np.minimum(idx, len(rewards) - 1)]
    levels = N - (next_reward - t) // L
    return np.where(has_next, np.maximum(levels, 0), 0).astype(np.int64)


def decode(output_spikes: Iterable[Tuple[int, int]], reward_times: Iterable[int],
           horizon: int, N: int, L: int) -> np.ndarray:
    best_at: Dict[int, int] = {}
    for time, n in output_spikes:
        if not 1 <= n <= N:
            raise ValueError(f"output value {n} outside [1, {N}]")
        best_at[time] = max(n, best_at.get(time, 0))
    rewards = set(reward_times)

    p_star = np.zeros(horizon, dtype=np.int64)
    last_spike: Optional[int] = None
    prev = 0
    for t in range(horizon - 1):
        nxt = t + 1
        fresh = best_at.get(nxt)
        if fresh is not None:
            last_spike = nxt
        if t in rewards:
            value = 0
        elif fresh is not None:
            value = fresh
        elif last_spike is None or last_spike <= t - L:
            value = 0
        else:
            value = prev
        p_star[nxt] = value
        prev = value
    return p_star


def r_squared(trace: PredictionTrace, eval_window: Optional[Tuple[int, int]] = None) -> float:
    """1 - Var(P* - P) / Var(P) with population variances over [start, end)."""
    start, end = eval_window if eval_window is not None else (0, len(trace.P))
    return r_squared_arrays(trace.P[start:end], trace.P_star[start:end])


def r_squared_arrays(actual: np.ndarray, predicted: np.ndarray) -> float:
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if len(actual) == 0:
        raise UndefinedScoreError("empty evaluation window")
    var_actual = np.var(actual)
    if var_actual == 0:
        raise UndefinedScoreError("target has zero variance on the evaluation window")
    return float(1.0 - np.var(predicted - actual) / var_actual)


def last_window(horizon: int, eval_steps: int) -> Tuple[int, int]:
    return max(0, horizon - eval_steps), horizon


def build_trace(secrew_output: Sequence[Tuple[int, int]], reward_times: Sequence[int],
                horizon: int, N: int, L: int) -> PredictionTrace:
    in_horizon = [r for r in reward_times if r < horizon]
    return PredictionTrace(
        P=ground_truth(reward_times, horizon, N, L),
        P_star=decode(secrew_output, in_horizon, horizon, N, L),
        N=N,
        L=L,
    )


def score_episode(secrew_output: Sequence[Tuple[int, int]], reward_times: Sequence[int],
                  horizon: int, N: int, L: int, eval_steps: int) -> Tuple[PredictionTrace, float]:
    """Build the trace for one run and score it on the final `eval_steps` ms."""
    trace = build_trace(secrew_output, reward_times, horizon, N, L)
    window = last_window(horizon, eval_steps)
    score = r_squared(trace, window)
    logger.debug(f"R² {score:.4f} over [{window[0]}, {window[1]}), {len(secrew_output)} output spikes")
    return trace, score

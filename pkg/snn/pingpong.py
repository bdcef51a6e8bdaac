"""
Ping-pong world: a ball in a 10x10 cm box with walls at y = +-5 and x = +5,
and a 1.8 cm racket moving chaotically along the open left border x = -5.

A hit is a reward; a miss is a punishment and the ball restarts from a
random point on the middle line x = 0. One step is 1 ms.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DT_S = 0.001

EPISODE_DTYPE = np.dtype([
    ('ball_x', '<f8'), ('ball_y', '<f8'), ('vx', '<f8'), ('vy', '<f8'),
    ('racket_y', '<f8'), ('reward', '?'), ('punishment', '?'),
])


@dataclass
class WorldParams:
    half_size: float = 5.0
    racket_half: float = 0.9
    speed_min: float = 10.0
    speed_max: float = 33.3
    min_vx: float = 10.0
    rightward_only: bool = False
    racket_speed_max: float = 15.0
    racket_switch_mean_ms: float = 250.0

    def validate(self):
        if self.half_size <= self.racket_half:
            raise ValueError("racket must fit inside the box")
        if not 0 < self.speed_min <= self.speed_max:
            raise ValueError(f"bad speed range [{self.speed_min}, {self.speed_max}]")
        if self.min_vx > self.speed_min:
            raise ValueError("min_vx cannot exceed the minimum speed")
        if self.racket_switch_mean_ms < 1:
            raise ValueError("racket_switch_mean_ms must be >= 1")


@dataclass
class WorldState:
    ball_x: float
    ball_y: float
    ball_vx: float      # cm/s
    ball_vy: float
    racket_y: float     # racket center
    racket_vy: float = 0.0


class StepOutcome(NamedTuple):
    reward: bool = False
    punishment: bool = False


class BallState(NamedTuple):
    x: float
    y: float
    vx: float
    vy: float


def reset_ball(rng: np.random.Generator, params: WorldParams = None) -> BallState:
    """
    Random point on x = 0, random speed, and a direction drawn uniformly from
    the directions whose |vx| is at least min_vx.
    """
    params = params or WorldParams()
    speed = rng.uniform(params.speed_min, params.speed_max)
    half_cone = math.acos(min(1.0, params.min_vx / speed))
    angle = rng.uniform(-half_cone, half_cone)
    sign = 1.0 if params.rightward_only or rng.random() < 0.5 else -1.0
    y = rng.uniform(-params.half_size, params.half_size)
    return BallState(0.0, y, sign * speed * math.cos(angle), speed * math.sin(angle))


def initial_state(rng: np.random.Generator, params: WorldParams = None) -> WorldState:
    params = params or WorldParams()
    ball = reset_ball(rng, params)
    return WorldState(ball.x, ball.y, ball.vx, ball.vy, racket_y=0.0,
                      racket_vy=rng.uniform(-params.racket_speed_max, params.racket_speed_max))


def _move_racket(state: WorldState, rng: np.random.Generator, params: WorldParams) -> Tuple[float, float]:
    # memoryless switching: exponential dwell times in discrete time
    vy = state.racket_vy
    if rng.random() < 1.0 / params.racket_switch_mean_ms:
        vy = rng.uniform(-params.racket_speed_max, params.racket_speed_max)
    limit = params.half_size - params.racket_half
    y = state.racket_y + vy * DT_S
    if y > limit:
        y = limit
    elif y < -limit:
        y = -limit
    return y, vy


def step_world(state: WorldState, rng: np.random.Generator,
               params: WorldParams = None) -> Tuple[WorldState, StepOutcome]:
    params = params or WorldParams()
    h = params.half_size
    x = state.ball_x + state.ball_vx * DT_S
    y = state.ball_y + state.ball_vy * DT_S
    vx, vy = state.ball_vx, state.ball_vy
    reward = punishment = False

    if y > h:
        y, vy = 2 * h - y, -vy
    elif y < -h:
        y, vy = -2 * h - y, -vy

    if x > h:
        x, vx = 2 * h - x, -vx
    elif x < -h:
        # ball height where it crossed the racket line
        frac = (-h - state.ball_x) / (x - state.ball_x)
        y_cross = state.ball_y + frac * (state.ball_vy * DT_S)
        if abs(y_cross - state.racket_y) <= params.racket_half:
            reward = True
            x, vx = -2 * h - x, -vx
        else:
            punishment = True
            x, y, vx, vy = reset_ball(rng, params)

    racket_y, racket_vy = _move_racket(state, rng, params)
    return WorldState(x, y, vx, vy, racket_y, racket_vy), StepOutcome(reward, punishment)


def record_episode(seed: int, steps: int, params: WorldParams = None) -> np.ndarray:
    """Run the world for `steps` ms and return one EPISODE_DTYPE row per step (post-step state)."""
    params = params or WorldParams()
    params.validate()
    rng = np.random.default_rng(seed)
    state = initial_state(rng, params)
    record = np.zeros(steps, dtype=EPISODE_DTYPE)
    for t in range(steps):
        state, outcome = step_world(state, rng, params)
        record[t] = (state.ball_x, state.ball_y, state.ball_vx, state.ball_vy,
                     state.racket_y, outcome.reward, outcome.punishment)
    logger.info(f"Recorded {steps} steps: {int(record['reward'].sum())} rewards, "
                f"{int(record['punishment'].sum())} punishments")
    return record


def reward_times(record: np.ndarray) -> np.ndarray:
    return np.flatnonzero(record['reward'])


def episode_summary(record: np.ndarray) -> Dict[str, float]:
    rewards = reward_times(record)
    return {
        'steps': int(len(record)),
        'rewards': int(len(rewards)),
        'punishments': int(record['punishment'].sum()),
        'hit_rate': float(len(rewards) / max(1, len(rewards) + int(record['punishment'].sum()))),
        'mean_inter_reward_ms': float(np.diff(rewards).mean()) if len(rewards) > 1 else None,
    }


def save_episode(record: np.ndarray, path: str):
    np.save(path, record, allow_pickle=False)


def load_episode(path: str) -> np.ndarray:
    record = np.load(path, allow_pickle=False)
    if record.dtype != EPISODE_DTYPE:
        raise ValueError(f"{path} is not an episode record (dtype {record.dtype})")
    return record

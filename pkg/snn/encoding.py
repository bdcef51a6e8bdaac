"""
Rate-coded sensory input: 133 nodes in six sections.

    ball_x      0-29    30 position bins across the box
    ball_y     30-59
    vel_x      60-68    9 equal-occupancy velocity bins
    vel_y      69-77
    racket_y   78-107
    close_zone 108-132  5x5 grid of a 3x3 cm field anchored to the racket

At any moment one node per section is active (close_zone may have none).
An active node fires at 300 Hz, realized as Bernoulli(0.3) per 1 ms step.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Set, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SECTIONS = (
    ('ball_x', 0, 30),
    ('ball_y', 30, 30),
    ('vel_x', 60, 9),
    ('vel_y', 69, 9),
    ('racket_y', 78, 30),
    ('close_zone', 108, 25),
)
INPUT_COUNT = sum(size for _, _, size in SECTIONS)
OFFSETS = {name: offset for name, offset, _ in SECTIONS}

HALF_SIZE = 5.0
POSITION_BIN = 2 * HALF_SIZE / 30
ZONE_FIELD = 3.0
ZONE_GRID = 5
ZONE_CELL = ZONE_FIELD / ZONE_GRID
VELOCITY_BINS = 9
MIN_CALIBRATION_SAMPLES = 10_000
CHUNK_STEPS = 100_000


class CalibrationError(ValueError):
    pass


@dataclass
class EncoderLayout:
    vel_x_edges: np.ndarray
    vel_y_edges: np.ndarray
    rate_hz: float = 300.0
    deterministic_rate: bool = False

    def __post_init__(self):
        self.vel_x_edges = np.asarray(self.vel_x_edges, dtype=np.float64)
        self.vel_y_edges = np.asarray(self.vel_y_edges, dtype=np.float64)
        for name, edges in (('vel_x_edges', self.vel_x_edges), ('vel_y_edges', self.vel_y_edges)):
            if edges.shape != (VELOCITY_BINS - 1,):
                raise CalibrationError(f"{name} needs {VELOCITY_BINS - 1} edges, got {edges.shape}")
            if np.any(np.diff(edges) <= 0):
                raise CalibrationError(f"{name} must be strictly increasing")

    @property
    def fire_probability(self) -> float:
        return self.rate_hz / 1000.0

    def to_dict(self) -> dict:
        return {
            'vel_x_edges': self.vel_x_edges.tolist(),
            'vel_y_edges': self.vel_y_edges.tolist(),
            'sections': {name: {'offset': offset, 'size': size} for name, offset, size in SECTIONS},
        }


def section_names() -> List[str]:
    """Section name of every input node, by node index."""
    names = []
    for name, _, size in SECTIONS:
        names.extend([name] * size)
    return names


def _position_bin(value):
    idx = np.floor((np.asarray(value) + HALF_SIZE) / POSITION_BIN).astype(np.int64)
    return np.clip(idx, 0, 29)


def active_nodes(ball_x, ball_y, vx, vy, racket_y, layout: EncoderLayout) -> np.ndarray:
    """
    Active node per section for scalar or array states. Shape (..., 6);
    the close_zone column is -1 when the ball is outside the racket field.
    Bins are half-open [lo, hi): a value on an edge belongs to the upper bin.
    """
    ball_x = np.asarray(ball_x, dtype=np.float64)
    ball_y = np.asarray(ball_y, dtype=np.float64)
    racket_y = np.asarray(racket_y, dtype=np.float64)

    col = np.floor((ball_x + HALF_SIZE) / ZONE_CELL).astype(np.int64)
    row = np.floor((ball_y - (racket_y - ZONE_FIELD / 2)) / ZONE_CELL).astype(np.int64)
    inside = (col >= 0) & (col < ZONE_GRID) & (row >= 0) & (row < ZONE_GRID)
    zone = np.where(inside, OFFSETS['close_zone'] + row * ZONE_GRID + col, -1)

    return np.stack([
        OFFSETS['ball_x'] + _position_bin(ball_x),
        OFFSETS['ball_y'] + _position_bin(ball_y),
        OFFSETS['vel_x'] + np.searchsorted(layout.vel_x_edges, vx, side='right'),
        OFFSETS['vel_y'] + np.searchsorted(layout.vel_y_edges, vy, side='right'),
        OFFSETS['racket_y'] + _position_bin(racket_y),
        zone,
    ], axis=-1)


def _deterministic_fires(t: int, rate_hz: float) -> bool:
    per_ms = rate_hz / 1000.0
    return int((t + 1) * per_ms) > int(t * per_ms)


def encode_state(state, rng: np.random.Generator, t: int, layout: EncoderLayout) -> Set[int]:
    """Input node ids firing at step t for a WorldState."""
    nodes = active_nodes(state.ball_x, state.ball_y, state.ball_vx, state.ball_vy,
                         state.racket_y, layout)
    if layout.deterministic_rate:
        fires = np.full(len(nodes), _deterministic_fires(t, layout.rate_hz))
    else:
        fires = rng.random(len(nodes)) < layout.fire_probability
    return {int(n) for n, f in zip(nodes, fires) if f and n >= 0}


def encoded_stream(record: np.ndarray, layout: EncoderLayout, rng: np.random.Generator,
                   steps: int = None) -> Iterator[Tuple[Set[int], bool]]:
    """
    Yield (firing input ids, reward flag) for every step of a recorded episode.
    Works in chunks so the full active-node table is never materialized.
    """
    steps = len(record) if steps is None else min(steps, len(record))
    for start in range(0, steps, CHUNK_STEPS):
        chunk = record[start:min(start + CHUNK_STEPS, steps)]
        nodes = active_nodes(chunk['ball_x'], chunk['ball_y'], chunk['vx'], chunk['vy'],
                             chunk['racket_y'], layout)
        if layout.deterministic_rate:
            t = np.arange(start, start + len(chunk))
            per_ms = layout.fire_probability
            fires = ((t + 1) * per_ms).astype(np.int64) > (t * per_ms).astype(np.int64)
            fires = np.repeat(fires[:, None], nodes.shape[1], axis=1)
        else:
            fires = rng.random(nodes.shape) < layout.fire_probability
        fires &= nodes >= 0
        rewards = chunk['reward']
        for i in range(len(chunk)):
            yield set(nodes[i][fires[i]].tolist()), bool(rewards[i])


def firing_matrix(record: np.ndarray, layout: EncoderLayout, rng: np.random.Generator,
                  steps: int = None) -> np.ndarray:
    """Binary (steps x 133) matrix of input firings, drawn exactly like encoded_stream."""
    steps = len(record) if steps is None else min(steps, len(record))
    out = np.zeros((steps, INPUT_COUNT), dtype=np.uint8)
    for t, (fired, _) in enumerate(encoded_stream(record, layout, rng, steps)):
        if fired:
            out[t, list(fired)] = 1
    return out


def state_matrix(record: np.ndarray, layout: EncoderLayout, steps: int = None) -> np.ndarray:
    """Binary (steps x 133) matrix of the nodes active at each step, before rate coding."""
    steps = len(record) if steps is None else min(steps, len(record))
    out = np.zeros((steps, INPUT_COUNT), dtype=np.uint8)
    for start in range(0, steps, CHUNK_STEPS):
        chunk = record[start:min(start + CHUNK_STEPS, steps)]
        nodes = active_nodes(chunk['ball_x'], chunk['ball_y'], chunk['vx'], chunk['vy'],
                             chunk['racket_y'], layout)
        rows = np.repeat(np.arange(start, start + len(chunk)), nodes.shape[1])
        cols = nodes.ravel()
        on = cols >= 0
        out[rows[on], cols[on]] = 1
    return out


def _equal_mass_edges(values: np.ndarray, name: str) -> np.ndarray:
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = len(values)
    cuts = [int(round(k * n / VELOCITY_BINS)) for k in range(1, VELOCITY_BINS)]
    edges = np.array([(values[i - 1] + values[i]) / 2 for i in cuts])
    if np.any(np.diff(edges) <= 0) or values[0] == values[-1]:
        raise CalibrationError(f"{name}: degenerate distribution, cannot form {VELOCITY_BINS} bins")
    return edges


def calibrate_velocity_edges(sample: np.ndarray,
                             min_samples: int = MIN_CALIBRATION_SAMPLES) -> Tuple[np.ndarray, np.ndarray]:
    """
    Edges splitting each velocity component into 9 bins of equal occupancy.
    `sample` is an (n, 2) array of (vx, vy); each edge sits midway between
    the order statistics on either side of a k/9 cut.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise CalibrationError(f"sample must be (n, 2), got {sample.shape}")
    if len(sample) < min_samples:
        raise CalibrationError(f"sample too small: {len(sample)} < {min_samples}")
    return _equal_mass_edges(sample[:, 0], 'vel_x'), _equal_mass_edges(sample[:, 1], 'vel_y')


def calibrate_from_episode(record: np.ndarray) -> EncoderLayout:
    edges_x, edges_y = calibrate_velocity_edges(np.column_stack([record['vx'], record['vy']]))
    logger.info(f"Calibrated velocity edges from {len(record)} steps")
    return EncoderLayout(edges_x, edges_y)


def bin_occupancy(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts = np.bincount(np.searchsorted(edges, values, side='right'), minlength=len(edges) + 1)
    return counts / counts.sum()


def save_calibration(layout: EncoderLayout, path: str):
    with open(path, 'w') as f:
        json.dump(layout.to_dict(), f, indent=2, sort_keys=True)


def load_calibration(path: str, rate_hz: float = 300.0, deterministic_rate: bool = False) -> EncoderLayout:
    with open(path) as f:
        doc = json.load(f)
    try:
        return EncoderLayout(doc['vel_x_edges'], doc['vel_y_edges'],
                             rate_hz=rate_hz, deterministic_rate=deterministic_rate)
    except KeyError as e:
        raise CalibrationError(f"{path}: missing {e}") from e

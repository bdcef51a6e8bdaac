import logging

import numpy as np
import pytest

from snn.prediction import (PredictionTrace, UndefinedScoreError, decode, ground_truth, last_window,
                            r_squared, r_squared_arrays, score_episode)


@pytest.mark.parametrize('gap, expected', [(50, 3), (250, 1), (450, 0), (0, 3), (100, 2)])
def test_ground_truth_levels(gap, expected):
    assert ground_truth([gap], 1, 3, 100)[0] == expected


def test_ground_truth_after_last_reward_is_zero():
    P = ground_truth([10], 50, 3, 100)
    assert P[10] == 3
    assert not P[11:].any()


def test_ground_truth_steps_up_toward_reward():
    P = ground_truth([1000], 1001, 3, 100)
    assert P[0] == 0
    assert P[700] == 0 and P[701] == 1
    assert P[800] == 1 and P[801] == 2
    assert P[900] == 2 and P[901] == 3
    assert np.all(np.diff(P) >= 0)


def test_no_spikes_no_rewards_decodes_to_zero():
    assert not decode([], [], 500, 3, 100).any()


def test_single_spike_holds_for_one_interval():
    p_star = decode([(10, 2)], [], 300, 3, 100)
    assert not p_star[:10].any()
    assert np.all(p_star[10:111] == 2)
    assert not p_star[111:].any()


def test_reward_resets_held_value():
    p_star = decode([(30, 3)], [40], 100, 3, 100)
    assert p_star[40] == 3
    assert p_star[41] == 0


def test_simultaneous_spikes_take_largest_value():
    p_star = decode([(5, 1), (5, 3), (5, 2)], [], 20, 3, 100)
    assert p_star[5] == 3


def test_decode_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        decode([(5, 4)], [], 20, 3, 100)


def _oracle(spikes, rewards, horizon, N, L):
    """Per-step re-derivation scanning every spike and reward directly."""
    out = np.zeros(horizon, dtype=np.int64)
    for t in range(horizon - 1):
        if any(r == t for r in rewards):
            value = 0
        elif any(T == t + 1 for T, _ in spikes):
            value = max(n for T, n in spikes if T == t + 1)
        elif all(T <= t - L or T > t + 1 for T, _ in spikes):
            value = 0
        else:
            value = out[t]
        out[t + 1] = value
    return out


def test_decode_matches_oracle():
    rng = np.random.default_rng(17)
    N, L = 3, 100
    for _ in range(1000):
        horizon = int(rng.integers(2, 2001))
        rewards = sorted(set(rng.integers(0, horizon, size=rng.integers(0, 11)).tolist()))
        spikes = [(int(T), int(n)) for T, n in zip(rng.integers(0, horizon, size=rng.integers(0, 21)),
                                                 rng.integers(1, N + 1, size=21))]
        np.testing.assert_array_equal(decode(spikes, rewards, horizon, N, L),
                                      _oracle(spikes, rewards, horizon, N, L))


def test_decode_is_pure():
    spikes, rewards = [(3, 1), (90, 2)], [60]
    a = decode(spikes, rewards, 400, 3, 100)
    b = decode(spikes, rewards, 400, 3, 100)
    np.testing.assert_array_equal(a, b)


def test_r_squared_hand_example():
    trace = PredictionTrace(np.array([0, 1, 2, 3]), np.array([0, 1, 1, 3]), 3, 100)
    assert r_squared(trace) == pytest.approx(0.85)


def test_r_squared_trivial_cases():
    P = np.array([0, 1, 2, 3, 3, 0])
    assert r_squared(PredictionTrace(P, P.copy(), 3, 100)) == 1.0
    assert r_squared(PredictionTrace(P, np.full(6, 2), 3, 100)) == pytest.approx(0.0, abs=1e-12)


def test_r_squared_shift_invariant():
    rng = np.random.default_rng(1)
    P = rng.integers(0, 4, 500)
    Q = rng.integers(0, 4, 500)
    assert r_squared_arrays(P + 7, Q + 7) == pytest.approx(r_squared_arrays(P, Q))


def test_r_squared_window_and_undefined():
    trace = PredictionTrace(np.array([0, 0, 0, 1, 2]), np.array([1, 1, 1, 1, 2]), 3, 100)
    assert r_squared(trace, (2, 5)) == pytest.approx(1 - np.var([1, 0, 0]) / np.var([0, 1, 2]))
    with pytest.raises(UndefinedScoreError):
        r_squared(trace, (0, 3))
    with pytest.raises(UndefinedScoreError):
        r_squared_arrays([], [])


def test_trace_length_mismatch():
    with pytest.raises(ValueError):
        PredictionTrace(np.zeros(3), np.zeros(4), 3, 100)


def test_trace_frame_columns():
    frame = PredictionTrace(np.array([0, 3]), np.array([0, 2]), 3, 100).to_frame()
    assert list(frame.columns) == ['time_ms', 'P', 'P_star']


def test_score_episode_uses_final_window():
    assert last_window(2000, 600) == (1400, 2000)
    rewards = [1500, 1800]
    trace, r2 = score_episode([(1420, 1), (1750, 3)], rewards, 2000, 3, 100, 600)
    assert len(trace.P) == 2000
    expected = r_squared(trace, (1400, 2000))
    assert r2 == expected


def test_score_episode_logs_the_window(caplog):
    with caplog.at_level(logging.DEBUG, logger='snn.prediction'):
        _, r2 = score_episode([(1420, 1)], [1500, 1800], 2000, 3, 100, 600)
    assert any('over [1400, 2000)' in r.getMessage() for r in caplog.records)
    assert any(f'{r2:.4f}' in r.getMessage() for r in caplog.records)

import numpy as np
import pytest

from snn.encoding import (INPUT_COUNT, OFFSETS, SECTIONS, CalibrationError, EncoderLayout, active_nodes,
                          bin_occupancy, calibrate_velocity_edges, encode_state, encoded_stream,
                          firing_matrix, load_calibration, save_calibration, section_names)
from snn.pingpong import WorldState, record_episode

from conftest import constant_record


def test_layout_blocks():
    assert INPUT_COUNT == 133
    assert [size for _, _, size in SECTIONS] == [30, 30, 9, 9, 30, 25]
    assert OFFSETS['close_zone'] == 108
    assert len(section_names()) == 133


def test_position_bins(layout):
    nodes = active_nodes(-4.9, 0.0, 0.0, 0.0, 0.0, layout)
    assert nodes[0] == 0
    assert active_nodes(4.999, 0.0, 0.0, 0.0, 0.0, layout)[0] == 29
    assert active_nodes(5.0, 0.0, 0.0, 0.0, 0.0, layout)[0] == 29


def test_close_zone_cell(layout):
    nodes = active_nodes(-3.0, 1.0, 0.0, 0.0, 1.0, layout)
    assert nodes[5] == 108 + 2 * 5 + 3


def test_close_zone_empty_outside_field(layout):
    assert active_nodes(2.0, 2.0, 0.0, 0.0, -4.0, layout)[5] == -1


def test_velocity_edge_belongs_to_upper_bin(layout):
    edge = layout.vel_x_edges[3]
    assert active_nodes(0.0, 0.0, edge, 0.0, 0.0, layout)[2] == OFFSETS['vel_x'] + 4
    assert active_nodes(0.0, 0.0, np.nextafter(edge, -np.inf), 0.0, 0.0, layout)[2] == OFFSETS['vel_x'] + 3


def test_one_active_node_per_section(layout, short_episode):
    r = short_episode
    nodes = active_nodes(r['ball_x'], r['ball_y'], r['vx'], r['vy'], r['racket_y'], layout)
    assert nodes.shape == (len(r), 6)
    for column, (_, offset, size) in enumerate(SECTIONS[:5]):
        assert np.all((nodes[:, column] >= offset) & (nodes[:, column] < offset + size))
    zone = nodes[:, 5]
    assert np.all((zone == -1) | ((zone >= 108) & (zone < INPUT_COUNT)))


def test_encode_state_fires_subset_of_active(layout):
    state = WorldState(-3.0, 1.0, 5.0, -2.0, 1.0)
    active = set(active_nodes(-3.0, 1.0, 5.0, -2.0, 1.0, layout).tolist())
    rng = np.random.default_rng(0)
    seen = set()
    for t in range(200):
        fired = encode_state(state, rng, t, layout)
        assert fired <= active
        seen |= fired
    assert seen == active


def test_active_node_rate_near_300_hz(layout):
    steps = 100_000
    counts = firing_matrix(constant_record(steps), layout, np.random.default_rng(4), steps).sum(axis=0)
    active = np.flatnonzero(counts)
    assert len(active) == 5
    rates = counts[active] / (steps / 1000.0)
    assert np.all(np.abs(rates - 300.0) <= 10.0)


def test_deterministic_rate_is_exact():
    layout = EncoderLayout(np.arange(8.0), np.arange(8.0), deterministic_rate=True)
    counts = firing_matrix(constant_record(1000), layout, np.random.default_rng(0), 1000).sum(axis=0)
    assert sorted(counts[counts > 0].tolist()) == [300] * 5


def test_stream_and_matrix_agree(layout, short_episode):
    matrix = firing_matrix(short_episode, layout, np.random.default_rng(7), 2000)
    for t, (fired, reward) in enumerate(encoded_stream(short_episode, layout, np.random.default_rng(7), 2000)):
        assert fired == set(np.flatnonzero(matrix[t]).tolist())
        assert reward == bool(short_episode['reward'][t])


def test_calibration_on_nine_values():
    values = np.repeat(np.arange(1.0, 10.0), 9)
    sample = np.column_stack([values, values[::-1]])
    edges_x, edges_y = calibrate_velocity_edges(sample, min_samples=1)
    np.testing.assert_allclose(edges_x, np.arange(1.5, 9.0))
    np.testing.assert_allclose(edges_y, np.arange(1.5, 9.0))


def test_calibration_at_minimum_size():
    values = np.repeat(np.arange(1.0, 10.0), 1200)
    edges_x, _ = calibrate_velocity_edges(np.column_stack([values, values]))
    np.testing.assert_allclose(edges_x, np.arange(1.5, 9.0))
    occupancy = bin_occupancy(values, edges_x)
    np.testing.assert_allclose(occupancy, np.full(9, 1 / 9))


def test_calibration_rejects_constant_and_small_samples():
    with pytest.raises(CalibrationError):
        calibrate_velocity_edges(np.full((20_000, 2), 3.0))
    with pytest.raises(CalibrationError):
        calibrate_velocity_edges(np.random.default_rng(0).normal(size=(500, 2)))
    with pytest.raises(CalibrationError):
        calibrate_velocity_edges(np.zeros(20_000))


def test_layout_rejects_bad_edges():
    with pytest.raises(CalibrationError):
        EncoderLayout(np.arange(7.0), np.arange(8.0))
    with pytest.raises(CalibrationError):
        EncoderLayout(np.arange(8.0)[::-1], np.arange(8.0))


def test_calibration_file_round_trip(tmp_path, layout):
    path = str(tmp_path / 'cal.json')
    save_calibration(layout, path)
    loaded = load_calibration(path, rate_hz=250.0, deterministic_rate=True)
    np.testing.assert_array_equal(loaded.vel_x_edges, layout.vel_x_edges)
    np.testing.assert_array_equal(loaded.vel_y_edges, layout.vel_y_edges)
    assert loaded.fire_probability == 0.25
    assert loaded.deterministic_rate


@pytest.mark.slow
def test_calibrated_edges_balance_a_fresh_episode():
    from snn.encoding import calibrate_from_episode
    layout = calibrate_from_episode(record_episode(seed=100, steps=1_000_000))
    fresh = record_episode(seed=101, steps=1_000_000)
    for values, edges in ((fresh['vx'], layout.vel_x_edges), (fresh['vy'], layout.vel_y_edges)):
        assert np.all(np.abs(bin_occupancy(values, edges) - 1 / 9) <= 0.02)

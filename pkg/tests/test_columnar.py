import numpy as np
import pytest

from snn.columnar import (EpisodeDiagnostics, EpisodeResult, NetworkBuildError, NetworkParams,
                          SnapshotError, build_network, column_value, from_snapshot, load_snapshot,
                          resource_table, run_episode, save_snapshot, to_snapshot)
from snn.encoding import encoded_stream, section_names
from snn.engine import Role, SynapseKind, step_network

from conftest import make_plasticity


def _params(**kwargs) -> NetworkParams:
    kwargs.setdefault('plasticity', make_plasticity(n_silent=118))
    return NetworkParams(**kwargs)


def _kind_counts(net):
    counts = {kind: 0 for kind in SynapseKind}
    for syn in net.synapses:
        counts[syn.kind] += 1
    return counts


def test_optimum_topology_counts():
    net = build_network(_params())
    roles = [n.role for n in net.neurons]
    assert roles.count(Role.INPUT) == 133
    assert roles.count(Role.TARGET) == 1
    assert len(net.neurons) - 134 == 15
    assert _kind_counts(net)[SynapseKind.PLASTIC] == 399
    for syn in net.synapses:
        assert syn.delay == (3 if syn.kind == SynapseKind.PLASTIC else 1)


@pytest.mark.parametrize('N, sizes', [(3, [1, 1, 1]), (2, [3, 3]), (4, [2, 2, 2, 2]), (3, [1, 4, 2])])
def test_wiring_counts_match_closed_form(N, sizes):
    inputs = 7
    net = build_network(_params(N=N, input_count=inputs, column_sizes=sizes))
    counts = _kind_counts(net)
    assert len(net.neurons) == inputs + 1 + sum(3 * n + 2 for n in sizes)
    assert counts[SynapseKind.PLASTIC] == inputs * sum(sizes)
    assert counts[SynapseKind.FIXED] == sum(3 * n + 1 for n in sizes)
    assert counts[SynapseKind.DOPAMINE] == sum(sizes)
    assert counts[SynapseKind.BLOCKING] == sum(2 * n * (n - 1) + 2 * (N - k) + n
                                               for k, n in enumerate(sizes, start=1))


def test_single_column_has_no_cross_column_links():
    net = build_network(_params(N=1, input_count=5))
    for syn in net.synapses:
        src, dst = net.neurons[syn.source], net.neurons[syn.target]
        if src.column and dst.column:
            assert src.column == dst.column
    blocks = [s for s in net.synapses if s.kind == SynapseKind.BLOCKING]
    assert [(s.source, s.target) for s in blocks] == [(net.columns[1][Role.GATE][0],) * 2]


def test_two_triplets_block_each_other():
    net = build_network(_params(N=1, n0=2, input_count=5))
    col = net.columns[1]
    wta_blocks = [s for s in net.synapses if s.kind == SynapseKind.BLOCKING and s.target in col[Role.WTA]]
    gate_blocks = [s for s in net.synapses if s.kind == SynapseKind.BLOCKING and s.target in col[Role.GATE]
                   and s.source in col[Role.WTA]]
    assert len(wta_blocks) == 2
    assert len(gate_blocks) == 2
    for syn in gate_blocks:
        assert col[Role.WTA].index(syn.source) != col[Role.GATE].index(syn.target)


def test_invalid_params_rejected():
    with pytest.raises(NetworkBuildError):
        build_network(_params(N=0))
    with pytest.raises(NetworkBuildError):
        build_network(_params(init_resource_range=(0.5, 0.1)))
    with pytest.raises(NetworkBuildError):
        build_network(_params(N=2, column_sizes=[1]))


def test_column_values():
    assert [column_value(k, 3) for k in (1, 2, 3)] == [3, 2, 1]
    result = EpisodeResult(secrew_spikes=[(10, 1), (20, 3)],
                           diagnostics=EpisodeDiagnostics(1000, [], [], None, None, None))
    assert result.output_spikes(3) == [(10, 3), (20, 1)]
    assert result.first_secrew_times() == {1: 10, 3: 20}


def test_silent_network_on_zero_input():
    net = build_network(_params())
    result = run_episode(net, [(set(), False)] * 2000, 2000, bin_ms=500)
    assert result.secrew_spikes == []
    assert not result.diagnostics.firing_rate.any()
    assert result.diagnostics.firing_rate.shape == (4, 3)


def test_stream_shorter_than_steps_raises():
    net = build_network(_params(input_count=3))
    with pytest.raises(ValueError):
        run_episode(net, [(set(), False)] * 5, 10)


def test_target_event_potentiates_column_one():
    p = make_plasticity(n_silent=2)
    net = build_network(_params(plasticity=p, N=1, input_count=1, init_resource_range=(0.0, 0.0)))
    l_id = net.columns[1][Role.L][0]
    inp = net.input_ids[0]
    stream = [({inp} if t == 0 else set(), t == 10) for t in range(20)]
    result = run_episode(net, stream, 20, log_spikes=True)

    gate = net.columns[1][Role.GATE][0]
    assert (11, gate, Role.GATE.value, 1) in result.diagnostics.spike_log
    learner = net.learners[l_id]
    assert learner.dopamine_count == 1
    assert learner.resources[0] == pytest.approx(p.d_d_bar)
    assert learner.total_resource() == pytest.approx(0.0, abs=1e-15)


def _force(net, l_id, slot):
    weights = np.zeros_like(net.learners[l_id].weights)
    weights[slot] = 1.0
    net.learners[l_id].weights = weights


def test_first_winner_blocks_the_second_wta():
    net = build_network(_params(N=1, n0=2, input_count=2))
    net.learning = False
    col = net.columns[1]
    _force(net, col[Role.L][0], 0)
    _force(net, col[Role.L][1], 1)

    fired = []
    for t in range(20):
        external = {net.input_ids[0]} if t == 0 else {net.input_ids[1]} if t == 2 else set()
        fired.extend((t, nid) for nid, _ in step_network(net, external, t))

    assert (3, col[Role.L][0]) in fired
    assert (5, col[Role.L][1]) in fired
    assert (4, col[Role.WTA][0]) in fired
    assert all(nid != col[Role.WTA][1] for _, nid in fired)
    assert all(nid != col[Role.GATE][1] for _, nid in fired)


def test_v_spike_blocks_later_secrew():
    block = 100
    net = build_network(_params(N=2, input_count=1))
    net.learning = False
    _force(net, net.columns[1][Role.L][0], 0)
    v1 = net.columns[1][Role.V][0]
    secrew2 = net.columns[2][Role.SECREW][0]

    v_time = None
    for t in range(12):
        for nid, _ in step_network(net, {net.input_ids[0]} if t == 0 else set(), t):
            if nid == v1:
                v_time = t
    assert v_time == 5
    assert net.neurons[secrew2].inactive_until >= v_time + 1 + block


def test_secrew_burst_relays_one_reward_per_window():
    net = build_network(_params(N=2, input_count=1))
    net.learning = False
    _force(net, net.columns[1][Role.L][0], 0)
    secrew1 = net.columns[1][Role.SECREW][0]
    gate2 = net.columns[2][Role.GATE][0]

    secrew_times, gate_times = [], []
    for t in range(260):
        for nid, _ in step_network(net, {net.input_ids[0]} if t % 4 == 0 else set(), t):
            if nid == secrew1:
                secrew_times.append(t)
            elif nid == gate2:
                gate_times.append(t)

    assert secrew_times[:3] == [6, 10, 14]
    assert len(secrew_times) > 60
    # self-block arrives at 8 and lasts N * L = 200 ms
    assert gate_times == [7, 211]


def test_burst_delivers_a_single_dopamine_event_to_the_next_column():
    p = make_plasticity(n_silent=5, w_max=2.0)
    net = build_network(_params(plasticity=p, N=2, input_count=1, init_resource_range=(50.0, 50.0)))
    stream = [({net.input_ids[0]} if t % 4 == 0 else set(), False) for t in range(150)]
    result = run_episode(net, stream, 150)

    assert sum(k == 1 for _, k in result.secrew_spikes) > 30
    assert net.learners[net.columns[2][Role.L][0]].dopamine_count == 1


def test_relay_refractory_is_configurable():
    net = build_network(_params(N=2, input_count=1, relay_refractory=40.0))
    gate = net.columns[2][Role.GATE][0]
    self_blocks = [s for s in net.synapses if s.kind == SynapseKind.BLOCKING and s.source == s.target]
    assert len(self_blocks) == 2
    assert all(s.weight == 40.0 for s in self_blocks)
    assert any(s.source == gate for s in self_blocks)
    with pytest.raises(NetworkBuildError):
        build_network(_params(relay_refractory=0.0))


def _drive(seed: int, steps: int, inputs: int):
    rng = np.random.default_rng(seed)
    return [(set(np.flatnonzero(rng.random(inputs) < 0.3).tolist()), t % 150 == 149) for t in range(steps)]


def test_snapshot_round_trip_resumes_identically(tmp_path):
    params = _params(plasticity=make_plasticity(n_silent=5), N=2, n0=2, input_count=10,
                     init_resource_range=(0.5, 1.0), seed=4)
    stream = _drive(9, 1200, 10)
    original = build_network(params)
    first = run_episode(original, stream[:600], 600)
    assert first.diagnostics.firing_rate.any()

    path = str(tmp_path / 'snapshot.json')
    save_snapshot(original, path)
    restored = load_snapshot(path)
    assert to_snapshot(restored) == to_snapshot(original)

    a = run_episode(original, stream[600:], 600)
    b = run_episode(restored, stream[600:], 600)
    assert a.secrew_spikes == b.secrew_spikes
    for l_id, learner in original.learners.items():
        np.testing.assert_array_equal(learner.resources, restored.learners[l_id].resources)


def test_snapshot_version_checked():
    doc = to_snapshot(build_network(_params(input_count=2)))
    doc['version'] = 99
    with pytest.raises(SnapshotError):
        from_snapshot(doc)


def test_identical_seeds_identical_spikes():
    params = _params(plasticity=make_plasticity(n_silent=5), N=2, n0=2, input_count=10,
                     init_resource_range=(0.5, 1.0), seed=1)
    stream = _drive(3, 800, 10)
    a = run_episode(build_network(params), stream, 800, log_spikes=True)
    b = run_episode(build_network(params), stream, 800, log_spikes=True)
    assert a.diagnostics.spike_log == b.diagnostics.spike_log
    assert a.secrew_spikes == b.secrew_spikes


def test_optimum_run_conserves_resource(short_episode, layout):
    net = build_network(_params())
    stream = encoded_stream(short_episode, layout, np.random.default_rng([0, 1]), 5000)
    result = run_episode(net, stream, 5000, bin_ms=1000)
    diag = result.diagnostics
    assert diag.firing_rate.shape == (5, 3)
    assert diag.weight_change.shape == (5, 3)
    assert diag.degenerate_skips == 0
    assert diag.max_resource_drift < 1e-9


def test_resource_table_labels_sections():
    net = build_network(_params())
    rows = resource_table(net, section_names())
    assert len(rows) == 133 * 3
    assert rows[0]['section'] == 'ball_x'
    assert rows[132]['section'] == 'close_zone'
    assert {r['column'] for r in rows} == {1, 2, 3}

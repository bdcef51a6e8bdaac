"""
Columnar network construction, episode driver and snapshot persistence.

Each column k (1 = soonest reward) holds n0 L -> WTA -> GATE triplets plus one
V and one SECREW neuron. A SECREW spike of column k decodes to the proximity
value N + 1 - k. Column 1 is rewarded by the target input node, column k + 1
by the SECREW neuron of column k. Every GATE blocks itself after firing, so a
burst of SECREW spikes passes on a single reward.
"""
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from snn.engine import Network, Role, SynapseKind, step_network
from snn.plasticity import LearningNeuron, PlasticityParams, StabilityState, resource_to_weight

logger = logging.getLogger(__name__)

STRONG_WEIGHT = 1.0
INPUT_DELAY = 3
LINK_DELAY = 1
SNAPSHOT_VERSION = 1


class NetworkBuildError(ValueError):
    pass


class SnapshotError(ValueError):
    pass


@dataclass
class NetworkParams:
    plasticity: PlasticityParams
    N: int = 3
    n0: int = 1
    input_count: int = 133
    tau: float = 1.0
    L: int = 100
    init_resource_range: Optional[Tuple[float, float]] = None
    seed: int = 0
    block_duration: Optional[float] = None
    relay_refractory: Optional[float] = None
    column_sizes: Optional[List[int]] = None

    def validate(self):
        errors = []
        if self.N < 1:
            errors.append(f"N must be >= 1, got {self.N}")
        if self.n0 < 1:
            errors.append(f"n0 must be >= 1, got {self.n0}")
        if self.input_count < 1:
            errors.append(f"input_count must be >= 1, got {self.input_count}")
        if self.L <= 0:
            errors.append(f"L must be > 0, got {self.L}")
        if self.tau < 1:
            errors.append(f"tau must be >= 1 ms, got {self.tau}")
        lo, hi = self.resource_range()
        if lo > hi:
            errors.append(f"init_resource_range lo > hi: ({lo}, {hi})")
        if self.block_ms() <= 0:
            errors.append(f"block_duration must be > 0, got {self.block_duration}")
        if self.relay_ms() <= 0:
            errors.append(f"relay_refractory must be > 0, got {self.relay_refractory}")
        if self.column_sizes is not None:
            if len(self.column_sizes) != self.N:
                errors.append(f"column_sizes needs {self.N} entries, got {len(self.column_sizes)}")
            elif min(self.column_sizes) < 1:
                errors.append("every column needs at least one L neuron")
        try:
            self.plasticity.validate()
        except ValueError as e:
            errors.append(f"plasticity: {e}")
        if errors:
            raise NetworkBuildError('; '.join(errors))

    def resource_range(self) -> Tuple[float, float]:
        if self.init_resource_range is not None:
            return tuple(self.init_resource_range)
        # initial weights stay well below the firing threshold
        return 0.0, 0.1 * (self.plasticity.w_max - self.plasticity.w_min)

    def block_ms(self) -> float:
        return float(self.L if self.block_duration is None else self.block_duration)

    def relay_ms(self) -> float:
        # spans the whole prediction horizon
        return float(self.N * self.L if self.relay_refractory is None else self.relay_refractory)

    def sizes(self) -> List[int]:
        return list(self.column_sizes) if self.column_sizes is not None else [self.n0] * self.N


def column_value(column: int, N: int) -> int:
    """Proximity value claimed by a SECREW spike of `column` (leftmost = N)."""
    return N + 1 - column


def build_network(params: NetworkParams) -> Network:
    params.validate()
    rng = np.random.default_rng(params.seed)
    net = Network()
    block = params.block_ms()
    relay = params.relay_ms()
    lo, hi = params.resource_range()

    net.input_ids = [net.add_neuron(Role.INPUT) for _ in range(params.input_count)]
    net.target_id = net.add_neuron(Role.TARGET)

    for k, size in enumerate(params.sizes(), start=1):
        col = {
            Role.L: [net.add_neuron(Role.L, k, params.tau) for _ in range(size)],
            Role.WTA: [net.add_neuron(Role.WTA, k) for _ in range(size)],
            Role.GATE: [net.add_neuron(Role.GATE, k) for _ in range(size)],
            Role.V: [net.add_neuron(Role.V, k)],
            Role.SECREW: [net.add_neuron(Role.SECREW, k)],
        }
        net.columns[k] = col

    for k, col in net.columns.items():
        v, secrew = col[Role.V][0], col[Role.SECREW][0]
        for i, l_id in enumerate(col[Role.L]):
            resources = rng.uniform(lo, hi, size=params.input_count)
            net.learners[l_id] = LearningNeuron(params.plasticity, resources)
            for slot, inp in enumerate(net.input_ids):
                net.connect(inp, l_id, SynapseKind.PLASTIC, 0.0, INPUT_DELAY, slot=slot)

            wta, gate = col[Role.WTA][i], col[Role.GATE][i]
            net.connect(l_id, wta, SynapseKind.FIXED, STRONG_WEIGHT, LINK_DELAY)
            for j, other in enumerate(col[Role.WTA]):
                if j != i:
                    net.connect(wta, other, SynapseKind.BLOCKING, block, LINK_DELAY)
                    net.connect(wta, col[Role.GATE][j], SynapseKind.BLOCKING, block, LINK_DELAY)
            net.connect(wta, v, SynapseKind.FIXED, STRONG_WEIGHT, LINK_DELAY)
            net.connect(gate, l_id, SynapseKind.DOPAMINE, 0.0, LINK_DELAY)
            net.connect(gate, gate, SynapseKind.BLOCKING, relay, LINK_DELAY)

        net.connect(v, secrew, SynapseKind.FIXED, STRONG_WEIGHT, LINK_DELAY)
        for j in range(k + 1, params.N + 1):
            later_secrew = net.columns[j][Role.SECREW][0]
            net.connect(v, later_secrew, SynapseKind.BLOCKING, block, LINK_DELAY)
            net.connect(secrew, later_secrew, SynapseKind.BLOCKING, block, LINK_DELAY)
        if k + 1 in net.columns:
            for gate in net.columns[k + 1][Role.GATE]:
                net.connect(secrew, gate, SynapseKind.FIXED, STRONG_WEIGHT, LINK_DELAY)

    for gate in net.columns[1][Role.GATE]:
        net.connect(net.target_id, gate, SynapseKind.FIXED, STRONG_WEIGHT, LINK_DELAY)

    logger.info(f"Built network: {len(net.neurons)} nodes, {len(net.synapses)} synapses, "
                f"{len(net.learners)} L neurons")
    return net


def l_neurons(net: Network) -> List[int]:
    """L neuron ids ordered by column then position."""
    return [l_id for k in sorted(net.columns) for l_id in net.columns[k][Role.L]]


@dataclass
class EpisodeDiagnostics:
    bin_ms: int
    l_ids: List[int]
    l_columns: List[int]
    firing_rate: np.ndarray      # bins x L neurons, Hz
    weight_change: np.ndarray    # bins x L neurons, sum |dw|
    stability: np.ndarray        # bins x L neurons, sampled at bin end
    degenerate_skips: int = 0
    max_resource_drift: float = 0.0
    spike_log: List[Tuple[int, int, str, int]] = field(default_factory=list)


@dataclass
class EpisodeResult:
    secrew_spikes: List[Tuple[int, int]]   # (time_ms, column)
    diagnostics: EpisodeDiagnostics

    def output_spikes(self, N: int) -> List[Tuple[int, int]]:
        return [(t, column_value(k, N)) for t, k in self.secrew_spikes]

    def first_secrew_times(self) -> Dict[int, int]:
        first: Dict[int, int] = {}
        for t, k in self.secrew_spikes:
            first.setdefault(k, t)
        return first


def run_episode(net: Network, env_stream: Iterable[Tuple[Set[int], bool]], steps: int,
                learning: bool = True, bin_ms: int = 10_000, log_spikes: bool = False) -> EpisodeResult:
    """
    Drive the network for `steps` ms. Each stream item is (input node ids
    firing now, target-event flag); a flagged step fires the target node.
    Plasticity runs inside the engine when `learning` is on.
    """
    net.learning = learning
    ids = l_neurons(net)
    index = {l_id: i for i, l_id in enumerate(ids)}
    n_bins = max(1, math.ceil(steps / bin_ms))
    counts = np.zeros((n_bins, len(ids)))
    weight_change = np.zeros((n_bins, len(ids)))
    stability = np.zeros((n_bins, len(ids)))
    secrew_spikes: List[Tuple[int, int]] = []
    spike_log: List[Tuple[int, int, str, int]] = []
    neurons = net.neurons
    start = net.time + 1

    stream = iter(env_stream)
    for step in range(steps):
        t = start + step
        try:
            inputs, target = next(stream)
        except StopIteration:
            raise ValueError(f"environment stream ended after {step} of {steps} steps")
        external = set(inputs)
        if target:
            external.add(net.target_id)
        fired = step_network(net, external, t)

        b = step // bin_ms
        for nid, role in fired:
            if role == Role.L:
                counts[b, index[nid]] += 1
            elif role == Role.SECREW:
                secrew_spikes.append((t, neurons[nid].column))
            if log_spikes and role not in (Role.INPUT,):
                spike_log.append((t, nid, role.value, neurons[nid].column))

        if step % bin_ms == bin_ms - 1 or step == steps - 1:
            for i, l_id in enumerate(ids):
                learner = net.learners[l_id]
                weight_change[b, i] = learner.take_weight_change()
                stability[b, i] = learner.stability.s

    widths = np.full(n_bins, float(bin_ms))
    widths[-1] = steps - bin_ms * (n_bins - 1)
    learners = [net.learners[l_id] for l_id in ids]
    diagnostics = EpisodeDiagnostics(
        bin_ms=bin_ms,
        l_ids=ids,
        l_columns=[neurons[l_id].column for l_id in ids],
        firing_rate=counts / (widths[:, None] / 1000.0),
        weight_change=weight_change,
        stability=stability,
        degenerate_skips=sum(l.degenerate_skips for l in learners),
        max_resource_drift=max((l.resource_drift() for l in learners), default=0.0),
        spike_log=spike_log,
    )
    if diagnostics.degenerate_skips:
        logger.warning(f"{diagnostics.degenerate_skips} conservation steps skipped (no compensation pool)")
    return EpisodeResult(secrew_spikes=secrew_spikes, diagnostics=diagnostics)


# =============================================================================
# SNAPSHOTS
# =============================================================================

def _time_or_none(value: Optional[float]):
    if value is None or math.isinf(value):
        return None
    return value


def to_snapshot(net: Network) -> Dict[str, Any]:
    """Structured description of the network, enough to resume or run inference-only."""
    learners = {}
    for l_id, learner in net.learners.items():
        learners[str(l_id)] = {
            'params': vars(learner.params),
            'resources': learner.resources.tolist(),
            'last_arrival': [_time_or_none(x) for x in learner.last_arrival.tolist()],
            'stability': learner.stability.s,
            'stability_enabled': learner.stability.enabled,
            'last_post_spike': learner.tracker.last_post_spike,
            'current_tss_onset': learner.tracker.current_tss_onset,
            'depressed_this_tss': np.flatnonzero(learner.tracker.depressed_this_tss).tolist(),
            'initial_total': learner.initial_total,
        }
    return {
        'version': SNAPSHOT_VERSION,
        'time': net.time,
        'input_ids': net.input_ids,
        'target_id': net.target_id,
        'neurons': [
            {'id': i, 'role': n.role.value, 'column': n.column, 'tau': n.tau,
             'u': n.u, 'inactive_until': n.inactive_until}
            for i, n in enumerate(net.neurons)
        ],
        'synapses': [
            {'source': s.source, 'target': s.target, 'kind': s.kind.value, 'delay': s.delay,
             'weight': s.weight, 'slot': s.slot}
            for s in net.synapses
        ],
        'learners': learners,
        'pending': {str(at): sids for at, sids in sorted(net.pending.items())},
    }


def from_snapshot(doc: Dict[str, Any]) -> Network:
    if doc.get('version') != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version: {doc.get('version')}")
    try:
        net = Network()
        for n in doc['neurons']:
            nid = net.add_neuron(Role(n['role']), n['column'], n['tau'])
            net.neurons[nid].u = n['u']
            net.neurons[nid].inactive_until = n['inactive_until']
            if n['u'] != 0.0:
                net.charged.add(nid)
            if nid != n['id']:
                raise SnapshotError(f"neuron ids must be dense and ordered, got {n['id']} at {nid}")
        for s in doc['synapses']:
            net.connect(s['source'], s['target'], SynapseKind(s['kind']), s['weight'], s['delay'], s['slot'])
        for key, item in doc['learners'].items():
            params = PlasticityParams(**item['params'])
            resources = np.asarray(item['resources'], dtype=np.float64)
            n_connected = len(item['last_arrival'])
            if len(resources) != n_connected + params.n_silent:
                raise SnapshotError(f"learner {key}: resource vector does not match synapse counts")
            learner = LearningNeuron(params, resources[:n_connected])
            learner.resources = resources
            learner.weights = resource_to_weight(resources[:n_connected], params)
            learner.last_arrival = np.array(
                [-math.inf if x is None else x for x in item['last_arrival']], dtype=np.float64)
            learner.stability = StabilityState(s=item['stability'], enabled=item['stability_enabled'])
            learner.tracker.last_post_spike = item['last_post_spike']
            learner.tracker.current_tss_onset = item['current_tss_onset']
            learner.tracker.depressed_this_tss[item['depressed_this_tss']] = True
            learner.initial_total = item['initial_total']
            net.learners[int(key)] = learner
        net.input_ids = list(doc['input_ids'])
        net.target_id = doc['target_id']
        net.time = doc['time']
        net.pending = defaultdict(list, {int(at): list(sids) for at, sids in doc['pending'].items()})
    except (KeyError, TypeError) as e:
        raise SnapshotError(f"malformed snapshot: {e}") from e

    for nid, n in enumerate(net.neurons):
        if n.column:
            net.columns.setdefault(n.column, {r: [] for r in
                                              (Role.L, Role.WTA, Role.GATE, Role.V, Role.SECREW)})
            net.columns[n.column][n.role].append(nid)
    return net


def save_snapshot(net: Network, path: str):
    with open(path, 'w') as f:
        json.dump(to_snapshot(net), f, indent=1, sort_keys=True)


def load_snapshot(path: str) -> Network:
    with open(path) as f:
        return from_snapshot(json.load(f))


def resource_table(net: Network, section_of: Sequence[str]) -> List[Dict[str, Any]]:
    """Rows of (column, neuron, synapse_index, section, resource, weight) for every L neuron."""
    rows = []
    for l_id in l_neurons(net):
        learner = net.learners[l_id]
        column = net.neurons[l_id].column
        for idx in range(learner.n_connected):
            rows.append({
                'column': column,
                'neuron_id': l_id,
                'synapse_index': idx,
                'section': section_of[idx] if idx < len(section_of) else '',
                'resource': float(learner.resources[idx]),
                'weight': float(learner.weights[idx]),
            })
    return rows

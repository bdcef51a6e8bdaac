"""
Discrete-time spiking substrate.

One call to step_network advances the whole network by exactly 1 ms:
blocking deliveries first, then dopamine, then excitatory deliveries and
membrane updates, then firing and spike scheduling.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Protocol, Sequence, Set, Tuple

FIRE_THRESHOLD = 1.0


class Role(str, Enum):
    INPUT = 'InputNode'
    L = 'L'
    WTA = 'WTA'
    GATE = 'GATE'
    V = 'V'
    SECREW = 'SECREW'
    TARGET = 'TargetInput'


class SynapseKind(str, Enum):
    PLASTIC = 'PlasticExcitatory'
    FIXED = 'FixedExcitatory'
    BLOCKING = 'Blocking'
    DOPAMINE = 'Dopamine'


EXOGENOUS_ROLES = (Role.INPUT, Role.TARGET)


@dataclass
class NeuronState:
    """Membrane state of one network node. Input nodes carry one too but never integrate."""
    role: Role
    tau: float = 1.0
    u: float = 0.0
    inactive_until: float = 0.0
    column: int = 0


@dataclass
class Synapse:
    """
    A delta synapse.

    For Blocking synapses `weight` is the block duration in ms. Plastic
    synapses keep their resource and weight in the target's learner;
    `slot` is the index into that learner's synapse vector.
    """
    source: int
    target: int
    kind: SynapseKind
    weight: float
    delay: int
    slot: int = -1


@dataclass(frozen=True)
class SpikeEvent:
    arrival_time: int
    synapse: int


class Learner(Protocol):
    """What the engine needs from a plastic neuron's learning state."""
    weights: Sequence[float]

    def record_arrival(self, slot: int, t: int) -> None: ...

    def receive_dopamine(self, t: int) -> None: ...

    def post_spike(self, t: int) -> None: ...


@dataclass
class Network:
    neurons: List[NeuronState] = field(default_factory=list)
    synapses: List[Synapse] = field(default_factory=list)
    outgoing: List[List[int]] = field(default_factory=list)
    learners: Dict[int, Learner] = field(default_factory=dict)
    # column index -> role -> neuron ids, filled by the builder
    columns: Dict[int, Dict[Role, List[int]]] = field(default_factory=dict)
    input_ids: List[int] = field(default_factory=list)
    target_id: Optional[int] = None
    learning: bool = True
    pending: Dict[int, List[int]] = field(default_factory=lambda: defaultdict(list))
    charged: Set[int] = field(default_factory=set)
    time: int = -1

    def add_neuron(self, role: Role, column: int = 0, tau: float = 1.0) -> int:
        if tau < 1:
            raise ValueError(f"tau must be >= 1 ms, got {tau}")
        self.neurons.append(NeuronState(role=role, tau=tau, column=column))
        self.outgoing.append([])
        return len(self.neurons) - 1

    def connect(self, source: int, target: int, kind: SynapseKind,
                weight: float, delay: int = 1, slot: int = -1) -> int:
        if delay < 1:
            raise ValueError(f"delay must be >= 1 ms, got {delay}")
        if kind == SynapseKind.BLOCKING and weight <= 0:
            raise ValueError(f"block duration must be > 0, got {weight}")
        if kind == SynapseKind.FIXED and weight < FIRE_THRESHOLD:
            raise ValueError(f"fixed excitatory weight must be >= {FIRE_THRESHOLD}, got {weight}")
        self.synapses.append(Synapse(source, target, kind, float(weight), int(delay), slot))
        sid = len(self.synapses) - 1
        self.outgoing[source].append(sid)
        return sid

    def pending_events(self) -> List[SpikeEvent]:
        return [SpikeEvent(at, sid) for at in sorted(self.pending) for sid in self.pending[at]]


def advance_neuron(state: NeuronState, incoming: Sequence[float], t: int) -> Tuple[NeuronState, bool]:
    """
    Advance one neuron by one step (in place).

    Decay uses the forward-Euler factor max(0, 1 - 1/tau), so tau = 1 zeroes
    the potential every step. Increments are ignored while t < inactive_until.
    """
    decay = 1.0 - 1.0 / state.tau
    state.u = state.u * decay if decay > 0.0 else 0.0
    if t < state.inactive_until:
        return state, False
    if incoming:
        state.u += sum(incoming)
    if state.u >= FIRE_THRESHOLD:
        state.u = 0.0
        return state, True
    return state, False


def apply_block(state: NeuronState, duration: float, t: int) -> NeuronState:
    """Make the neuron ignore input until t + duration; never shortens an existing block."""
    state.inactive_until = max(state.inactive_until, t + duration)
    return state


def step_network(network: Network, external_spikes: Set[int], t: int) -> List[Tuple[int, Role]]:
    """
    Advance the network to time t and return the (neuron id, role) pairs that fired,
    in ascending id order.
    """
    if t != network.time + 1:
        raise ValueError(f"step_network expects t={network.time + 1}, got {t}")
    network.time = t

    neurons = network.neurons
    synapses = network.synapses
    learners = network.learners
    incoming: Dict[int, List[float]] = {}

    deliveries = network.pending.pop(t, None)
    if deliveries:
        dopamine_targets = set()
        excitatory = []
        for sid in deliveries:
            syn = synapses[sid]
            if syn.kind == SynapseKind.BLOCKING:
                apply_block(neurons[syn.target], syn.weight, t)
            elif syn.kind == SynapseKind.DOPAMINE:
                dopamine_targets.add(syn.target)
            else:
                excitatory.append(syn)

        for target in sorted(dopamine_targets):
            learner = learners.get(target)
            if learner is not None and network.learning:
                learner.receive_dopamine(t)

        for syn in excitatory:
            if syn.kind == SynapseKind.PLASTIC:
                learner = learners[syn.target]
                learner.record_arrival(syn.slot, t)
                w = float(learner.weights[syn.slot])
            else:
                w = syn.weight
            incoming.setdefault(syn.target, []).append(w)

    fired: List[int] = []
    for nid in sorted(network.charged.union(incoming)):
        state = neurons[nid]
        if state.role in EXOGENOUS_ROLES:
            continue
        _, did_fire = advance_neuron(state, incoming.get(nid, ()), t)
        if did_fire:
            fired.append(nid)
        if state.u != 0.0:
            network.charged.add(nid)
        else:
            network.charged.discard(nid)

    for nid in external_spikes:
        if neurons[nid].role not in EXOGENOUS_ROLES:
            raise ValueError(f"neuron {nid} is not an input node")
    fired.extend(external_spikes)
    fired.sort()

    pending = network.pending
    for nid in fired:
        for sid in network.outgoing[nid]:
            pending[t + synapses[sid].delay].append(sid)

    if network.learning:
        for nid in fired:
            learner = learners.get(nid)
            if learner is not None:
                learner.post_spike(t)

    return [(nid, neurons[nid].role) for nid in fired]

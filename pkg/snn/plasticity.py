"""
Weight dynamics of the learning (L) neurons.

Plasticity acts on an unbounded synaptic resource W; the effective weight is
a saturating function of W. Two rules modify W:
  - anti-Hebbian depression, bound to tight postsynaptic spike sequences (TSS)
  - dopamine potentiation, triggered by a spike on the dopamine synapse
Both are attenuated by the neuron's stability, and every change is
compensated so the neuron's total resource (connected + silent) is constant.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NEVER = -math.inf


@dataclass
class PlasticityParams:
    w_min: float
    w_max: float
    d_h_bar: float
    d_d_bar: float
    d_s: float
    isi_max: float
    t_h: float
    t_p: float
    n_silent: int
    stability_enabled: bool = True

    @classmethod
    def from_hyperparameters(cls, *, w_min: float, w_max: float, d_h_bar: float, r_s: float,
                             tau: float, interval_ms: float, n_silent: int) -> 'PlasticityParams':
        """Derive the full rule set from the searched hyperparameters (d_s = r_s * d_h_bar)."""
        params = cls(
            w_min=w_min,
            w_max=w_max,
            d_h_bar=d_h_bar,
            d_d_bar=d_h_bar,
            d_s=abs(r_s) * d_h_bar,
            isi_max=interval_ms,
            t_h=3 * tau,
            t_p=interval_ms + 3 * tau,
            n_silent=int(n_silent),
            stability_enabled=r_s >= 0,
        )
        params.validate()
        return params

    def validate(self):
        if not self.w_min < 0 < self.w_max:
            raise ValueError(f"need w_min < 0 < w_max, got w_min={self.w_min}, w_max={self.w_max}")
        if self.d_d_bar != self.d_h_bar:
            raise ValueError("dopamine step must equal the anti-Hebbian step")
        if self.isi_max <= 0 or self.t_h < 0 or self.t_p < 0:
            raise ValueError("time windows must be positive")
        if self.n_silent < 0:
            raise ValueError(f"silent synapse count must be >= 0, got {self.n_silent}")


@dataclass
class TssTracker:
    last_post_spike: Optional[float] = None
    current_tss_onset: Optional[float] = None
    # mask over connected synapses; cleared exactly when a new TSS begins
    depressed_this_tss: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass
class StabilityState:
    s: float = 0.0
    enabled: bool = True


def resource_to_weight(W, params: PlasticityParams):
    """w = w_min + (w_max - w_min) * max(W, 0) / ((w_max - w_min) + max(W, 0)); works on arrays."""
    span = params.w_max - params.w_min
    pos = np.maximum(W, 0.0)
    return params.w_min + span * pos / (span + pos)


def effective_rates(s: float, params: PlasticityParams) -> Tuple[float, float]:
    if not params.stability_enabled:
        s = 0.0
    scale = min(2.0 ** -s, 1.0)
    return params.d_h_bar * scale, params.d_d_bar * scale


def on_post_spike(tracker: TssTracker, stability: StabilityState, t: float,
                  params: PlasticityParams) -> Tuple[TssTracker, StabilityState, bool]:
    tss_onset = tracker.last_post_spike is None or t - tracker.last_post_spike > params.isi_max
    if tss_onset:
        tracker.current_tss_onset = t
        tracker.depressed_this_tss[:] = False
        if stability.enabled:
            stability.s -= params.d_s
    tracker.last_post_spike = t
    return tracker, stability, tss_onset


def conserve_total_resource(resources: np.ndarray, changed: np.ndarray,
                            applied_delta: float) -> Tuple[np.ndarray, bool]:
    """
    Spread -applied_delta uniformly over every synapse not changed in the
    triggering step. `resources` holds the connected synapses followed by the
    silent ones; `changed` is a mask over the connected part.

    Returns (resources, skipped); skipped is True in the degenerate case where
    nothing is left to compensate with.
    """
    if applied_delta == 0.0:
        return resources, False
    n_connected = changed.shape[0]
    unchanged = ~changed
    pool = int(unchanged.sum()) + (resources.shape[0] - n_connected)
    if pool == 0:
        logger.warning(f"Every synapse changed and no silent pool: skipping compensation of {applied_delta:.6g}")
        return resources, True
    comp = -applied_delta / pool
    resources[:n_connected][unchanged] += comp
    resources[n_connected:] += comp
    return resources, False


def apply_anti_hebbian(resources: np.ndarray, last_arrival: np.ndarray, tracker: TssTracker,
                       t: float, params: PlasticityParams,
                       stability: StabilityState) -> Tuple[np.ndarray, float, bool]:
    """
    Depress, once per TSS, every synapse that received a spike in
    [tss_onset - t_h, t]. Returns (resources, applied_delta, skipped).
    """
    window_start = tracker.current_tss_onset - params.t_h
    eligible = (last_arrival >= window_start) & ~tracker.depressed_this_tss
    count = int(eligible.sum())
    if count == 0:
        return resources, 0.0, False
    d_h, _ = effective_rates(stability.s, params)
    n_connected = last_arrival.shape[0]
    resources[:n_connected][eligible] -= d_h
    tracker.depressed_this_tss |= eligible
    resources, skipped = conserve_total_resource(resources, eligible, -d_h * count)
    return resources, -d_h * count, skipped


def apply_dopamine(resources: np.ndarray, last_arrival: np.ndarray, tracker: TssTracker,
                   stability: StabilityState, t: float,
                   params: PlasticityParams) -> Tuple[np.ndarray, StabilityState, float, bool]:
    """
    Potentiate every synapse that received a spike in [t - t_p, t], then
    adjust stability by how well the latest TSS onset anticipated this reward.
    Returns (resources, stability, applied_delta, skipped).
    """
    eligible = last_arrival >= t - params.t_p
    count = int(eligible.sum())
    applied = 0.0
    skipped = False
    if count:
        _, d_d = effective_rates(stability.s, params)
        n_connected = last_arrival.shape[0]
        resources[:n_connected][eligible] += d_d
        applied = d_d * count
        resources, skipped = conserve_total_resource(resources, eligible, applied)

    if stability.enabled:
        if tracker.current_tss_onset is None:
            t_tss = math.inf
        else:
            t_tss = t - tracker.current_tss_onset
        stability.s += params.d_s * max(2.0 - abs(t_tss - params.isi_max) / params.isi_max, -1.0)
    return resources, stability, applied, skipped


class LearningNeuron:
    """
    Plastic state of one L neuron: the resource vector (connected synapses
    then silent ones), cached weights, the last presynaptic arrival per
    connected synapse, TSS tracking and stability.
    """

    def __init__(self, params: PlasticityParams, connected_resources: np.ndarray):
        self.params = params
        n = len(connected_resources)
        self.n_connected = n
        self.resources = np.concatenate([
            np.asarray(connected_resources, dtype=np.float64),
            np.zeros(params.n_silent, dtype=np.float64),
        ])
        self.weights = resource_to_weight(self.resources[:n], params)
        self.last_arrival = np.full(n, NEVER)
        self.tracker = TssTracker(depressed_this_tss=np.zeros(n, dtype=bool))
        self.stability = StabilityState(enabled=params.stability_enabled)
        self.initial_total = float(self.resources.sum())
        self.weight_change = 0.0
        self.degenerate_skips = 0
        self.tss_count = 0
        self.dopamine_count = 0

    def record_arrival(self, slot: int, t: int):
        self.last_arrival[slot] = t

    def receive_dopamine(self, t: int):
        self.dopamine_count += 1
        _, _, applied, skipped = apply_dopamine(
            self.resources, self.last_arrival, self.tracker, self.stability, t, self.params)
        logger.debug(f"dopamine at {t}: dW={applied:.4g}, s={self.stability.s:.4g}")
        self._after_update(applied, skipped)

    def post_spike(self, t: int):
        _, _, onset = on_post_spike(self.tracker, self.stability, t, self.params)
        if onset:
            self.tss_count += 1
            logger.debug(f"TSS onset at {t}: s={self.stability.s:.4g}")
        _, applied, skipped = apply_anti_hebbian(
            self.resources, self.last_arrival, self.tracker, t, self.params, self.stability)
        self._after_update(applied, skipped)

    def _after_update(self, applied: float, skipped: bool):
        if skipped:
            self.degenerate_skips += 1
        if applied == 0.0:
            return
        new_weights = resource_to_weight(self.resources[:self.n_connected], self.params)
        self.weight_change += float(np.abs(new_weights - self.weights).sum())
        self.weights = new_weights

    def take_weight_change(self) -> float:
        change, self.weight_change = self.weight_change, 0.0
        return change

    def total_resource(self) -> float:
        return float(self.resources.sum())

    def resource_drift(self) -> float:
        """Relative drift of the total resource since construction."""
        scale = max(abs(self.initial_total), 1.0)
        return abs(self.total_resource() - self.initial_total) / scale

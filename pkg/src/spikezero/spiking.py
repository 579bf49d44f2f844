"""Desk-scale feedforward spiking-network simulator.

A spike emitted at time tau contributes the decaying kernel
w * e^{c(tau - t)} for t >= tau to the receiving neuron's potential; the
neuron fires once the superposed potential reaches the threshold S. Each
edge carries exactly one spike per trial. Two threshold semantics coexist
deliberately:

* :func:`next_spike_time` walks the jump-decay potential and fires at the
  first arrival instant where it reaches S;
* :func:`interarrival_time` is the idealized algebraic relation
  T = 2 ln(sum_i w_i e^{U_i} / S), which depends on weights and timing
  offsets only through the products w_i e^{U_i}.

The second form is what makes the learning rule a zero-order method: the
whole downstream readout is a function of w * e^U, so weight information
travels only through spike times.
"""

from __future__ import annotations

import graphlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Topology",
    "load_topology",
    "KernelParams",
    "potential",
    "next_spike_time",
    "interarrival_time",
    "stdp_update",
    "TrialRecord",
    "run_trial",
]

NO_FIRE_READOUT = 1e6


@dataclass(frozen=True)
class Topology:
    """Static feedforward wiring: a DAG over neurons 0..n_neurons-1."""

    n_neurons: int
    edges: tuple
    inputs: tuple
    outputs: tuple

    def __post_init__(self):
        if self.n_neurons < 1:
            raise ValueError("topology needs at least one neuron")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        inputs = tuple(int(i) for i in self.inputs)
        outputs = tuple(int(i) for i in self.outputs)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        ids = range(self.n_neurons)
        for i, j in edges:
            if i not in ids or j not in ids:
                raise ValueError(f"edge ({i}, {j}) references an unknown neuron")
            if i == j:
                raise ValueError(f"self-loop at neuron {i}")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        for name, nodes in (("inputs", inputs), ("outputs", outputs)):
            if not nodes:
                raise ValueError(f"{name} must be nonempty")
            for i in nodes:
                if i not in ids:
                    raise ValueError(f"{name} references unknown neuron {i}")
        # raises CycleError for anything that is not a DAG
        sorter = graphlib.TopologicalSorter({j: set() for j in ids})
        for i, j in edges:
            sorter.add(j, i)
        try:
            order = tuple(sorter.static_order())
        except graphlib.CycleError as exc:
            raise ValueError(f"topology contains a directed cycle: {exc.args[1]}") from exc
        object.__setattr__(self, "_order", order)

    @property
    def order(self) -> tuple:
        """Neurons in a topological order (parents before children)."""
        return self._order

    def parents(self, j: int) -> list:
        return [i for i, k in self.edges if k == j]


def load_topology(path) -> Topology:
    """Read a topology from JSON: {neurons, edges, inputs, outputs}."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    expected = {"neurons", "edges", "inputs", "outputs"}
    unknown = set(doc) - expected
    if unknown:
        raise ValueError(f"unknown topology field {sorted(unknown)[0]!r}")
    missing = expected - set(doc)
    if missing:
        raise ValueError(f"topology file missing field {sorted(missing)[0]!r}")
    return Topology(n_neurons=doc["neurons"], edges=tuple(map(tuple, doc["edges"])),
                    inputs=tuple(doc["inputs"]), outputs=tuple(doc["outputs"]))


@dataclass(frozen=True)
class KernelParams:
    """Kernel and plasticity constants.

    decay         -- exponential decay rate c of the spike kernel
    amplitude     -- plasticity amplitude C; C <= 1 keeps every unsupervised
                     weight change strictly smaller than the weight itself
    threshold     -- firing threshold S
    half_interval -- half the assumed constant interspike interval A
    """

    decay: float = 1.0
    amplitude: float = 1.0
    threshold: float = 1.0
    half_interval: float = 1.0

    def __post_init__(self):
        if not self.decay > 0:
            raise ValueError("decay must be positive")
        if not 0 < self.amplitude <= 1:
            raise ValueError("amplitude must be in (0, 1]")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not self.half_interval > 0:
            raise ValueError("half_interval must be positive")


def potential(arrivals, t: float, decay: float = 1.0) -> float:
    """Superposed potential sum_i w_i e^{decay (tau_i - t)} 1(t >= tau_i)."""
    total = 0.0
    for w, tau in arrivals:
        if w <= 0:
            raise ValueError("weights must be positive")
        if t >= tau:
            total += w * math.exp(decay * (tau - t))
    return total


def next_spike_time(arrivals, threshold: float, decay: float = 1.0) -> float | None:
    """First arrival instant at which the jump-decay potential reaches the
    threshold, or None if it never does.

    Between arrivals the potential only decays, so crossings can only
    happen at arrival instants.
    """
    ordered = sorted(arrivals, key=lambda wt: wt[1])
    level = 0.0
    prev_t = None
    for w, tau in ordered:
        if w <= 0:
            raise ValueError("weights must be positive")
        if prev_t is not None:
            level *= math.exp(decay * (prev_t - tau))
        level += w
        prev_t = tau
        if level >= threshold:
            return tau
    return None


def interarrival_time(weights, offsets, threshold: float) -> float:
    """Idealized interspike-interval relation T = 2 ln(sum w e^U / S).

    Depends on (weights, offsets) only through the products w_i e^{U_i}, so
    rescaling (w, U) -> (lam * w, U - ln lam) edge by edge leaves the value
    unchanged up to floating rounding. Raises ValueError when the drive
    sum w e^U falls below the threshold (the neuron would not fire).
    """
    w = np.asarray(weights, dtype=np.float64)
    u = np.asarray(offsets, dtype=np.float64)
    if w.shape != u.shape:
        raise ValueError("weights and offsets must have equal length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    drive = float(np.sum(w * np.exp(u)))
    if drive < threshold:
        raise ValueError(
            f"total drive {drive:g} below threshold {threshold:g}: neuron does not fire"
        )
    return 2.0 * math.log(drive / threshold)


def stdp_update(weight: float, arrival: float, t_minus: float, t_plus: float,
                params: KernelParams, reward_delta: float | None = None,
                alpha: float = 1.0) -> float:
    """One spike-timing plasticity update for a single edge.

    The presynaptic spike arrives at ``arrival`` between the postsynaptic
    firing times ``t_minus`` and ``t_plus``. Without a reward signal the
    weight moves by w * C * (-e^{-c(tau - T-)} + e^{-c(T+ - tau)}): it is
    depressed in proportion to the time since the last postsynaptic spike
    and potentiated in proportion to how soon the next one follows. With a
    loss-difference ``reward_delta`` the change is sign-flipped and scaled,
    w += alpha * reward_delta * w * C * (e^{-c(tau - T-)} - e^{-c(T+ - tau)}),
    so that a worse-than-anticipated outcome pushes the weight the other way.
    """
    if not t_minus <= arrival <= t_plus:
        raise ValueError(
            f"arrival {arrival:g} outside postsynaptic window [{t_minus:g}, {t_plus:g}]"
        )
    if weight <= 0:
        raise ValueError("weight must be positive")
    c = params.decay
    depress = math.exp(-c * (arrival - t_minus))
    potentiate = math.exp(-c * (t_plus - arrival))
    if reward_delta is None:
        return weight + weight * params.amplitude * (-depress + potentiate)
    return weight + alpha * reward_delta * weight * params.amplitude * (depress - potentiate)


@dataclass
class TrialRecord:
    """Everything observable from one trial."""

    arrivals: dict
    offsets: dict
    firing: dict
    readout: float
    output_neuron: int
    output_fired: bool
    fired_edges: tuple = field(default_factory=tuple)


def run_trial(topology: Topology, weights: dict, input_times: dict,
              params: KernelParams, gen: np.random.Generator | None = None,
              offsets: dict | None = None, readout_scale: float = 1.0,
              readout_offset: float = 0.0,
              sentinel: float = NO_FIRE_READOUT) -> TrialRecord:
    """Simulate one trial: one spike per edge, threshold firing, readout.

    Input neurons fire at the assigned ``input_times`` (a time of None
    silences that input for the trial). Every edge gets a timing offset U,
    drawn uniform on [-A, A] unless forced via ``offsets``; the spike from
    i to j arrives at firing(i) + U_ij. Firing times use the jump-decay
    crossing semantics. The readout is an affine function of the idealized
    interarrival relation at the first output neuron, computed over edges
    whose parent fired; trials where the output drive stays below threshold
    get the ``sentinel`` readout so a loss is always defined.
    """
    edge_list = topology.edges
    missing = [e for e in edge_list if e not in weights]
    if missing:
        raise ValueError(f"missing weight for edge {missing[0]}")
    for e in edge_list:
        if weights[e] <= 0:
            raise ValueError(f"weight for edge {e} must be positive")
    for i in topology.inputs:
        if i not in input_times:
            raise ValueError(f"missing input spike time for neuron {i}")

    a = params.half_interval
    if offsets is None:
        if gen is None:
            raise ValueError("run_trial needs a generator unless offsets are forced")
        drawn = gen.uniform(-a, a, size=len(edge_list))
        offsets = {e: float(drawn[idx]) for idx, e in enumerate(edge_list)}
    else:
        missing = [e for e in edge_list if e not in offsets]
        if missing:
            raise ValueError(f"missing offset for edge {missing[0]}")

    firing: dict = {}
    arrivals: dict = {}
    fired_edges = []
    for j in topology.order:
        if j in topology.inputs:
            assigned = input_times[j]
            firing[j] = None if assigned is None else float(assigned)
            continue
        incoming = []
        for i in topology.parents(j):
            if firing.get(i) is None:
                continue
            e = (i, j)
            arrivals[e] = firing[i] + offsets[e]
            fired_edges.append(e)
            incoming.append((weights[e], arrivals[e]))
        firing[j] = (next_spike_time(incoming, params.threshold, params.decay)
                     if incoming else None)

    out = topology.outputs[0]
    live = [(i, out) for i in topology.parents(out) if firing.get(i) is not None]
    output_fired = False
    readout = sentinel
    if live:
        w = [weights[e] for e in live]
        u = [offsets[e] for e in live]
        drive = float(np.sum(np.asarray(w) * np.exp(np.asarray(u))))
        if drive >= params.threshold:
            output_fired = True
            readout = readout_scale * interarrival_time(w, u, params.threshold) + readout_offset

    return TrialRecord(arrivals=arrivals, offsets=dict(offsets), firing=firing,
                       readout=readout, output_neuron=out, output_fired=output_fired,
                       fired_edges=tuple(fired_edges))

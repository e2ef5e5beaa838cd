"""Synthetic feeder simulator: ground truth for every identification test.

Loads are modeled as current injections, which makes the forward model
exactly linear (I = Y V); constant-power iteration would add model error
orthogonal to what the identification methods claim.  The slack balancing
current is reported as that terminal's injection, so datasets satisfy
Ohm's law to machine precision under full observability.
"""

import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .exceptions import DataError, NetworkError
from .netmodel import (
    AdmittanceMatrix,
    GridEvent,
    Line,
    Network,
    Node,
    Switch,
    apply_event,
    assemble_ybus,
    complex_to_pair,
    network_from_dict,
    network_to_dict,
    pair_to_complex,
    ybus_from_dict,
    ybus_to_dict,
)
from .phasors import PhasorDataset, add_noise

# nominal voltage rotation per phase: a at 0, b at -120, c at +120 degrees
PHASE_ROTATION = {
    "a": 1.0 + 0.0j,
    "b": np.exp(-2j * np.pi / 3),
    "c": np.exp(+2j * np.pi / 3),
}


@dataclass(frozen=True)
class FeederSpec:
    """Shape and impedance ranges of a synthetic feeder.

    ``closed_switches`` splits tree edges with in-line large-admittance
    switches (the unloaded mid node this creates is a zero-injection
    terminal, one source of exact voltage-rank deficiency);
    ``tie_switches`` adds closed ties between loaded nodes instead, placing
    the large element without new unloaded terminals; ``open_switches``
    adds normally-open ties; ``toggle_pair`` adds one in-line closed switch
    ("sw-inline") and a tie ("sw-tie") sharing a node and using the same
    conductance, which reproduces the simultaneous open/close
    reconfiguration pattern.
    """

    nodes: int
    phasing: str = "single"  # single | three | mixed
    loops: int = 0
    closed_switches: int = 0
    open_switches: int = 0
    tie_switches: int = 0
    toggle_pair: bool = False
    r_range: tuple = (0.01, 0.08)
    x_range: tuple = (0.02, 0.12)
    mutual_scale: float = 0.3
    switch_conductance: float = 1e5


@dataclass(frozen=True)
class LoadSpec:
    """Per-node consumer mix and temporal behaviour of load currents.

    ``correlation`` doubles as the AR(1) coefficient of every process and as
    the weight of the shared factors: at 0 the injections are i.i.d. across
    slots and terminals; at exactly 1 the idiosyncratic part vanishes and
    the voltage matrix has rank at most ``n_factors + 1``.
    """

    consumers: tuple = (5, 15)
    consumer_magnitude: tuple = (0.002, 0.01)
    power_factor: float = 0.95
    correlation: float = 0.0
    n_factors: int = 3
    sway: float = 0.3
    unload_switch_terminals: bool = True


@dataclass(frozen=True)
class ScenarioSpec:
    feeder: FeederSpec
    loads: LoadSpec
    slots: int
    events: tuple = ()
    noise_sigma: float = 0.0
    noise_on_currents: bool = False
    seed: int = 0


@dataclass(frozen=True)
class Interval:
    """Half-open slot range [start, stop) governed by one admittance matrix."""

    start: int
    stop: int
    ybus: AdmittanceMatrix


@dataclass(frozen=True)
class AppliedEvent:
    event: GridEvent
    delta: AdmittanceMatrix


@dataclass(frozen=True)
class GroundTruth:
    intervals: tuple
    events: tuple
    network: Network

    def y_at(self, k: int) -> AdmittanceMatrix:
        for iv in self.intervals:
            if iv.start <= k < iv.stop:
                return iv.ybus
        raise KeyError(f"slot {k} outside scenario range")


# ----------------------------------------------------------- feeder synthesis

def _impedance_block(rng, p, spec: FeederSpec):
    diag = rng.uniform(*spec.r_range, p) + 1j * rng.uniform(*spec.x_range, p)
    Z = np.diag(diag).astype(complex)
    for a in range(p):
        for b in range(a + 1, p):
            m = spec.mutual_scale * rng.uniform(0.3, 0.9) * diag[[a, b]].mean()
            Z[a, b] = Z[b, a] = m
    return Z


def generate_feeder(spec: FeederSpec, seed) -> Network:
    """Random connected feeder: a tree plus optional loops and switches."""
    if spec.nodes < 2:
        raise ValueError("a feeder needs at least 2 nodes")
    if spec.phasing not in ("single", "three", "mixed"):
        raise ValueError(f"unknown phasing {spec.phasing!r}")
    rng = np.random.default_rng(seed)
    width = max(2, len(str(spec.nodes)))

    def node_id(i):
        return f"b{i:0{width}d}"

    all_phases = ("a",) if spec.phasing == "single" else ("a", "b", "c")
    nodes = [Node(node_id(0), all_phases)]
    lines = []
    for i in range(1, spec.nodes):
        parent = nodes[int(rng.integers(0, i))]
        if spec.phasing == "mixed":
            # child phases are a subset of the parent's, so every terminal
            # stays connected to the slack through phase-consistent paths
            k = min(int(rng.choice([1, 2, 3], p=[0.25, 0.25, 0.5])), len(parent.phases))
            phases = tuple(sorted(rng.choice(parent.phases, size=k, replace=False)))
        else:
            phases = all_phases
        nodes.append(Node(node_id(i), phases))
        lines.append(Line(f"ln{i:03d}", parent.id, node_id(i), phases,
                          _impedance_block(rng, len(phases), spec)))

    def common_phases(u, v):
        by_id = {n.id: n for n in nodes}
        return tuple(sorted(set(by_id[u].phases) & set(by_id[v].phases)))

    adjacent = {frozenset((ln.from_node, ln.to_node)) for ln in lines}

    def random_pair(exclude_adjacent=True, exclude=(), tries=200):
        ids = [n.id for n in nodes if n.id not in exclude]
        for _ in range(tries):
            u, v = rng.choice(ids, size=2, replace=False)
            if exclude_adjacent and frozenset((u, v)) in adjacent:
                continue
            if common_phases(u, v):
                return str(u), str(v)
        raise NetworkError("could not place a branch with common phases")

    for i in range(spec.loops):
        u, v = random_pair()
        ph = common_phases(u, v)
        lines.append(Line(f"lp{i:03d}", u, v, ph, _impedance_block(rng, len(ph), spec)))
        adjacent.add(frozenset((u, v)))

    switches = []

    def split_edge(switch_id):
        """Replace a random tree edge with line + in-line closed switch."""
        k = int(rng.integers(0, len(lines)))
        ln = lines[k]
        mid = Node(f"m{switch_id}", ln.phases)
        nodes.append(mid)
        lines[k] = replace(ln, to_node=mid.id)
        switches.append(Switch(switch_id, mid.id, ln.to_node, ln.phases, closed=True,
                               conductance=spec.switch_conductance))
        adjacent.add(frozenset((mid.id, ln.to_node)))
        return ln.to_node  # downstream endpoint, shared with the new switch

    for i in range(spec.closed_switches):
        split_edge(f"swc{i:02d}")
    # switches never terminate at the substation: its fixed per-phase voltage
    # rotations make any change there only partially identifiable
    for i in range(spec.tie_switches):
        u, v = random_pair(exclude=(node_id(0),))
        switches.append(Switch(f"swt{i:02d}", u, v, common_phases(u, v), closed=True,
                               conductance=spec.switch_conductance))
        adjacent.add(frozenset((u, v)))
    for i in range(spec.open_switches):
        u, v = random_pair(exclude=(node_id(0),))
        switches.append(Switch(f"swo{i:02d}", u, v, common_phases(u, v), closed=False,
                               conductance=spec.switch_conductance))
        adjacent.add(frozenset((u, v)))
    if spec.toggle_pair:
        # the tie must land outside the in-line switch's downstream island
        # (over lines only), else the toggle would strand the island; pick a
        # split edge that leaves such a node available
        def island_of(shared, without):
            isl = {shared}
            grew = True
            while grew:
                grew = False
                for ln in lines:
                    if ln is without:
                        continue
                    if (ln.from_node in isl) != (ln.to_node in isl):
                        isl.update((ln.from_node, ln.to_node))
                        grew = True
            return isl

        placed = False
        for k in rng.permutation(len(lines)):
            ln = lines[int(k)]
            shared = ln.to_node
            if shared == node_id(0):
                continue
            isl = island_of(shared, ln)
            candidates = [
                n.id for n in nodes
                if n.id not in isl and n.id != node_id(0)
                and frozenset((n.id, shared)) not in adjacent
                and common_phases(n.id, shared)
            ]
            if not candidates:
                continue
            other = str(rng.choice(candidates))
            mid = Node("msw-inline", ln.phases)
            nodes.append(mid)
            lines[int(k)] = replace(ln, to_node=mid.id)
            switches.append(Switch("sw-inline", mid.id, shared, ln.phases, closed=True,
                                   conductance=spec.switch_conductance))
            adjacent.add(frozenset((mid.id, shared)))
            switches.append(Switch("sw-tie", shared, other, common_phases(other, shared),
                                   closed=False, conductance=spec.switch_conductance))
            adjacent.add(frozenset((other, shared)))
            placed = True
            break
        if not placed:
            raise NetworkError("could not place the tie switch")

    net = Network(nodes=tuple(nodes), lines=tuple(lines), switches=tuple(switches),
                  slack=node_id(0))
    net.validate()
    return net


# -------------------------------------------------------------- load profiles

def _ar1(rng, n_series, slots, rho):
    """Stationary AR(1) rows with unit marginal variance."""
    out = np.empty((n_series, slots))
    out[:, 0] = rng.normal(size=n_series)
    innov = np.sqrt(max(1.0 - rho * rho, 0.0))
    for t in range(1, slots):
        out[:, t] = rho * out[:, t - 1] + innov * rng.normal(size=n_series)
    return out


def switch_adjacent_nodes(net: Network):
    """Nodes that terminate a switch; these carry no load (regulator/switch
    terminals are unloaded)."""
    out = set()
    for sw in net.switches:
        out.add(sw.from_node)
        out.add(sw.to_node)
    return out


def generate_loads(net: Network, spec: LoadSpec, slots: int, seed,
                   exclude_nodes=None) -> np.ndarray:
    """Injected-current schedule, dim x slots, zeros at the slack and at
    excluded (by default switch-adjacent) nodes.

    Consumer counts are drawn per node and split across its phases; the
    common-factor/idiosyncratic mix is controlled by ``spec.correlation``.
    Magnitudes are affine in the driving processes, so at correlation 1 the
    injection rows span at most n_factors + 1 directions; they are not
    clipped, so a heavily swung load may momentarily reverse.
    """
    if slots < 1:
        raise ValueError("need at least one slot")
    if not 0.0 <= spec.correlation <= 1.0:
        raise ValueError("correlation must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    exclude = set(exclude_nodes) if exclude_nodes is not None else switch_adjacent_nodes(net)
    exclude.add(net.slack)
    terminals = net.terminals
    base = np.zeros(len(terminals))
    lo, hi = spec.consumers
    for node in net.nodes:
        if node.id in exclude:
            continue
        n_c = int(rng.integers(lo, hi + 1)) if hi > lo else int(lo)
        n_c = max(n_c, len(node.phases))  # every phase of a loaded node gets a consumer
        for k in range(n_c):
            # spread the first consumers round-robin, the rest at random
            phase = node.phases[k] if k < len(node.phases) else str(rng.choice(node.phases))
            base[net.terminal_index[(node.id, phase)]] += rng.uniform(*spec.consumer_magnitude)

    load_rows = np.flatnonzero(base > 0)
    inj = np.zeros((len(terminals), slots), dtype=complex)
    if load_rows.size == 0:
        return inj

    rho = float(spec.correlation)
    ar = min(rho, 0.95)  # at mix 1 the factors must still vary across slots
    factors = _ar1(rng, spec.n_factors, slots, ar)
    idio = _ar1(rng, load_rows.size, slots, ar)
    loadings = rng.normal(size=(load_rows.size, spec.n_factors))
    loadings /= np.maximum(np.linalg.norm(loadings, axis=1, keepdims=True), 1e-12)
    drive = rho * (loadings @ factors) + (1.0 - rho) * idio

    pf = spec.power_factor
    s_angle = pf - 1j * np.sqrt(max(1.0 - pf * pf, 0.0))  # conj(S)/|S| for an inductive load
    for row_pos, t_idx in enumerate(load_rows):
        node, phase = terminals[t_idx]
        mags = base[t_idx] * (1.0 + spec.sway * drive[row_pos])
        inj[t_idx] = -s_angle * PHASE_ROTATION[phase] * mags
    return inj


# ---------------------------------------------------------------- power flow

def _partition_slack(net: Network):
    slack_idx = [net.terminal_index[(net.slack, p)]
                 for p in net.node_by_id[net.slack].phases]
    other_idx = [i for i in range(net.dim) if i not in set(slack_idx)]
    return np.array(slack_idx, int), np.array(other_idx, int)


def solve_steady_state(net: Network, injections, slack_voltage=1.0, ybus=None):
    """Solve the linear steady state: slack voltages fixed at the nominal
    per-phase rotation, currents specified elsewhere.

    ``injections`` may be a vector (one slot) or a dim x K matrix.  Returns
    (v, i) with i = Y v recomputed from the solved voltages, so the pair
    satisfies Ohm's law to machine precision; the slack rows of ``i`` hold
    the implied balancing current.
    """
    Y = (ybus if ybus is not None else assemble_ybus(net)).to_dense()
    inj = np.asarray(injections, dtype=complex)
    squeeze = inj.ndim == 1
    if squeeze:
        inj = inj[:, None]
    if inj.shape[0] != net.dim:
        raise ValueError(f"injections have {inj.shape[0]} rows, network has {net.dim} terminals")
    s_idx, f_idx = _partition_slack(net)
    v_s = slack_voltage * np.array(
        [PHASE_ROTATION[p] for p in net.node_by_id[net.slack].phases], dtype=complex
    )
    V = np.zeros_like(inj)
    V[s_idx] = v_s[:, None]
    Y_ff = Y[np.ix_(f_idx, f_idx)]
    Y_fs = Y[np.ix_(f_idx, s_idx)]
    rhs = inj[f_idx] - Y_fs @ V[s_idx]
    try:
        lu = sla.lu_factor(Y_ff)
        v_f = sla.lu_solve(lu, rhs)
        for _ in range(2):  # iterative refinement keeps residuals at eps level
            r = rhs - Y_ff @ v_f
            v_f += sla.lu_solve(lu, r)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NetworkError(f"singular reduced system: {exc}") from exc
    if not (np.all(np.isfinite(v_f.real)) and np.all(np.isfinite(v_f.imag))):
        raise NetworkError("singular reduced system (disconnected terminals)")
    V[f_idx] = v_f
    I = Y @ V
    if squeeze:
        return V[:, 0], I[:, 0]
    return V, I


# ------------------------------------------------------------------ scenario

def run_scenario(spec: ScenarioSpec):
    """Simulate the scenario and return (PhasorDataset, GroundTruth).

    Events at the same slot are applied in listed order and produce a single
    interval boundary; noise is applied last, to voltages by default.
    """
    if spec.slots < 1:
        raise ValueError("scenario needs at least one slot")
    for ev in spec.events:
        if not 0 < ev.time < spec.slots:
            raise ValueError(f"event time {ev.time} outside (0, {spec.slots})")
    times = [ev.time for ev in spec.events]
    if times != sorted(times):
        raise ValueError("events must be listed in non-decreasing time order")

    seed_feeder, seed_loads, seed_noise = np.random.SeedSequence(spec.seed).spawn(3)
    net = generate_feeder(spec.feeder, seed_feeder)
    exclude = None if spec.loads.unload_switch_terminals else {net.slack}
    inj = generate_loads(net, spec.loads, spec.slots, seed_loads, exclude_nodes=exclude)

    boundaries = sorted({ev.time for ev in spec.events})
    edges = [0] + boundaries + [spec.slots]
    by_time: dict = {}
    for ev in spec.events:
        by_time.setdefault(ev.time, []).append(ev)

    V = np.zeros((net.dim, spec.slots), dtype=complex)
    I = np.zeros_like(V)
    intervals = []
    applied = []
    current = net
    ybus = assemble_ybus(current)
    for start, stop in zip(edges, edges[1:]):
        v, i = solve_steady_state(current, inj[:, start:stop], ybus=ybus)
        V[:, start:stop] = v
        I[:, start:stop] = i
        intervals.append(Interval(start=start, stop=stop, ybus=ybus))
        if stop < spec.slots:
            for ev in by_time[stop]:
                nxt = apply_event(current, ev)
                y_next = assemble_ybus(nxt)
                applied.append(AppliedEvent(event=ev, delta=y_next - ybus))
                current, ybus = nxt, y_next

    ds = PhasorDataset(terminals=net.terminals, V=V, I=I)
    if spec.noise_sigma > 0:
        ds = add_noise(ds, spec.noise_sigma, seed_noise, on_currents=spec.noise_on_currents)
    truth = GroundTruth(intervals=tuple(intervals), events=tuple(applied), network=net)
    return ds, truth


# ------------------------------------------------------------------- JSON IO

def event_to_dict(ev: GridEvent) -> dict:
    doc = {"time": ev.time, "kind": ev.kind, "target": ev.target}
    if ev.amount is not None:
        doc["amount"] = complex_to_pair(ev.amount)
    return doc


def event_from_dict(doc: dict) -> GridEvent:
    return GridEvent(
        time=int(doc["time"]),
        kind=str(doc["kind"]),
        target=str(doc["target"]),
        amount=pair_to_complex(doc["amount"]) if doc.get("amount") is not None else None,
    )


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    f, l = spec.feeder, spec.loads
    return {
        "feeder": {
            "nodes": f.nodes, "phasing": f.phasing, "loops": f.loops,
            "closed_switches": f.closed_switches, "open_switches": f.open_switches,
            "tie_switches": f.tie_switches,
            "toggle_pair": f.toggle_pair,
            "r_range": list(f.r_range), "x_range": list(f.x_range),
            "mutual_scale": f.mutual_scale, "switch_conductance": f.switch_conductance,
        },
        "loads": {
            "consumers": list(l.consumers), "consumer_magnitude": list(l.consumer_magnitude),
            "power_factor": l.power_factor, "correlation": l.correlation,
            "n_factors": l.n_factors, "sway": l.sway,
            "unload_switch_terminals": l.unload_switch_terminals,
        },
        "slots": spec.slots,
        "events": [event_to_dict(ev) for ev in spec.events],
        "noise_sigma": spec.noise_sigma,
        "noise_on_currents": spec.noise_on_currents,
        "seed": spec.seed,
    }


def scenario_from_dict(doc: dict) -> ScenarioSpec:
    try:
        f = doc["feeder"]
        l = doc.get("loads", {})
        feeder = FeederSpec(
            nodes=int(f["nodes"]),
            phasing=str(f.get("phasing", "single")),
            loops=int(f.get("loops", 0)),
            closed_switches=int(f.get("closed_switches", 0)),
            open_switches=int(f.get("open_switches", 0)),
            tie_switches=int(f.get("tie_switches", 0)),
            toggle_pair=bool(f.get("toggle_pair", False)),
            r_range=tuple(f.get("r_range", (0.01, 0.08))),
            x_range=tuple(f.get("x_range", (0.02, 0.12))),
            mutual_scale=float(f.get("mutual_scale", 0.3)),
            switch_conductance=float(f.get("switch_conductance", 1e5)),
        )
        loads = LoadSpec(
            consumers=tuple(l.get("consumers", (5, 15))),
            consumer_magnitude=tuple(l.get("consumer_magnitude", (0.002, 0.01))),
            power_factor=float(l.get("power_factor", 0.95)),
            correlation=float(l.get("correlation", 0.0)),
            n_factors=int(l.get("n_factors", 3)),
            sway=float(l.get("sway", 0.3)),
            unload_switch_terminals=bool(l.get("unload_switch_terminals", True)),
        )
        return ScenarioSpec(
            feeder=feeder,
            loads=loads,
            slots=int(doc["slots"]),
            events=tuple(event_from_dict(e) for e in doc.get("events", [])),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            noise_on_currents=bool(doc.get("noise_on_currents", False)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed scenario document: {exc}") from exc


def load_scenario(path) -> ScenarioSpec:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(spec: ScenarioSpec, path):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(spec), fh, indent=2)


def ground_truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "network": network_to_dict(truth.network),
        "intervals": [
            {"start": iv.start, "stop": iv.stop, "ybus": ybus_to_dict(iv.ybus)}
            for iv in truth.intervals
        ],
        "events": [
            {"event": event_to_dict(ae.event), "delta": ybus_to_dict(ae.delta)}
            for ae in truth.events
        ],
    }


def ground_truth_from_dict(doc: dict) -> GroundTruth:
    try:
        network = network_from_dict(doc["network"])
        intervals = tuple(
            Interval(start=int(iv["start"]), stop=int(iv["stop"]),
                     ybus=ybus_from_dict(iv["ybus"]))
            for iv in doc["intervals"]
        )
        events = tuple(
            AppliedEvent(event=event_from_dict(ae["event"]), delta=ybus_from_dict(ae["delta"]))
            for ae in doc.get("events", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed ground-truth document: {exc}") from exc
    return GroundTruth(intervals=intervals, events=events, network=network)


def save_ground_truth(truth: GroundTruth, path):
    with open(path, "w") as fh:
        json.dump(ground_truth_to_dict(truth), fh)


def load_ground_truth(path) -> GroundTruth:
    with open(path) as fh:
        return ground_truth_from_dict(json.load(fh))

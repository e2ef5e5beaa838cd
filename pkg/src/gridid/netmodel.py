"""Poly-phase distribution network model and bus admittance matrix assembly.

Nodes carry a subset of phases {a, b, c}; every (node, phase) pair is one
terminal, and terminals index the rows/columns of all matrices in sorted
(node, phase) order.  Lines are pi-equivalent components with a symmetric
series impedance block and an optional shunt block; switches are large
scalar-admittance branches with an open/closed state.  The admittance matrix
is stored as lower-triangular sparse triplets and mirrored on read, so
symmetry is structural rather than asserted.
"""

import json
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .exceptions import DataError, NetworkError

PHASES = ("a", "b", "c")

EVENT_KINDS = ("switch-open", "switch-close", "line-trip", "block-perturb")


# ------------------------------------------------------------ JSON helpers

def complex_to_pair(z):
    z = complex(z)
    return [z.real, z.imag]


def pair_to_complex(pair):
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        raise DataError(f"expected [re, im] pair, got {pair!r}")
    return complex(float(pair[0]), float(pair[1]))


def matrix_to_pairs(M):
    return [[complex_to_pair(v) for v in row] for row in np.asarray(M)]


def pairs_to_matrix(rows):
    return np.array([[pair_to_complex(v) for v in row] for row in rows], dtype=complex)


# ------------------------------------------------------------- data model

@dataclass(frozen=True)
class Node:
    id: str
    phases: tuple

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(sorted(self.phases)))


@dataclass(frozen=True, eq=False)
class Line:
    """Pi-model line: series impedance z (complex, symmetric, per-unit) and
    optional total shunt admittance ys, half of which sits at each end."""

    id: str
    from_node: str
    to_node: str
    phases: tuple
    z: np.ndarray
    ys: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(sorted(self.phases)))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=complex))
        if self.ys is not None:
            object.__setattr__(self, "ys", np.asarray(self.ys, dtype=complex))


@dataclass(frozen=True)
class Switch:
    """Line-like branch with scalar per-phase admittance g*(1 - 0.1j).

    The default conductance class (1e5 p.u.) reproduces the regime where one
    admittance element is orders of magnitude larger than the rest, which is
    what stresses unweighted l1 estimation.  Transformers and regulators are
    emulated by the same class.
    """

    id: str
    from_node: str
    to_node: str
    phases: tuple
    closed: bool
    conductance: float = 1e5

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(sorted(self.phases)))

    def admittance_block(self):
        return self.conductance * (1.0 - 0.1j) * np.eye(len(self.phases), dtype=complex)


@dataclass(frozen=True)
class GridEvent:
    """An admittance-changing action.

    The implied symmetric update DeltaY is not stored here; it is computed by
    :func:`event_delta` as the exact difference of the assemblies before and
    after the event.  ``amount`` applies to block-perturb only and scales the
    series admittance of the target line by (1 + amount).
    """

    time: int
    kind: str
    target: str
    amount: complex | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable network description; mutate only via :func:`apply_event`."""

    nodes: tuple
    lines: tuple
    switches: tuple
    slack: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "switches", tuple(self.switches))

    @cached_property
    def terminals(self):
        return tuple(sorted((n.id, p) for n in self.nodes for p in n.phases))

    @cached_property
    def terminal_index(self):
        return {t: i for i, t in enumerate(self.terminals)}

    @property
    def dim(self):
        return len(self.terminals)

    @cached_property
    def node_by_id(self):
        return {n.id: n for n in self.nodes}

    @cached_property
    def component_by_id(self):
        out = {}
        for c in list(self.lines) + list(self.switches):
            if c.id in out:
                raise NetworkError(f"duplicate component id {c.id!r}")
            out[c.id] = c
        return out

    def closed_branches(self):
        """Lines plus closed switches."""
        return list(self.lines) + [s for s in self.switches if s.closed]

    def validate(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate node ids")
        if self.slack not in self.node_by_id:
            raise NetworkError(f"slack node {self.slack!r} not in network")
        for n in self.nodes:
            if not n.phases or not set(n.phases) <= set(PHASES):
                raise NetworkError(f"node {n.id!r} has invalid phase set {n.phases!r}")
        _ = self.component_by_id  # raises on duplicate component ids
        for ln in self.lines:
            self._check_endpoints(ln)
            p = len(ln.phases)
            if ln.z.shape != (p, p):
                raise NetworkError(f"line {ln.id!r}: impedance block is {ln.z.shape}, expected {(p, p)}")
            if np.max(np.abs(ln.z - ln.z.T)) > 1e-9 * max(1.0, np.max(np.abs(ln.z))):
                raise NetworkError(f"line {ln.id!r}: impedance block is not symmetric")
            if ln.ys is not None:
                if ln.ys.shape != (p, p):
                    raise NetworkError(f"line {ln.id!r}: shunt block is {ln.ys.shape}, expected {(p, p)}")
                if np.max(np.abs(ln.ys - ln.ys.T)) > 1e-9 * max(1.0, np.max(np.abs(ln.ys))):
                    raise NetworkError(f"line {ln.id!r}: shunt block is not symmetric")
        for sw in self.switches:
            self._check_endpoints(sw)
            if sw.conductance <= 0:
                raise NetworkError(f"switch {sw.id!r}: conductance must be positive")
        if not self.is_connected():
            raise NetworkError("graph over closed lines/switches is not connected")

    def _check_endpoints(self, comp):
        for end in (comp.from_node, comp.to_node):
            if end not in self.node_by_id:
                raise NetworkError(f"component {comp.id!r}: unknown endpoint {end!r}")
        if comp.from_node == comp.to_node:
            raise NetworkError(f"component {comp.id!r}: self-loop")
        pf = set(self.node_by_id[comp.from_node].phases)
        pt = set(self.node_by_id[comp.to_node].phases)
        if not set(comp.phases) <= (pf & pt):
            raise NetworkError(
                f"component {comp.id!r}: phases {comp.phases!r} not available at both endpoints"
            )
        if not comp.phases:
            raise NetworkError(f"component {comp.id!r}: empty phase set")

    def is_connected(self):
        if not self.nodes:
            return True
        adjacency = {n.id: [] for n in self.nodes}
        for br in self.closed_branches():
            adjacency[br.from_node].append(br.to_node)
            adjacency[br.to_node].append(br.from_node)
        seen = {self.slack}
        stack = [self.slack]
        while stack:
            for other in adjacency[stack.pop()]:
                if other not in seen:
                    seen.add(other)
                    stack.append(other)
        return len(seen) == len(self.nodes)


# ------------------------------------------------------- admittance matrix

class AdmittanceMatrix:
    """Symmetric complex matrix over (node, phase) terminals.

    Entries are kept as lower-triangular triplets (row >= col); the upper
    triangle is a mirror, never stored.
    """

    def __init__(self, terminals, rows, cols, values):
        self.terminals = tuple((str(n), str(p)) for n, p in terminals)
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        values = np.asarray(values, dtype=complex)
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("triplet arrays must have identical shapes")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.dim or cols.min() < 0 or cols.max() >= self.dim:
                raise ValueError("triplet index out of range")
            if np.any(rows < cols):
                raise ValueError("triplets must be lower-triangular (row >= col)")
        order = np.lexsort((cols, rows))
        self._rows = rows[order]
        self._cols = cols[order]
        self._values = values[order]
        if len({(int(i), int(j)) for i, j in zip(self._rows, self._cols)}) != self._rows.size:
            raise ValueError("duplicate triplets")
        self._dense = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dense(cls, M, terminals, symmetry_tol=1e-9):
        M = np.asarray(M, dtype=complex)
        n = len(terminals)
        if M.shape != (n, n):
            raise ValueError(f"matrix shape {M.shape} does not match {n} terminals")
        if n:
            asym = np.max(np.abs(M - M.T))
            if asym > symmetry_tol * max(1.0, np.max(np.abs(M))):
                raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
        rows, cols = np.tril_indices(n)
        vals = M[rows, cols]
        keep = vals != 0
        return cls(terminals, rows[keep], cols[keep], vals[keep])

    @classmethod
    def zeros(cls, terminals):
        return cls(terminals, [], [], [])

    # -- views -------------------------------------------------------------

    @property
    def dim(self):
        return len(self.terminals)

    @cached_property
    def terminal_index(self):
        return {t: i for i, t in enumerate(self.terminals)}

    def to_dense(self):
        if self._dense is None:
            D = np.zeros((self.dim, self.dim), dtype=complex)
            D[self._rows, self._cols] = self._values
            D[self._cols, self._rows] = self._values
            self._dense = D
        return self._dense.copy()

    def triplets(self):
        """Lower-triangular (row, col, value) triplets, deterministic order."""
        return [(int(i), int(j), complex(v)) for i, j, v in zip(self._rows, self._cols, self._values)]

    def entry(self, i, j):
        if i < j:
            i, j = j, i
        mask = (self._rows == i) & (self._cols == j)
        hit = np.flatnonzero(mask)
        return complex(self._values[hit[0]]) if hit.size else 0j

    def nonzeros(self, tol=0.0):
        return [(i, j, v) for i, j, v in self.triplets() if abs(v) > tol]

    def row_sums(self):
        return self.to_dense().sum(axis=1)

    def sparsity(self, tol=0.0):
        """Fraction of (dense) entries that are zero."""
        if self.dim == 0:
            return 1.0
        nnz_tril = sum(1 for _, _, v in self.triplets() if abs(v) > tol)
        nnz_diag = sum(1 for i, j, v in self.triplets() if i == j and abs(v) > tol)
        nnz = 2 * nnz_tril - nnz_diag
        return 1.0 - nnz / (self.dim * self.dim)

    def max_abs(self):
        return float(np.max(np.abs(self._values))) if self._values.size else 0.0

    def allclose(self, other, atol=0.0, rtol=0.0):
        if self.terminals != other.terminals:
            return False
        return np.allclose(self.to_dense(), other.to_dense(), atol=atol, rtol=rtol)

    def submatrix(self, terminals):
        """Block over a subset of terminals, in the order given."""
        idx = [self.terminal_index[t] for t in terminals]
        D = self.to_dense()[np.ix_(idx, idx)]
        return AdmittanceMatrix.from_dense(D, terminals, symmetry_tol=0.0)

    # -- arithmetic ---------------------------------------------------------

    def _combine(self, other, sign):
        if self.terminals != other.terminals:
            raise ValueError("terminal sets differ")
        acc = {}
        for i, j, v in self.triplets():
            acc[(i, j)] = v
        for i, j, v in other.triplets():
            acc[(i, j)] = acc.get((i, j), 0j) + sign * v
        items = [(i, j, v) for (i, j), v in acc.items() if v != 0]
        rows = [i for i, _, _ in items]
        cols = [j for _, j, _ in items]
        vals = [v for _, _, v in items]
        return AdmittanceMatrix(self.terminals, rows, cols, vals)

    def __add__(self, other):
        return self._combine(other, +1)

    def __sub__(self, other):
        return self._combine(other, -1)


# ---------------------------------------------------------------- assembly

def _series_admittance(branch):
    """Inverse of the series impedance block, exactly symmetrized."""
    if isinstance(branch, Switch):
        return branch.admittance_block()
    try:
        Yb = np.linalg.inv(branch.z)
    except np.linalg.LinAlgError:
        raise NetworkError(f"singular impedance matrix on line {branch.id!r}") from None
    return 0.5 * (Yb + Yb.T)


def assemble_ybus(net: Network) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix.

    Diagonal block of node n is the sum over incident closed branches of
    (half shunt + inverse series impedance); off-diagonal block (m, n) is
    minus the inverse series impedance.  Open switches contribute nothing.
    """
    net.validate()
    tindex = net.terminal_index
    Y = np.zeros((net.dim, net.dim), dtype=complex)
    for br in net.closed_branches():
        rows_m = [tindex[(br.from_node, p)] for p in br.phases]
        rows_n = [tindex[(br.to_node, p)] for p in br.phases]
        Yb = _series_admittance(br)
        ys = getattr(br, "ys", None)
        diag = Yb if ys is None else Yb + 0.25 * (ys + ys.T)  # half shunt, symmetrized
        Y[np.ix_(rows_m, rows_m)] += diag
        Y[np.ix_(rows_n, rows_n)] += diag
        Y[np.ix_(rows_m, rows_n)] -= Yb
        Y[np.ix_(rows_n, rows_m)] -= Yb
    return AdmittanceMatrix.from_dense(Y, net.terminals, symmetry_tol=0.0)


# ------------------------------------------------------------------ events

def apply_event(net: Network, ev: GridEvent) -> Network:
    """Return the network after the event; the original is untouched.

    Events that would be no-ops (opening an already-open switch) or that
    disconnect the graph from the slack are rejected.
    """
    comp = net.component_by_id.get(ev.target)
    if comp is None:
        raise NetworkError(f"unknown event target {ev.target!r}")
    if ev.kind in ("switch-open", "switch-close"):
        if not isinstance(comp, Switch):
            raise NetworkError(f"event {ev.kind} targets {ev.target!r}, which is not a switch")
        want_closed = ev.kind == "switch-close"
        if comp.closed == want_closed:
            state = "closed" if comp.closed else "open"
            raise NetworkError(f"switch {ev.target!r} is already {state}")
        switches = tuple(
            replace(s, closed=want_closed) if s.id == ev.target else s for s in net.switches
        )
        out = replace(net, switches=switches)
    elif ev.kind == "line-trip":
        if not isinstance(comp, Line):
            raise NetworkError(f"line-trip targets {ev.target!r}, which is not a line")
        out = replace(net, lines=tuple(ln for ln in net.lines if ln.id != ev.target))
    elif ev.kind == "block-perturb":
        if not isinstance(comp, Line):
            raise NetworkError("block-perturb applies to lines only")
        if ev.amount is None or ev.amount == -1:
            raise NetworkError("block-perturb requires an amount != -1")
        lines = tuple(
            replace(ln, z=ln.z / (1.0 + ev.amount)) if ln.id == ev.target else ln
            for ln in net.lines
        )
        out = replace(net, lines=lines)
    else:  # pragma: no cover - guarded by GridEvent.__post_init__
        raise NetworkError(f"unknown event kind {ev.kind!r}")
    if not out.is_connected():
        raise NetworkError(f"event {ev.kind} on {ev.target!r} disconnects the network from the slack")
    return out


def event_delta(net: Network, ev: GridEvent) -> AdmittanceMatrix:
    """Implied symmetric update: assemble(after) - assemble(before), exact."""
    return assemble_ybus(apply_event(net, ev)) - assemble_ybus(net)


# --------------------------------------------------------------------- IO

def ybus_to_dict(matrix: AdmittanceMatrix) -> dict:
    entries = []
    for i, j, v in matrix.triplets():
        entries.append([i, j, v.real, v.imag])
        if i != j:
            entries.append([j, i, v.real, v.imag])
    return {
        "dim": matrix.dim,
        "terminals": [[n, p] for n, p in matrix.terminals],
        "entries": entries,
    }


def ybus_from_dict(doc: dict) -> AdmittanceMatrix:
    try:
        dim = int(doc["dim"])
        terminals = [(str(n), str(p)) for n, p in doc["terminals"]]
        raw = doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed Y-bus document: {exc}") from exc
    if len(terminals) != dim:
        raise DataError(f"dim {dim} does not match {len(terminals)} terminals")
    seen = {}
    for entry in raw:
        if len(entry) != 4:
            raise DataError(f"entry {entry!r} is not [row, col, re, im]")
        i, j = int(entry[0]), int(entry[1])
        if not (0 <= i < dim and 0 <= j < dim):
            raise DataError(f"entry index ({i}, {j}) out of range for dim {dim}")
        if (i, j) in seen:
            raise DataError(f"duplicate triplet ({i}, {j})")
        seen[(i, j)] = complex(float(entry[2]), float(entry[3]))
    rows, cols, vals = [], [], []
    for (i, j), v in seen.items():
        if i == j:
            rows.append(i); cols.append(j); vals.append(v)
            continue
        mirror = seen.get((j, i))
        if mirror is None:
            raise DataError(f"asymmetric input: entry ({i}, {j}) has no mirror ({j}, {i})")
        if mirror != v:
            raise DataError(f"asymmetric input: entries ({i}, {j}) and ({j}, {i}) differ")
        if i > j:
            rows.append(i); cols.append(j); vals.append(v)
    return AdmittanceMatrix(terminals, rows, cols, vals)


def save_ybus(matrix: AdmittanceMatrix, path):
    with open(path, "w") as fh:
        json.dump(ybus_to_dict(matrix), fh)


def load_ybus(path) -> AdmittanceMatrix:
    with open(path) as fh:
        return ybus_from_dict(json.load(fh))


def network_to_dict(net: Network) -> dict:
    doc = {
        "nodes": [{"id": n.id, "phases": list(n.phases)} for n in net.nodes],
        "lines": [],
        "switches": [],
        "slack": net.slack,
    }
    for ln in net.lines:
        rec = {
            "id": ln.id,
            "from": ln.from_node,
            "to": ln.to_node,
            "phases": list(ln.phases),
            "z": matrix_to_pairs(ln.z),
        }
        if ln.ys is not None:
            rec["ys"] = matrix_to_pairs(ln.ys)
        doc["lines"].append(rec)
    for sw in net.switches:
        doc["switches"].append({
            "id": sw.id,
            "from": sw.from_node,
            "to": sw.to_node,
            "phases": list(sw.phases),
            "closed": sw.closed,
            "conductance": sw.conductance,
        })
    return doc


def network_from_dict(doc: dict) -> Network:
    try:
        nodes = tuple(Node(str(n["id"]), tuple(n["phases"])) for n in doc["nodes"])
        lines = []
        for i, rec in enumerate(doc.get("lines", [])):
            lines.append(Line(
                id=str(rec.get("id", f"ln{i:03d}")),
                from_node=str(rec["from"]),
                to_node=str(rec["to"]),
                phases=tuple(rec["phases"]),
                z=pairs_to_matrix(rec["z"]),
                ys=pairs_to_matrix(rec["ys"]) if rec.get("ys") is not None else None,
            ))
        switches = []
        for i, rec in enumerate(doc.get("switches", [])):
            switches.append(Switch(
                id=str(rec.get("id", f"sw{i:03d}")),
                from_node=str(rec["from"]),
                to_node=str(rec["to"]),
                phases=tuple(rec["phases"]),
                closed=bool(rec["closed"]),
                conductance=float(rec.get("conductance", 1e5)),
            ))
        net = Network(nodes=nodes, lines=tuple(lines), switches=tuple(switches),
                      slack=str(doc["slack"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed network document: {exc}") from exc
    net.validate()
    return net


def save_network(net: Network, path):
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))

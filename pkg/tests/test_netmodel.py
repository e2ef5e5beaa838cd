"""Network model and Y-bus assembly tests."""

import numpy as np
import pytest

from gridid import netmodel as nm
from gridid.exceptions import DataError, NetworkError


def two_node_net(z=0.01 + 0.1j):
    nodes = (nm.Node("b0", ("a",)), nm.Node("b1", ("a",)))
    lines = (nm.Line("ln0", "b0", "b1", ("a",), np.array([[z]])),)
    return nm.Network(nodes=nodes, lines=lines, switches=(), slack="b0")


def random_network(rng, n_nodes=8, phase_mix=True):
    nodes = [nm.Node("b00", ("a", "b", "c"))]
    lines = []
    for i in range(1, n_nodes):
        parent = nodes[int(rng.integers(0, i))]
        if phase_mix:
            k = int(rng.integers(1, len(parent.phases) + 1))
            phases = tuple(sorted(rng.choice(parent.phases, size=k, replace=False)))
        else:
            phases = parent.phases
        p = len(phases)
        diag = rng.uniform(0.02, 0.08, p) + 1j * rng.uniform(0.04, 0.12, p)
        Z = np.diag(diag)
        for a in range(p):
            for b in range(a + 1, p):
                m = 0.3 * rng.uniform(0.3, 0.9) * diag[[a, b]].mean()
                Z[a, b] = Z[b, a] = m
        nodes.append(nm.Node(f"b{i:02d}", phases))
        lines.append(nm.Line(f"ln{i:02d}", parent.id, f"b{i:02d}", phases, Z))
    return nm.Network(nodes=tuple(nodes), lines=tuple(lines), switches=(), slack="b00")


# ---------------------------------------------------------------- assembly


def test_two_node_line_blocks():
    z = 0.01 + 0.1j
    net = two_node_net(z)
    Y = nm.assemble_ybus(net).to_dense()
    y = 1.0 / z  # independent complex reciprocal
    np.testing.assert_allclose(Y, np.array([[y, -y], [-y, y]]), rtol=1e-14)


def test_shuntless_row_sums_zero():
    rng = np.random.default_rng(0)
    for seed in range(5):
        net = random_network(np.random.default_rng(seed), n_nodes=int(rng.integers(3, 30)))
        Y = nm.assemble_ybus(net)
        assert np.max(np.abs(Y.row_sums())) <= 1e-9


def test_assembly_symmetry_is_structural():
    net = random_network(np.random.default_rng(42), n_nodes=12)
    Y = nm.assemble_ybus(net)
    D = Y.to_dense()
    np.testing.assert_array_equal(D, D.T)


def test_open_switch_contributes_nothing():
    net = two_node_net()
    sw = nm.Switch("sw0", "b0", "b1", ("a",), closed=False)
    with_sw = nm.Network(nodes=net.nodes, lines=net.lines, switches=(sw,), slack="b0")
    np.testing.assert_array_equal(
        nm.assemble_ybus(with_sw).to_dense(), nm.assemble_ybus(net).to_dense()
    )


def test_closed_switch_adds_scalar_blocks():
    net = two_node_net()
    sw = nm.Switch("sw0", "b0", "b1", ("a",), closed=True, conductance=1e5)
    with_sw = nm.Network(nodes=net.nodes, lines=net.lines, switches=(sw,), slack="b0")
    delta = nm.assemble_ybus(with_sw).to_dense() - nm.assemble_ybus(net).to_dense()
    y = 1e5 * (1 - 0.1j)
    np.testing.assert_allclose(delta, np.array([[y, -y], [-y, y]]), rtol=1e-14)


def test_shunt_enters_diagonal_only():
    z = 0.02 + 0.05j
    ys = 0.0 + 2e-3j
    nodes = (nm.Node("b0", ("a",)), nm.Node("b1", ("a",)))
    line = nm.Line("ln0", "b0", "b1", ("a",), np.array([[z]]), ys=np.array([[ys]]))
    net = nm.Network(nodes=nodes, lines=(line,), switches=(), slack="b0")
    Y = nm.assemble_ybus(net).to_dense()
    y = 1.0 / z
    np.testing.assert_allclose(Y[0, 0], y + ys / 2, rtol=1e-14)
    np.testing.assert_allclose(Y[0, 1], -y, rtol=1e-14)


def test_singular_impedance_rejected_with_line_id():
    nodes = (nm.Node("b0", ("a", "b")), nm.Node("b1", ("a", "b")))
    Z = np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex)  # singular
    net = nm.Network(nodes=nodes, lines=(nm.Line("bad", "b0", "b1", ("a", "b"), Z),),
                     switches=(), slack="b0")
    with pytest.raises(NetworkError, match="bad"):
        nm.assemble_ybus(net)


def test_terminal_order_sorted():
    net = random_network(np.random.default_rng(1), n_nodes=6)
    assert list(net.terminals) == sorted(net.terminals)


def test_disconnected_network_rejected():
    nodes = (nm.Node("b0", ("a",)), nm.Node("b1", ("a",)), nm.Node("b2", ("a",)))
    lines = (nm.Line("ln0", "b0", "b1", ("a",), np.array([[0.1j]])),)
    net = nm.Network(nodes=nodes, lines=lines, switches=(), slack="b0")
    with pytest.raises(NetworkError, match="not connected"):
        net.validate()


def test_line_phases_must_be_subset_of_endpoints():
    nodes = (nm.Node("b0", ("a",)), nm.Node("b1", ("a", "b")))
    line = nm.Line("ln0", "b0", "b1", ("a", "b"), np.eye(2) * 0.1j)
    net = nm.Network(nodes=nodes, lines=(line,), switches=(), slack="b0")
    with pytest.raises(NetworkError, match="phases"):
        net.validate()


# ------------------------------------------------------------------ events


def switched_net():
    nodes = (nm.Node("b0", ("a",)), nm.Node("b1", ("a",)), nm.Node("b2", ("a",)))
    lines = (
        nm.Line("ln0", "b0", "b1", ("a",), np.array([[0.01 + 0.1j]])),
        nm.Line("ln1", "b1", "b2", ("a",), np.array([[0.02 + 0.08j]])),
    )
    switches = (nm.Switch("sw0", "b0", "b2", ("a",), closed=False, conductance=1e4),)
    return nm.Network(nodes=nodes, lines=lines, switches=switches, slack="b0")


def test_switch_close_delta_support():
    net = switched_net()
    ev = nm.GridEvent(time=5, kind="switch-close", target="sw0")
    delta = nm.event_delta(net, ev)
    y = 1e4 * (1 - 0.1j)
    idx = {t: i for i, t in enumerate(net.terminals)}
    i, j = idx[("b0", "a")], idx[("b2", "a")]
    D = delta.to_dense()
    expected = np.zeros_like(D)
    expected[i, i] = y
    expected[j, j] = y
    expected[i, j] = expected[j, i] = -y
    np.testing.assert_allclose(D, expected, rtol=1e-12, atol=1e-9)
    # support restricted to the switch terminals
    assert {(a, b) for a, b, _ in delta.nonzeros()} <= {(i, i), (j, j), (j, i)}


def test_open_already_open_switch_rejected():
    net = switched_net()
    with pytest.raises(NetworkError, match="already open"):
        nm.apply_event(net, nm.GridEvent(1, "switch-open", "sw0"))


def test_line_trip_delta_matches_assembly_difference():
    net = switched_net()
    # close the tie first so tripping ln1 keeps the graph connected
    net = nm.apply_event(net, nm.GridEvent(1, "switch-close", "sw0"))
    ev = nm.GridEvent(2, "line-trip", "ln1")
    before = nm.assemble_ybus(net)
    after = nm.assemble_ybus(nm.apply_event(net, ev))
    delta = nm.event_delta(net, ev)
    np.testing.assert_array_equal((after - before).to_dense(), delta.to_dense())
    y = 1.0 / (0.02 + 0.08j)
    idx = {t: i for i, t in enumerate(net.terminals)}
    i, j = idx[("b1", "a")], idx[("b2", "a")]
    D = delta.to_dense()
    np.testing.assert_allclose(D[i, i], -y, rtol=1e-12)
    np.testing.assert_allclose(D[j, j], -y, rtol=1e-12)
    np.testing.assert_allclose(D[i, j], y, rtol=1e-12)
    assert np.count_nonzero(D) == 4


def test_trip_only_path_rejected():
    net = switched_net()
    with pytest.raises(NetworkError, match="disconnects"):
        nm.apply_event(net, nm.GridEvent(1, "line-trip", "ln1"))


def test_unknown_target_rejected():
    with pytest.raises(NetworkError, match="unknown event target"):
        nm.apply_event(switched_net(), nm.GridEvent(1, "line-trip", "nope"))


def test_block_perturb_scales_branch_admittance():
    net = switched_net()
    amount = 0.25
    ev = nm.GridEvent(3, "block-perturb", "ln0", amount=amount)
    delta = nm.event_delta(net, ev)
    y = 1.0 / (0.01 + 0.1j)
    idx = {t: i for i, t in enumerate(net.terminals)}
    i, j = idx[("b0", "a")], idx[("b1", "a")]
    np.testing.assert_allclose(delta.to_dense()[i, j], -amount * y, rtol=1e-9)


def test_apply_event_commutes_with_assembly():
    rng = np.random.default_rng(3)
    for seed in range(5):
        net = random_network(np.random.default_rng(seed + 100), n_nodes=10)
        line = net.lines[int(rng.integers(0, len(net.lines)))]
        ev = nm.GridEvent(1, "block-perturb", line.id, amount=0.1 + 0.05j)
        delta = nm.event_delta(net, ev)
        lhs = nm.assemble_ybus(nm.apply_event(net, ev)).to_dense()
        rhs = nm.assemble_ybus(net).to_dense() + delta.to_dense()
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_event_immutability():
    net = switched_net()
    nm.apply_event(net, nm.GridEvent(1, "switch-close", "sw0"))
    assert not net.switches[0].closed  # original untouched


# ---------------------------------------------------------------------- IO


def test_ybus_round_trip(tmp_path):
    net = random_network(np.random.default_rng(8), n_nodes=7)
    Y = nm.assemble_ybus(net)
    path = tmp_path / "y.json"
    nm.save_ybus(Y, path)
    back = nm.load_ybus(path)
    assert back.terminals == Y.terminals
    np.testing.assert_array_equal(back.to_dense(), Y.to_dense())


def test_ybus_missing_mirror_rejected():
    doc = {"dim": 2, "terminals": [["b0", "a"], ["b1", "a"]],
           "entries": [[0, 1, 1.0, 0.0]]}
    with pytest.raises(DataError, match="no mirror"):
        nm.ybus_from_dict(doc)


def test_ybus_duplicate_triplets_rejected():
    doc = {"dim": 1, "terminals": [["b0", "a"]],
           "entries": [[0, 0, 1.0, 0.0], [0, 0, 1.0, 0.0]]}
    with pytest.raises(DataError, match="duplicate"):
        nm.ybus_from_dict(doc)


def test_ybus_empty_matrix_valid():
    doc = {"dim": 0, "terminals": [], "entries": []}
    Y = nm.ybus_from_dict(doc)
    assert Y.dim == 0
    assert Y.to_dense().shape == (0, 0)


def test_admittance_entry_and_submatrix():
    net = random_network(np.random.default_rng(21), n_nodes=6)
    Y = nm.assemble_ybus(net)
    D = Y.to_dense()
    assert Y.entry(2, 0) == D[2, 0]
    assert Y.entry(0, 2) == D[2, 0]  # mirrored read
    sub_terms = Y.terminals[1:4]
    S = Y.submatrix(sub_terms)
    np.testing.assert_array_equal(S.to_dense(), D[1:4, 1:4])


def test_network_round_trip(tmp_path):
    net = switched_net()
    path = tmp_path / "net.json"
    nm.save_network(net, path)
    back = nm.load_network(path)
    assert back.terminals == net.terminals
    np.testing.assert_array_equal(
        nm.assemble_ybus(back).to_dense(), nm.assemble_ybus(net).to_dense()
    )

import numpy as np
import pytest

from passnet.errors import DimensionError, TopologyError
from passnet.linsys import LtiEdge, LtiNode
from passnet.microgrid import CASE_LINE, LoadParams
from passnet.netgraph import (AddEdge, DirectedGraph, NetworkModel, RemoveEdge, SetEdgeParam,
                              SetNodeParam, assemble_global, embed_gains, find_edge,
                              incidence_matrix, modify_topology)

PLUGGED_EDGES = ((1, 4), (1, 2), (2, 5), (5, 3))


def test_incidence_two_nodes():
    B = incidence_matrix(DirectedGraph((1, 2), ((1, 2),)))
    assert B.tolist() == [[-1], [1]]
    assert B.dtype.kind == "i"


def test_incidence_without_edges():
    assert incidence_matrix(DirectedGraph((1, 2, 3))).shape == (3, 0)


def test_incidence_plugged_network_columns():
    B = incidence_matrix(DirectedGraph((1, 2, 3, 4, 5), PLUGGED_EDGES))
    expected = np.array([
        [-1, 0, 0, 1, 0],
        [-1, 1, 0, 0, 0],
        [0, -1, 0, 0, 1],
        [0, 0, 1, 0, -1],
    ]).T
    np.testing.assert_array_equal(B, expected)


@pytest.mark.parametrize("edges", [((1, 1),), ((1, 7),)])
def test_graph_rejects_bad_edges(edges):
    with pytest.raises(TopologyError):
        DirectedGraph((1, 2), edges)


def test_graph_rejects_duplicate_nodes():
    with pytest.raises(TopologyError):
        DirectedGraph((1, 1))


def test_parallel_edges_are_accepted_with_distinct_labels():
    g = DirectedGraph((1, 2), ((1, 2), (1, 2)))
    assert incidence_matrix(g).tolist() == [[-1, -1], [1, 1]]
    m = NetworkModel.from_params(g, {1: LoadParams(1.0, 1.0), 2: LoadParams(1.0, 1.0)},
                                 [CASE_LINE, CASE_LINE])
    assert m.state_labels == ("v[1]", "v[2]", "i[1_2]", "i[1_2#1]")


def test_single_node_assembly(dgu_node):
    m = NetworkModel(DirectedGraph((1,)), {1: dgu_node}, [])
    A, B = assemble_global(m)
    np.testing.assert_array_equal(A, dgu_node.A)
    np.testing.assert_array_equal(B, dgu_node.Bu)


def test_dgu_line_load_coupling_signs(dgu_node):
    load = LoadParams(c=70e-6, g=0.1)
    line = CASE_LINE
    g = DirectedGraph((1, 4), ((1, 4),))
    m = NetworkModel(g, {1: dgu_node, 4: load.to_lti()}, [line.to_lti()])
    A, B = assemble_global(m)
    assert A.shape == (5, 5) and B.shape == (5, 1)
    v1, v4, i14 = 1, 3, 4
    c = 2.2e-3
    # source node gains +i/c, sink loses i/c_l; the line sees v_sink - v_source
    assert A[v1, i14] == pytest.approx(1.0 / c)
    assert A[v4, i14] == pytest.approx(-1.0 / load.c)
    assert A[i14, v1] == pytest.approx(-1.0 / line.l)
    assert A[i14, v4] == pytest.approx(1.0 / line.l)
    # positive line current flows sink -> source, so i_o of the source bus is -i
    # and the integrator row picks up z * i_o = -z * i
    assert A[2, i14] == pytest.approx(-1.0)


def test_full_network_dimensions(case_study):
    model = case_study[0]
    full = modify_topology(model, AddEdge(5, 3, params=CASE_LINE))
    A, B = assemble_global(full)
    assert A.shape == (15, 15)
    assert B.shape == (15, 3)


def test_remove_only_edge_decouples(dgu_node):
    g = DirectedGraph((1, 4), ((1, 4),))
    m = NetworkModel(g, {1: dgu_node, 4: LoadParams(70e-6, 0.1).to_lti()}, [CASE_LINE.to_lti()])
    m2 = modify_topology(m, RemoveEdge(0))
    A = m2.A_hat
    assert A.shape == (4, 4)
    np.testing.assert_array_equal(A[:3, 3:], 0.0)
    np.testing.assert_array_equal(A[3:, :3], 0.0)


def test_remove_then_add_is_identity(case_study):
    model = case_study[0]
    full = modify_topology(model, AddEdge(5, 3, params=CASE_LINE))
    again = modify_topology(modify_topology(full, RemoveEdge(find_edge(full.graph, 5, 3))),
                            AddEdge(5, 3, params=CASE_LINE))
    np.testing.assert_array_equal(again.A_hat, full.A_hat)
    np.testing.assert_array_equal(again.B_hat, full.B_hat)
    assert again.state_labels == full.state_labels


def test_set_g4_changes_only_one_entry(case_study):
    model = case_study[0]
    m2 = modify_topology(model, SetNodeParam(4, "g", 0.15))
    diff = np.argwhere(m2.A_hat != model.A_hat)
    k = model.state_labels.index("v[4]")
    assert diff.tolist() == [[k, k]]
    assert m2.A_hat[k, k] == pytest.approx(-0.15 / 70e-6)


def test_matrix_entry_path_and_edge_param(case_study):
    model = case_study[0]
    m2 = modify_topology(model, SetNodeParam(4, "A[0,0]", -1.0))
    assert m2.node_systems[4].A[0, 0] == -1.0
    assert 4 not in m2.node_params  # raw edit detaches the parameter record
    m3 = modify_topology(model, SetEdgeParam(0, "r", 0.1))
    assert m3.edge_systems[0].A[0, 0] == pytest.approx(-0.1 / CASE_LINE.l)


@pytest.mark.parametrize("change", [
    SetNodeParam(9, "g", 1.0),
    SetNodeParam(4, "nonsense", 1.0),
    SetNodeParam(4, "A[3,3]", 1.0),
    RemoveEdge(7),
    SetEdgeParam(5, "r", 1.0),
    AddEdge(1, 9, params=CASE_LINE),
])
def test_modify_topology_errors(case_study, change):
    with pytest.raises(TopologyError):
        modify_topology(case_study[0], change)


def test_modify_preserves_existing_order(case_study):
    model = case_study[0]
    full = modify_topology(model, AddEdge(5, 3, params=CASE_LINE))
    assert full.state_labels[:model.n_states] == model.state_labels
    assert full.state_labels[-1] == "i[5_3]"


def test_port_dimension_mismatch():
    node = LtiNode([[-1.0]], None, [[1.0, 0.0]], [[1.0], [0.0]])
    other = LtiNode([[-1.0]], None, [[1.0]], [[1.0]])
    with pytest.raises(DimensionError):
        NetworkModel(DirectedGraph((1, 2)), {1: node, 2: other}, [])


def test_edge_count_mismatch():
    n = LtiNode([[-1.0]], None, [[1.0]], [[1.0]])
    with pytest.raises(DimensionError):
        NetworkModel(DirectedGraph((1, 2), ((1, 2),)), {1: n, 2: n}, [])


def test_node_set_mismatch():
    n = LtiNode([[-1.0]], None, [[1.0]], [[1.0]])
    with pytest.raises(TopologyError):
        NetworkModel(DirectedGraph((1, 2)), {1: n}, [])


def test_embed_gains_checks(case_study, case_gains):
    model = case_study[0]
    K = embed_gains(model, case_gains)
    assert K.shape == (3, 14)
    with pytest.raises(DimensionError):
        embed_gains(model, {1: case_gains[1]})
    with pytest.raises(DimensionError):
        embed_gains(model, {**case_gains, 2: np.zeros((1, 2))})


def test_reference_vector(case_study):
    model, refs, _ = case_study
    b = model.reference_vector()
    for node, v in ((1, 48.0), (2, 47.8), (3, 48.1)):
        assert b[model.state_labels.index(f"zeta[{node}]")] == -v
    assert np.count_nonzero(b) == 3
    b2 = model.reference_vector({1: np.array([50.0])})
    assert b2[model.state_labels.index("zeta[1]")] == -50.0


def test_port_maps_match_interconnection(case_study, rng):
    model = case_study[0]
    Wv, Yv, We, Ye = model.port_maps()
    x = rng.standard_normal(model.n_states)
    B = model.incidence
    np.testing.assert_allclose(Wv @ x, -B @ (Ye @ x))
    np.testing.assert_allclose(We @ x, B.T @ (Yv @ x))


def test_generic_edge_system():
    e = LtiEdge([[-2.0]], [[1.0]], [[1.0]])
    n = LtiNode([[-1.0]], None, [[1.0]], [[1.0]])
    m = NetworkModel(DirectedGraph(("a", "b"), (("a", "b"),)), {"a": n, "b": n}, [e])
    assert m.A_hat.shape == (3, 3)
    assert m.state_labels == ("x0[a]", "x0[b]", "x0[a_b]")

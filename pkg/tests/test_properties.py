"""Property-based checks of structural invariants."""
import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.sparse.csgraph import connected_components

from passnet.linsys import bmi_matrix, check_strict_passivity
from passnet.microgrid import CASE_DGU, DguParams, LineParams, LoadParams
from passnet.netgraph import (AddEdge, DirectedGraph, NetworkModel, RemoveEdge, SetNodeParam,
                              incidence_matrix, modify_topology)
from passnet.sim import CsvTable, Event, EventSchedule, kernels, read_csv, write_table
from passnet.synthesis import retune, state_cost_block, synthesize_node

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
positive = st.floats(1e-3, 10.0, allow_nan=False)


@st.composite
def graphs(draw, min_nodes=2, max_nodes=7):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1])
    edges = draw(st.lists(pairs, max_size=2 * n))
    return DirectedGraph(tuple(range(n)), tuple(edges))


@st.composite
def networks(draw):
    g = draw(graphs())
    params = {}
    for node in g.nodes:
        if draw(st.booleans()):
            params[node] = DguParams(**CASE_DGU, v_set=draw(st.floats(40.0, 50.0)))
        else:
            params[node] = LoadParams(draw(positive) * 1e-4, draw(positive) * 0.1)
    lines = [LineParams(draw(positive) * 0.1, draw(positive) * 1e-5) for _ in g.edges]
    return NetworkModel.from_params(g, params, lines)


@SETTINGS
@given(graphs())
def test_incidence_columns_and_rank(g):
    B = incidence_matrix(g)
    assert np.all(B.sum(axis=0) == 0)
    assert np.all(np.abs(B).sum(axis=0) == 2)
    adj = np.zeros((len(g.nodes), len(g.nodes)))
    for s, d in g.edges:
        adj[s, d] = 1
    n_comp, _ = connected_components(adj, directed=False)
    rank = np.linalg.matrix_rank(B) if g.edges else 0
    assert rank == len(g.nodes) - n_comp


def _relabel(model, order):
    """Same network with nodes listed in ``order``."""
    g = DirectedGraph(tuple(order), model.graph.edges)
    return NetworkModel(g, model.node_systems, model.edge_systems, model.coupling_dim,
                        model.node_params, model.edge_params)


def _permutation(src_labels, dst_labels):
    return [src_labels.index(lab) for lab in dst_labels]


@SETTINGS
@given(networks(), st.randoms(use_true_random=False))
def test_assembly_is_permutation_equivariant(model, rnd):
    order = list(model.graph.nodes)
    rnd.shuffle(order)
    other = _relabel(model, order)
    p = _permutation(model.state_labels, other.state_labels)
    q = _permutation(model.input_labels, other.input_labels)
    np.testing.assert_array_equal(other.A_hat, model.A_hat[np.ix_(p, p)])
    np.testing.assert_array_equal(other.B_hat, model.B_hat[np.ix_(p, q)])


@SETTINGS
@given(networks(), st.data())
def test_remove_then_add_restores_model(model, data):
    assume(model.graph.edges)
    k = data.draw(st.integers(0, len(model.graph.edges) - 1))
    src, dst = model.graph.edges[k]
    removed = modify_topology(model, RemoveEdge(k))
    restored = modify_topology(removed, AddEdge(src, dst, params=model.edge_params[k]))
    assert sorted(restored.graph.edges) == sorted(model.graph.edges)
    if len(set(model.graph.edges)) == len(model.graph.edges):
        # relabeling by state names absorbs the moved edge
        p = _permutation(model.state_labels, restored.state_labels)
        np.testing.assert_array_equal(restored.A_hat, model.A_hat[np.ix_(p, p)])
        assert restored.B_hat.shape == model.B_hat.shape


def _random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@SETTINGS
@given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_bmi_symmetry_and_orthogonal_invariance(n, p, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    Bw = rng.standard_normal((n, p))
    C = rng.standard_normal((p, n))
    L = rng.standard_normal((n, n))
    P = L @ L.T + np.eye(n)
    Gi = np.diag(rng.uniform(0.1, 2.0, n))
    M = bmi_matrix(A, Bw, C, P, Gamma_inv=Gi)
    np.testing.assert_array_equal(M, M.T)
    T = _random_orthogonal(rng, n)
    M2 = bmi_matrix(T @ A @ T.T, T @ Bw, C @ T.T, T @ P @ T.T, Gamma_inv=T @ Gi @ T.T)
    np.testing.assert_allclose(np.linalg.eigvalsh(M2), np.linalg.eigvalsh(M),
                               atol=1e-9 * max(1.0, np.abs(M).max()))


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 10.0))
def test_synthesis_scale_covariance(alpha):
    node = DguParams(**CASE_DGU).to_lti()
    base = synthesize_node(node)
    scaled = synthesize_node(dataclasses.replace(node, Bw=alpha * node.Bw, C=alpha * node.C))
    assert scaled.s == pytest.approx(base.s, rel=1e-5)
    np.testing.assert_allclose(scaled.Y, base.Y, rtol=1e-4, atol=1e-8 * np.abs(base.Y).max())


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1.0))
def test_retune_monotonicity(frac):
    node = DguParams(**CASE_DGU).to_lti()
    res = _cached_result()
    rbar = frac * res.R_scalar
    rt = retune(res, rbar)
    assert rt.valid
    assert check_strict_passivity(node, rt.K, res.certificate).passed
    dQ = state_cost_block(res.P, node.A, node.Bu, rbar * np.eye(1)) - state_cost_block(res.P, node.A, node.Bu, res.R)
    assert np.linalg.eigvalsh(dQ)[0] >= -1e-9 * np.abs(dQ).max()


_RESULT = []


def _cached_result():
    if not _RESULT:
        _RESULT.append(synthesize_node(DguParams(**CASE_DGU).to_lti()))
    return _RESULT[0]


@SETTINGS
@given(st.lists(st.floats(0.0, 100.0), max_size=8))
def test_schedule_accepts_only_increasing_times(times):
    events = [Event(t, SetNodeParam(4, "g", 0.1)) for t in times]
    increasing = all(a < b for a, b in zip(times, times[1:]))
    if increasing:
        assert [e.t for e in EventSchedule(events)] == times
    else:
        with pytest.raises(ValueError):
            EventSchedule(events)


finite_or_nan = st.one_of(st.floats(allow_infinity=False, allow_nan=False, width=64), st.just(np.nan))


@SETTINGS
@given(st.integers(1, 4).flatmap(
    lambda c: arrays(np.float64, st.tuples(st.integers(0, 6), st.just(c)), elements=finite_or_nan)))
def test_csv_round_trip_is_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    header = [f"c{k}" for k in range(data.shape[1])]
    write_table(path, CsvTable(header, data))
    back = read_csv(path)
    assert back.header == header
    np.testing.assert_array_equal(back.data, data)


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba unavailable")
@SETTINGS
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(1e-4, 1e-2), st.integers(1, 50))
def test_numba_and_numpy_kernels_agree(n, seed, h, steps):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) - 3 * np.eye(n)
    b = rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    M, c = kernels.trapezoid_operator(A, b, h)
    for prop, args in ((kernels.propagate_affine, (M, c)), (kernels.propagate_rk4, (A, b, h))):
        o1, o2 = np.empty((steps + 1, n)), np.empty((steps + 1, n))
        r1 = prop(*args, x0, steps, o1, use_numba=True)
        r2 = prop(*args, x0, steps, o2, use_numba=False)
        assert r1 == r2
        np.testing.assert_allclose(o1, o2, rtol=1e-11, atol=1e-12)


@SETTINGS
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_trapezoid_preserves_affine_equilibrium(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) - 3 * np.eye(n)
    b = rng.standard_normal(n)
    x_eq = np.linalg.solve(A, -b)
    M, c = kernels.trapezoid_operator(A, b, 1e-2)
    np.testing.assert_allclose(M @ x_eq + c, x_eq, atol=1e-12 * max(1.0, np.abs(x_eq).max()))

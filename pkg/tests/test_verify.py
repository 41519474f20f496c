import json

import numpy as np
import pytest

from passnet.errors import ConvergenceError, DimensionError
from passnet.microgrid import natural_certificate
from passnet.netgraph import DirectedGraph, NetworkModel, SetNodeParam
from passnet.sim import Event, simulate
from passnet.synthesis import build_cost_certificate, synthesize_node
from passnet.verify import (DissipationMonitor, VerificationReport, are_residual, cost_to_go_matrix,
                            dissipation_check, lqr_oracle, network_state_cost, trajectory_cost,
                            verify_network, verify_retune)


def _certs(model, results):
    nodes = {n: results[n].certificate for n in model.controlled_nodes}
    for n in model.graph.nodes:
        if n not in nodes:
            nodes[n] = natural_certificate(model.node_params[n])
    edges = {pair: natural_certificate(model.edge_params[k]) for k, pair in enumerate(model.graph.edges)}
    return nodes, edges


def test_are_residual_scalar():
    # A = -1, B = 1, Q = 1, R = 1: 2 a m - m^2 + q = 0 in the half-value convention
    m = -1 + np.sqrt(2)
    assert are_residual([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[2 * m]]) < 1e-14
    assert are_residual([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[2 * m * 1.01]]) > 1e-3


def test_lqr_oracle_scalar():
    M, K = lqr_oracle([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    m = -1 + np.sqrt(2)
    assert M[0, 0] == pytest.approx(m, rel=1e-12)
    assert K[0, 0] == pytest.approx(-m, rel=1e-12)


def test_lqr_oracle_matches_scipy():
    import scipy.linalg as sla

    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    B = np.array([[0.0], [1.0]])
    Q, R = np.diag([2.0, 1.0]), np.array([[0.5]])
    M, K = lqr_oracle(A, B, Q, R)
    X = sla.solve_continuous_are(A, B, Q, R)
    np.testing.assert_allclose(M, X, rtol=1e-10)
    np.testing.assert_allclose(K, -np.linalg.solve(R, B.T @ X), rtol=1e-10)


def test_scalar_synthesis_is_lqr_optimal(scalar_node):
    res = synthesize_node(scalar_node)
    model = NetworkModel(DirectedGraph(("a",)), {"a": scalar_node}, [])
    cert = build_cost_certificate(model, {"a": res})
    assert cert.Q_global[0, 0] == pytest.approx(2.5, rel=1e-7)
    M, K = lqr_oracle(model.A_hat, model.B_hat, cert.Q_global, cert.R_global)
    assert K[0, 0] == pytest.approx(res.K[0, 0], rel=1e-8)
    assert M[0, 0] == pytest.approx(0.5 * res.P[0, 0], rel=1e-8)


def test_network_state_cost_matches_matrix(case_study, case_results, case_cert, rng):
    model = case_study[0]
    for _ in range(10):
        x = rng.standard_normal(model.n_states)
        q = network_state_cost(x, model, case_results)
        assert q == pytest.approx(x @ case_cert.Q_global @ x, rel=1e-10)
    with pytest.raises(DimensionError):
        network_state_cost(np.zeros(3), model, case_results)


def test_network_state_cost_lines_and_loads(case_study, case_results):
    model = case_study[0]
    x = np.zeros(model.n_states)
    x[model.node_slice(4)] = 2.0
    # load: -(c v)(-g v / c) = g v^2
    assert network_state_cost(x, model, case_results) == pytest.approx(0.1 * 4.0)
    x[:] = 0.0
    x[model.edge_slice(0)] = 3.0
    assert network_state_cost(x, model, case_results) == pytest.approx(0.05 * 9.0)


def _scalar_traj(K, x0=1.0, t_end=5.0, dt=1e-3):
    from passnet.linsys import LtiNode

    node = LtiNode([[-1.0]], [[1.0]], [[1.0]], [[1.0]], ("x",))
    model = NetworkModel(DirectedGraph(("a",)), {"a": node}, [])
    return model, simulate(model, {"a": np.array([[K]])}, refs={"a": 0.0}, x0=[x0], dt=dt, t_end=t_end)


def test_trajectory_cost_scalar_example():
    # u = -x: x = exp(-2t), J = int 1.5 x^2 + 0.5 u^2 = 0.5
    model, traj = _scalar_traj(-1.0, dt=1e-4)
    X = cost_to_go_matrix(model.A_hat, model.B_hat, [[-1.0]], [[1.5]], [[0.5]])
    cost = trajectory_cost(traj, [[1.5]], [[0.5]], [[-1.0]], tail_matrix=X)
    assert X[0, 0] == pytest.approx(0.5)
    assert cost.J == pytest.approx(0.5, rel=1e-6)
    assert cost.bounded


def test_trajectory_cost_zero_state():
    _, traj = _scalar_traj(-1.0, x0=0.0, t_end=0.1)
    cost = trajectory_cost(traj, [[1.0]], [[1.0]], [[-1.0]])
    assert cost.J == 0.0 and cost.tail == 0.0


def test_trajectory_cost_without_tail_is_nan_when_not_settled():
    _, traj = _scalar_traj(-1.0, t_end=0.1)
    cost = trajectory_cost(traj, [[1.0]], [[1.0]], [[-1.0]])
    assert np.isnan(cost.tail)
    assert cost.J == pytest.approx(cost.integral)


def test_trajectory_cost_unbounded():
    _, traj = _scalar_traj(5.0, t_end=3.0)
    cost = trajectory_cost(traj, [[1.0]], [[1.0]], [[5.0]])
    assert not cost.bounded and cost.J == np.inf
    with pytest.raises(ConvergenceError):
        cost_to_go_matrix([[-1.0]], [[1.0]], [[5.0]], [[1.0]], [[1.0]])


def test_optimal_gain_beats_perturbation():
    from passnet.linsys import LtiNode

    node = LtiNode([[-1.0]], [[1.0]], [[1.0]], [[1.0]], ("x",))
    res = synthesize_node(node)
    Q, R = [[2.5]], res.R
    for K in (res.K[0, 0], 0.8 * res.K[0, 0], 1.2 * res.K[0, 0]):
        X = cost_to_go_matrix([[-1.0]], [[1.0]], [[K]], Q, R)
        _, traj = _scalar_traj(K, t_end=0.5, dt=1e-4)
        cost = trajectory_cost(traj, Q, R, [[K]], tail_matrix=X)
        assert cost.J == pytest.approx(X[0, 0], rel=1e-6)
    X_opt = cost_to_go_matrix([[-1.0]], [[1.0]], res.K, Q, R)
    assert X_opt[0, 0] == pytest.approx(0.5 * res.P[0, 0], rel=1e-8)
    assert cost_to_go_matrix([[-1.0]], [[1.0]], [[0.8 * res.K[0, 0]]], Q, R)[0, 0] > X_opt[0, 0]


def test_dissipation_at_equilibrium(case_study, case_results, case_gains):
    model, refs, _ = case_study
    traj = simulate(model, case_gains, refs, dt=1e-5, t_end=0.01)
    nodes, edges = _certs(model, case_results)
    margins = dissipation_check(traj, nodes, edges)
    assert set(margins) == set(nodes) | set(edges)
    for m in margins.values():
        assert abs(m.min_margin) < 1e-6


def test_dissipation_through_load_step(case_study, case_results, case_gains):
    model, refs, _ = case_study
    nodes, edges = _certs(model, case_results)
    monitor = DissipationMonitor(nodes, edges)
    traj = simulate(model, case_gains, refs, schedule=[Event(0.01, SetNodeParam(4, "g", 0.15))],
                    dt=2e-6, t_end=0.05, on_chunk=monitor, record_every=10)
    assert monitor.worst_normalized > -1e-6
    # the decimated output gives a coarser but still consistent check
    assert len(traj.segments) == 2


def test_dissipation_violated_in_open_loop(case_study, case_results, rng):
    model = case_study[0]
    zero = {n: np.zeros((1, 3)) for n in model.controlled_nodes}
    x0 = rng.standard_normal(model.n_states)
    traj = simulate(model, zero, refs={n: 0.0 for n in model.controlled_nodes}, x0=x0, dt=1e-5, t_end=0.01)
    nodes, _ = _certs(model, case_results)
    margins = dissipation_check(traj, {n: nodes[n] for n in model.controlled_nodes})
    assert min(m.min_normalized for m in margins.values()) < -1e-3


def test_verify_network_passes(case_study, case_results, case_cert):
    report = verify_network(case_study[0], case_results, case_cert)
    assert report.passed, [c.name for c in report.failures()]
    names = [c.name for c in report.checks]
    assert "ARE residual" in names and "closed loop Hurwitz" in names
    doc = json.loads(report.to_json())
    assert doc["passed"] is True
    assert len(doc["checks"]) == len(report.checks)


def test_verify_network_catches_bad_certificate(case_study, case_results, case_cert):
    import dataclasses

    bad = dataclasses.replace(case_cert, P_hat=case_cert.P_hat * 1.01)
    report = verify_network(case_study[0], case_results, bad, tag="bad")
    assert not report.passed
    assert any(c.name == "bad: ARE residual" for c in report.failures())


@pytest.mark.parametrize("rbar", [1.55, 0.5, 0.1, 0.01])
def test_verify_retune_accepts_smaller_weights(case_study, case_results, rbar):
    assert verify_retune(case_study[0], case_results, rbar).passed


def test_verify_retune_rejects_larger_weight(case_study, case_results):
    report = verify_retune(case_study[0], case_results, 2.0, tag="r")
    failed = {c.name for c in report.failures()}
    assert "r: retune valid [node 1]" in failed


def test_report_add_semantics():
    rep = VerificationReport()
    rep.add("a", 1e-9, 1e-6)
    rep.add("b", 1.0, 0.5)
    assert [c.passed for c in rep.checks] == [True, False]
    assert not rep.passed and rep.failures()[0].name == "b"

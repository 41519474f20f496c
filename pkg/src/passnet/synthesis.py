"""Decentralized passivating LQR-optimal controllers from per-node LMIs.

For each controllable node the program in ``(Y, s)``

    minimize  s
    s.t.      Y C' = Bw                                   (port alignment)
              Y A' + A Y - 2 s Bu Bu'  <= -eps I          (passivity)
              s/2 Bu Bu' - (A Y + Y A')/2 >= eps I        (positive state cost)
              Y A' + A Y - 2 s Bu Bu'  <= lam Y           (decay rate)
              Y >= eps I,  s_min <= s <= s_max

gives storage ``P = Y^-1``, control weight ``R = I/(2s)`` (largest attainable)
and gain ``K = -R^-1 Bu' P / 2``. The composite gain is then the exact LQR
optimum of the network for ``R = blockdiag(R_i)`` and a block-diagonal ``Q(R)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
import scipy.linalg as sla

from . import sdp
from .errors import DimensionError, IllConditionedError, InfeasibleError, SolverError
from .linsys import LtiNode, PassivityCertificate, is_spd
from .netgraph import embed_gains

__all__ = [
    "SynthesisOptions",
    "SynthesisResult",
    "CostCertificate",
    "Retune",
    "CONSTRAINT_ORDER",
    "build_problem",
    "synthesize_node",
    "controller_gain",
    "state_cost_block",
    "build_cost_certificate",
    "retune",
    "retuned_result",
    "embed_gains",
]

#: constraint classes in the order they are added when diagnosing infeasibility
CONSTRAINT_ORDER = ("storage_pd", "s_bounds", "passivity", "q_positive", "decay")

CONSTRAINT_DESCRIPTIONS = {
    "port_alignment": "port alignment equality Y C' = Bw",
    "storage_pd": "storage positivity Y > 0",
    "s_bounds": "bounds on s",
    "passivity": "passivity LMI",
    "q_positive": "state-cost positivity LMI",
    "decay": "decay-rate LMI",
}


@dataclass(frozen=True)
class SynthesisOptions:
    """Settings for :func:`synthesize_node`.

    ``epsilon=None`` selects ``1e-6 * max(1, ||A||_F)`` per node. ``lam=None``
    drops the decay constraint.
    """

    lam: float | None = -8.0
    epsilon: float | None = None
    s_min: float = 1e-9
    s_max: float = 1e9
    tolerances: Mapping = field(default_factory=dict)
    max_condition: float = 1e12

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.s_min < self.s_max:
            raise ValueError("need 0 < s_min < s_max")

    def epsilon_for(self, A) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return 1e-6 * max(1.0, float(np.linalg.norm(A, "fro")))


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    """Per-node certificate; ``K`` is always recomputed from ``P`` and ``R``."""

    Y: np.ndarray
    P: np.ndarray
    s: float
    R: np.ndarray
    Gamma: np.ndarray
    Gamma_inv: np.ndarray
    Bu: np.ndarray
    margins: Mapping = field(default_factory=dict)
    status: str = "optimal"

    @property
    def K(self) -> np.ndarray:
        return controller_gain(self.P, self.Bu, self.R)

    @property
    def certificate(self) -> PassivityCertificate:
        return PassivityCertificate(self.P, self.Gamma, Gamma_inv=self.Gamma_inv)

    @property
    def R_scalar(self) -> float:
        """``R`` as a scalar when it is a multiple of the identity, else ``nan``."""
        d = self.R[0, 0]
        return float(d) if np.allclose(self.R, d * np.eye(len(self.R)), rtol=0, atol=0) else float("nan")


def controller_gain(P, Bu, R) -> np.ndarray:
    """``K = -R^-1 Bu' P / 2``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Bu = np.asarray(Bu, dtype=float).reshape(P.shape[0], -1)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return -0.5 * np.linalg.solve(R, Bu.T @ P)


def _sym_basis(n):
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def build_problem(node: LtiNode, opts: SynthesisOptions) -> sdp.SdpProblem:
    """Coefficient-matrix form of the node program (variables: Y entries, then s)."""
    if not node.controlled:
        raise DimensionError("node has no control input")
    A, Bu, Bw, C = node.A, node.Bu, node.Bw, node.C
    n = node.n
    eps = opts.epsilon_for(A)
    basis = _sym_basis(n)
    nv = len(basis) + 1
    BB = Bu @ Bu.T
    I = np.eye(n)
    Z = np.zeros((n, n))

    def lyap(E):
        return E @ A.T + A @ E

    blocks = [
        sdp.LmiBlock("storage_pd", eps * I, [-E for E in basis] + [Z]),
        sdp.LmiBlock("passivity", eps * I, [lyap(E) for E in basis] + [-2.0 * BB]),
        sdp.LmiBlock("q_positive", eps * I, [0.5 * lyap(E) for E in basis] + [-0.5 * BB]),
        sdp.LmiBlock("s_bounds", np.array([[opts.s_min]]), [np.zeros((1, 1))] * len(basis) + [-np.ones((1, 1))]),
        sdp.LmiBlock("s_bounds", np.array([[-opts.s_max]]), [np.zeros((1, 1))] * len(basis) + [np.ones((1, 1))]),
    ]
    # for lam >= 0 the decay block is implied by the passivity block (lam Y >= 0 > -eps I);
    # keeping the duplicate makes the interior-point scaling degenerate
    if opts.lam is not None and opts.lam < 0:
        blocks.append(sdp.LmiBlock("decay", Z, [lyap(E) - opts.lam * E for E in basis] + [-2.0 * BB]))

    # Y C' = Bw, one row per entry of the n-by-p product
    p = node.p
    rows, rhs = [], []
    for i in range(n):
        for k in range(p):
            rows.append([(E @ C.T)[i, k] for E in basis] + [0.0])
            rhs.append(Bw[i, k])
    c = np.zeros(nv)
    c[-1] = 1.0
    names = [f"Y[{i},{j}]" for i in range(n) for j in range(i, n)] + ["s"]
    return sdp.SdpProblem(c, blocks, np.array(rows), np.array(rhs), names)


def _unpack(x, n):
    Y = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            Y[i, j] = Y[j, i] = x[k]
            k += 1
    return Y, float(x[-1])


def diagnose_infeasibility(problem: sdp.SdpProblem, tolerances=None) -> str:
    """Name the first constraint class whose addition makes the problem infeasible."""
    if sdp._reduce_equalities(problem) is None:
        return "port_alignment"
    active = []
    for name in CONSTRAINT_ORDER:
        if not any(b.name == name for b in problem.blocks):
            continue
        active.append(name)
        sub = problem.subset(active)
        # pure feasibility: no objective to push the iterates onto the boundary
        sub.c = np.zeros_like(sub.c)
        try:
            sol = sdp.solve(sub, tolerances)
        except SolverError:
            continue
        if sol.status == "infeasible":
            return name
    return "unknown"


def synthesize_node(node: LtiNode, opts: SynthesisOptions | None = None) -> SynthesisResult:
    """Solve the node program and recover ``(Y, P, s, R, Gamma, K)``.

    Raises
    ------
    InfeasibleError
        With ``constraint`` set to the first violated constraint class.
    SolverError, IllConditionedError
    """
    opts = opts or SynthesisOptions()
    problem = build_problem(node, opts)
    sol = sdp.solve(problem, opts.tolerances)
    if sol.status in ("infeasible", "unknown"):
        culprit = diagnose_infeasibility(problem, opts.tolerances)
        if sol.status == "unknown" and culprit == "unknown":
            raise SolverError("solver stopped without a usable point")
        raise InfeasibleError(
            f"synthesis infeasible: {CONSTRAINT_DESCRIPTIONS.get(culprit, culprit)} cannot be satisfied",
            constraint=culprit)
    if sol.status != "optimal":
        raise SolverError(f"solver returned status {sol.status!r}")

    Y, s = _unpack(sol.x, node.n)
    if np.linalg.cond(Y) > opts.max_condition:
        raise IllConditionedError(f"Y condition number {np.linalg.cond(Y):.3g} exceeds {opts.max_condition:g}")
    P = np.linalg.inv(Y)
    P = 0.5 * (P + P.T)
    m = node.m
    R = np.eye(m) / (2.0 * s)
    M = Y @ node.A.T + node.A @ Y - 2.0 * s * node.Bu @ node.Bu.T
    M = 0.5 * (M + M.T)
    # dissipation making the passivity inequality tight at (P, K)
    Gamma = Y @ np.linalg.solve(-M, Y)
    Gamma_inv = P @ (-M) @ P
    return SynthesisResult(Y, P, s, R, 0.5 * (Gamma + Gamma.T), 0.5 * (Gamma_inv + Gamma_inv.T),
                           node.Bu, dict(sol.margins), sol.status)


# -- network certificate -------------------------------------------------------

def state_cost_block(P, A, Bu=None, R=None) -> np.ndarray:
    """``P Bu R^-1 Bu' P / 4 - (P A + A' P) / 2`` (second term only without control)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = -0.5 * (P @ A + A.T @ P)
    if Bu is not None and np.size(Bu) and R is not None:
        Bu = np.asarray(Bu, dtype=float).reshape(P.shape[0], -1)
        PB = P @ Bu
        Q = Q + 0.25 * PB @ np.linalg.solve(np.atleast_2d(R), PB.T)
    return 0.5 * (Q + Q.T)


@dataclass(frozen=True, eq=False)
class CostCertificate:
    """Network-wide ``(R, Q(R), P_hat)`` for which the composite gain is LQR-optimal."""

    R_global: np.ndarray
    Q_global: np.ndarray
    P_hat: np.ndarray
    K_hat: np.ndarray
    node_Q: Mapping
    edge_Q: tuple
    residuals: Mapping = field(default_factory=dict)


def _default_storage(params, what):
    if params is None or not hasattr(params, "certificate"):
        raise DimensionError(f"no storage given for {what} and its parameters provide none")
    return params.certificate()


def _closed_form_cost(params):
    # the physical storage cancels the capacitance or inductance exactly
    fn = getattr(params, "state_cost", None)
    return None if fn is None else np.atleast_2d(np.asarray(fn(), dtype=float))


def build_cost_certificate(model, node_results: Mapping, node_storages: Mapping | None = None,
                           edge_storages=None) -> CostCertificate:
    """Assemble the global certificate in the model's state order.

    ``node_storages`` covers uncontrolled nodes and ``edge_storages`` every
    edge; when omitted they come from the parameter records' ``certificate()``.

    Raises
    ------
    ValueError
        If a controlled-node state-cost block is not positive definite or an
        uncontrolled block is not positive semidefinite.
    """
    node_storages = dict(node_storages or {})
    P_blocks, Q_blocks, R_blocks, node_Q = [], [], [], {}
    for node in model.graph.nodes:
        sys = model.node_systems[node]
        if sys.controlled:
            if node not in node_results:
                raise DimensionError(f"no synthesis result for node {node!r}")
            res = node_results[node]
            Q = state_cost_block(res.P, sys.A, sys.Bu, res.R)
            if not is_spd(Q):
                raise ValueError(f"state-cost block of node {node!r} is not positive definite")
            P_blocks.append(res.P)
            R_blocks.append(np.atleast_2d(res.R))
        else:
            st = node_storages.get(node)
            Q = None if st is not None else _closed_form_cost(model.node_params.get(node))
            st = st or _default_storage(model.node_params.get(node), f"node {node!r}")
            P = np.atleast_2d(getattr(st, "P", st))
            Q = state_cost_block(P, sys.A) if Q is None else Q
            if np.linalg.eigvalsh(Q)[0] < -1e-12 * max(1.0, np.abs(Q).max()):
                raise ValueError(f"state-cost block of node {node!r} is indefinite")
            P_blocks.append(P)
        node_Q[node] = Q
        Q_blocks.append(Q)
    edge_Q = []
    for k, sys in enumerate(model.edge_systems):
        Q = None
        if edge_storages is not None:
            st = edge_storages[k]
        else:
            st = _default_storage(model.edge_params[k], f"edge {k}")
            Q = _closed_form_cost(model.edge_params[k])
        P = np.atleast_2d(getattr(st, "P", st))
        Q = state_cost_block(P, sys.A) if Q is None else Q
        if np.linalg.eigvalsh(Q)[0] < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError(f"state-cost block of edge {k} is indefinite")
        P_blocks.append(P)
        edge_Q.append(Q)
        Q_blocks.append(Q)
    P_hat = sla.block_diag(*P_blocks)
    Q_hat = sla.block_diag(*Q_blocks)
    R_hat = sla.block_diag(*R_blocks) if R_blocks else np.zeros((0, 0))
    K_hat = embed_gains(model, {n: node_results[n].K for n in model.controlled_nodes})

    from .verify import are_residual

    resid = {"are": are_residual(model.A_hat, model.B_hat, Q_hat, R_hat, P_hat)}
    return CostCertificate(R_hat, Q_hat, P_hat, K_hat, node_Q, tuple(edge_Q), resid)


# -- tuning --------------------------------------------------------------------

class Retune(NamedTuple):
    K: np.ndarray
    valid: bool


def _as_weight(R_bar, m):
    R_bar = np.asarray(R_bar, dtype=float)
    if R_bar.ndim == 0:
        return float(R_bar) * np.eye(m)
    return np.atleast_2d(R_bar)


def retune(result: SynthesisResult, R_bar, tol=1e-12) -> Retune:
    """New gain ``-R_bar^-1 Bu' P / 2`` and whether ``R_bar <= R`` (Loewner).

    Only a valid retune keeps the passivity and optimality guarantees; an
    invalid one is reported, not rejected.
    """
    m = result.R.shape[0]
    Rb = _as_weight(R_bar, m)
    if not is_spd(Rb):
        raise ValueError("R_bar must be symmetric positive definite")
    gap = np.linalg.eigvalsh(0.5 * ((result.R - Rb) + (result.R - Rb).T))[0]
    valid = bool(gap >= -tol * max(1.0, np.abs(result.R).max()))
    return Retune(controller_gain(result.P, result.Bu, Rb), valid)


def retuned_result(result: SynthesisResult, R_bar) -> SynthesisResult:
    """Copy of ``result`` with the control weight replaced by ``R_bar``."""
    m = result.R.shape[0]
    Rb = _as_weight(R_bar, m)
    d = Rb[0, 0]
    s = 1.0 / (2.0 * d) if np.allclose(Rb, d * np.eye(m), rtol=0, atol=0) else float("nan")
    return dataclasses.replace(result, R=Rb, s=s)

"""Independent checks that a decentralized certificate is the network LQR optimum.

Nothing here reuses the synthesis path: the Riccati oracle solves the ARE from
scratch, the state cost is evaluated from gradients rather than from the
assembled ``Q``, and trajectory costs are integrated from simulated samples.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
from scipy.integrate import trapezoid

from .errors import ConvergenceError, DimensionError
from .linsys import check_strict_passivity

__all__ = [
    "are_residual",
    "lqr_oracle",
    "network_state_cost",
    "cost_to_go_matrix",
    "TrajectoryCost",
    "trajectory_cost",
    "DissipationMargin",
    "dissipation_check",
    "DissipationMonitor",
    "Check",
    "VerificationReport",
    "verify_network",
    "verify_retune",
]


def are_residual(A_hat, B_hat, Q, R, P_hat) -> float:
    """Normalized Riccati residual for the value matrix ``M = P_hat / 2``.

    ``||A'M + MA - M B R^-1 B' M + Q||_F / (1 + ||Q||_F)``.
    """
    A = np.atleast_2d(np.asarray(A_hat, dtype=float))
    N = A.shape[0]
    B = np.asarray(B_hat, dtype=float).reshape(N, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P = np.atleast_2d(np.asarray(P_hat, dtype=float))
    if Q.shape != (N, N) or P.shape != (N, N):
        raise DimensionError(f"Q {Q.shape} and P_hat {P.shape} must be {N}x{N}")
    M = 0.5 * P
    res = A.T @ M + M @ A + Q
    if B.shape[1]:
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape != (B.shape[1],) * 2:
            raise DimensionError(f"R must be {B.shape[1]}x{B.shape[1]}")
        MB = M @ B
        res = res - MB @ np.linalg.solve(R, MB.T)
    return float(np.linalg.norm(res, "fro") / (1.0 + np.linalg.norm(Q, "fro")))


def _hurwitz(A):
    return np.linalg.eigvals(A).real.max(initial=-np.inf) < 0


def lqr_oracle(A_hat, B_hat, Q, R, newton_steps=8, tol=1e-14):
    """Solve the continuous ARE independently and return ``(M, K)``.

    The stabilizing solution comes from the Hamiltonian invariant subspace
    (``scipy.linalg.solve_continuous_are``), then is polished with
    Newton-Kleinman steps. ``K = -R^-1 B' M``.

    Raises
    ------
    ConvergenceError
        If no stabilizing solution is found or the polishing diverges.
    """
    A = np.atleast_2d(np.asarray(A_hat, dtype=float))
    N = A.shape[0]
    B = np.asarray(B_hat, dtype=float).reshape(N, -1)
    Q = 0.5 * (np.asarray(Q, dtype=float) + np.asarray(Q, dtype=float).T)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        M = sla.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"Riccati solve failed (pair not stabilizable?): {exc}") from exc
    M = 0.5 * (M + M.T)
    K = -np.linalg.solve(R, B.T @ M)
    if not _hurwitz(A + B @ K):
        raise ConvergenceError("Riccati solution is not stabilizing")
    for _ in range(newton_steps):
        Acl = A + B @ K
        M_new = sla.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        M_new = 0.5 * (M_new + M_new.T)
        K_new = -np.linalg.solve(R, B.T @ M_new)
        if not _hurwitz(A + B @ K_new):
            break
        step = np.linalg.norm(M_new - M) / max(np.linalg.norm(M_new), 1e-300)
        M, K = M_new, K_new
        if step < tol:
            break
    return M, K


def _storage(item):
    return np.atleast_2d(np.asarray(getattr(item, "P", item), dtype=float))


def network_state_cost(x_hat, model, node_results: Mapping, node_storages=None, edge_storages=None) -> float:
    """Sum of local state-cost terms for quadratic storages.

    Per controlled node ``-(Px)'(Ax) + (Px)' Bu R^-1 Bu' (Px) / 4``; per
    uncontrolled node and per edge ``-(Px)'(Ax)``.
    """
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    if x_hat.size != model.n_states:
        raise DimensionError(f"state has {x_hat.size} entries, model has {model.n_states}")
    node_storages = dict(node_storages or {})
    total = 0.0
    for node in model.graph.nodes:
        sys = model.node_systems[node]
        x = x_hat[model.node_slice(node)]
        if sys.controlled:
            res = node_results[node]
            grad = res.P @ x
            v = sys.Bu.T @ grad
            total += -grad @ (sys.A @ x) + 0.25 * v @ np.linalg.solve(np.atleast_2d(res.R), v)
        else:
            st = node_storages.get(node) or model.node_params[node].certificate()
            total += -(_storage(st) @ x) @ (sys.A @ x)
    for k, sys in enumerate(model.edge_systems):
        x = x_hat[model.edge_slice(k)]
        st = edge_storages[k] if edge_storages is not None else model.edge_params[k].certificate()
        total += -(_storage(st) @ x) @ (sys.A @ x)
    return float(total)


def cost_to_go_matrix(A, B, K, Q, R) -> np.ndarray:
    """``X`` with ``x0' X x0`` the infinite-horizon cost of ``u = Kx``."""
    A = np.atleast_2d(A)
    Acl = A + np.asarray(B).reshape(A.shape[0], -1) @ np.atleast_2d(K)
    if not _hurwitz(Acl):
        raise ConvergenceError("closed loop is not stable; cost is unbounded")
    W = Q + np.atleast_2d(K).T @ np.atleast_2d(R) @ np.atleast_2d(K)
    X = sla.solve_continuous_lyapunov(Acl.T, -W)
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class TrajectoryCost:
    J: float
    integral: float
    tail: float
    final_norm: float
    bounded: bool


def trajectory_cost(traj, Q, R, K, tail_matrix=None, x_ref=None) -> TrajectoryCost:
    """Trapezoidal integral of ``x'Qx + u'Ru`` along ``traj`` with ``u = Kx``.

    ``x_ref`` shifts to deviation coordinates. The remaining infinite-horizon
    cost ``x(T)' X x(T)`` is added when ``tail_matrix`` ``X`` is given;
    otherwise ``tail`` is ``nan`` unless the final state vanishes.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    integral = 0.0
    x_first = x_last = None
    for seg in _segments(traj):
        X = seg.x if x_ref is None else seg.x - np.asarray(x_ref)
        if not np.all(np.isfinite(X)):
            return TrajectoryCost(np.inf, np.inf, np.inf, np.inf, False)
        U = X @ K.T
        f = np.einsum("ij,jk,ik->i", X, Q, X) + np.einsum("ij,jk,ik->i", U, R, U)
        integral += float(trapezoid(f, seg.t))
        if x_first is None:
            x_first = X[0]
        x_last = X[-1]
    n0 = float(np.linalg.norm(x_first)) if x_first is not None else 0.0
    nT = float(np.linalg.norm(x_last)) if x_last is not None else 0.0
    bounded = nT <= max(1e3 * n0, 1e-300)
    if not bounded:
        return TrajectoryCost(np.inf, integral, np.inf, nT, False)
    if tail_matrix is not None:
        tail = float(x_last @ np.asarray(tail_matrix) @ x_last)
    elif nT <= 1e-9 * max(n0, 1e-300) or nT == 0.0:
        tail = 0.0
    else:
        tail = float("nan")
    return TrajectoryCost(integral + (tail if np.isfinite(tail) else 0.0), integral, tail, nT, True)


def _segments(traj):
    return getattr(traj, "segments", traj if isinstance(traj, (list, tuple)) else [traj])


@dataclass
class DissipationMargin:
    """Worst sample of ``w'y - dV/dt - psi(x)`` for one subsystem.

    ``min_normalized`` divides each sample by ``1 + |w'y| + |dV/dt| + psi``.
    """

    min_margin: float = np.inf
    min_normalized: float = np.inf
    samples: int = 0

    def merge(self, other: "DissipationMargin") -> "DissipationMargin":
        return DissipationMargin(min(self.min_margin, other.min_margin),
                                 min(self.min_normalized, other.min_normalized),
                                 self.samples + other.samples)


def _block_margins(t, x, model, x_eq, node_certs, edge_certs, out):
    if len(t) < 2:
        return out
    D = x if x_eq is None else x - x_eq
    Wv, Yv, We, Ye = model.port_maps()
    p = model.coupling_dim
    Dm = 0.5 * (D[1:] + D[:-1])
    dt = np.diff(t)
    wv, yv = Dm @ Wv.T, Dm @ Yv.T
    targets = [(node, model.node_slice(node), wv[:, i * p:(i + 1) * p], yv[:, i * p:(i + 1) * p],
                node_certs[node]) for i, node in enumerate(model.graph.nodes) if node in node_certs]
    if edge_certs:
        we, ye = Dm @ We.T, Dm @ Ye.T
        for k, pair in enumerate(model.graph.edges):
            if pair in edge_certs:
                targets.append((pair, model.edge_slice(k), we[:, k * p:(k + 1) * p],
                                ye[:, k * p:(k + 1) * p], edge_certs[pair]))
    for key, sl, w, y, cert in targets:
        P, Gi = cert.P, cert.Gamma_inv
        Xs = D[:, sl]
        V = 0.5 * np.einsum("ij,jk,ik->i", Xs, P, Xs)
        dV = np.diff(V) / dt
        xm = Dm[:, sl]
        psi = 0.5 * np.einsum("ij,jk,ik->i", xm, Gi, xm)
        supply = np.einsum("ij,ij->i", w, y)
        margin = supply - dV - psi
        norm = margin / (1.0 + np.abs(supply) + np.abs(dV) + psi)
        res = DissipationMargin(float(margin.min()), float(norm.min()), len(margin))
        out[key] = out[key].merge(res) if key in out else res
    return out


def dissipation_check(traj, node_certs: Mapping, edge_certs: Mapping | None = None) -> dict:
    """Discrete strict-passivity margins along a simulated trajectory.

    Works in deviation coordinates about each segment's equilibrium (about
    the origin when a segment has none). Rates
    use centered differences on the staggered grid (interval midpoints), so
    for a trapezoidal trajectory the result matches the continuous inequality
    at the midpoint. ``edge_certs`` is keyed by ``(source, sink)``.
    Returns a mapping from node id or edge pair to :class:`DissipationMargin`.
    """
    out: dict = {}
    edge_certs = dict(edge_certs or {})
    for seg in _segments(traj):
        _block_margins(seg.t, seg.x, seg.model, seg.x_eq, node_certs, edge_certs, out)
    return out


class DissipationMonitor:
    """Streaming :func:`dissipation_check`, usable as ``simulate(on_chunk=...)``.

    Sees every integration step, so it can be combined with decimated output.
    """

    def __init__(self, node_certs: Mapping, edge_certs: Mapping | None = None):
        self.node_certs = dict(node_certs)
        self.edge_certs = dict(edge_certs or {})
        self.margins: dict = {}

    def __call__(self, t, x, info):
        _block_margins(t, x, info["model"], info["x_eq"], self.node_certs, self.edge_certs, self.margins)

    @property
    def worst_normalized(self) -> float:
        return min((m.min_normalized for m in self.margins.values()), default=np.inf)


# -- reporting -----------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    def add(self, name, value, tol, passed=None, detail=""):
        value = float(value)
        if passed is None:
            passed = bool(value <= tol)
        self.checks.append(Check(name, value, float(tol), bool(passed), detail))
        return self.checks[-1]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default, **kw)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"not serializable: {type(v)}")


def verify_network(model, node_results: Mapping, cert, *, tag="", n_samples=100, seed=0,
                   oracle_tol=1e-6, are_tol=1e-6, cost_tol=1e-10, report=None) -> VerificationReport:
    """Run the full certificate check suite for one topology."""
    report = report if report is not None else VerificationReport()
    pre = f"{tag}: " if tag else ""
    A, B = model.A_hat, model.B_hat
    res = are_residual(A, B, cert.Q_global, cert.R_global, cert.P_hat)
    report.add(pre + "ARE residual", res, are_tol)

    try:
        M, K_lqr = lqr_oracle(A, B, cert.Q_global, cert.R_global)
        k_err = np.linalg.norm(K_lqr - cert.K_hat) / np.linalg.norm(cert.K_hat)
        m_err = np.linalg.norm(M - 0.5 * cert.P_hat) / np.linalg.norm(cert.P_hat)
        report.add(pre + "oracle gain agreement", k_err, oracle_tol)
        report.add(pre + "oracle value agreement", m_err, oracle_tol)
    except ConvergenceError as exc:
        report.add(pre + "oracle gain agreement", np.inf, oracle_tol, False, str(exc))

    for node in model.controlled_nodes:
        lam_min = float(np.linalg.eigvalsh(cert.node_Q[node])[0])
        report.add(pre + f"Q positive definite [node {node}]", -lam_min, 0.0, lam_min > 0)
        sys = model.node_systems[node]
        chk = check_strict_passivity(sys, node_results[node].K, node_results[node].certificate)
        report.add(pre + f"passivity margin [node {node}]", chk.margin, chk.tol, chk.passed)
    for node in model.graph.nodes:
        if model.node_systems[node].controlled:
            continue
        chk = check_strict_passivity(model.node_systems[node], None, model.node_params[node].certificate())
        report.add(pre + f"passivity margin [node {node}]", chk.margin, chk.tol, chk.passed)
    for k, sys in enumerate(model.edge_systems):
        chk = check_strict_passivity(sys, None, model.edge_params[k].certificate())
        report.add(pre + f"passivity margin [edge {model.edge_label(k)}]", chk.margin, chk.tol, chk.passed)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        x = rng.standard_normal(model.n_states)
        q_direct = network_state_cost(x, model, node_results)
        q_matrix = float(x @ cert.Q_global @ x)
        worst = max(worst, abs(q_direct - q_matrix) / max(abs(q_matrix), 1e-300))
    report.add(pre + "state cost matches Q(R)", worst, cost_tol)

    abscissa = float(np.linalg.eigvals(A + B @ cert.K_hat).real.max())
    report.add(pre + "closed loop Hurwitz", abscissa, 0.0, abscissa < 0)
    return report


def verify_retune(model, node_results: Mapping, R_bar, *, tag="", report=None,
                  loewner_tol=1e-9) -> VerificationReport:
    """Checks for replacing every node's ``R`` by ``R_bar``.

    Records the validity of ``R_bar <= R``, the closed-loop passivity margin
    of the retuned gain with the original storage and dissipation, and the
    Loewner gap ``lambda_min(Q(R_bar) - Q(R))``.
    """
    from .synthesis import retune, state_cost_block

    report = report if report is not None else VerificationReport()
    pre = f"{tag}: " if tag else ""
    for node in model.controlled_nodes:
        res = node_results[node]
        sys = model.node_systems[node]
        rt = retune(res, R_bar)
        Rb = np.atleast_2d(R_bar * np.eye(res.R.shape[0]) if np.ndim(R_bar) == 0 else R_bar)
        gap = float(np.linalg.eigvalsh(res.R - Rb)[0])
        report.add(pre + f"retune valid [node {node}]", -gap, 0.0, rt.valid,
                   "R_bar <= R" if rt.valid else "R_bar exceeds synthesized R")
        chk = check_strict_passivity(sys, rt.K, res.certificate)
        report.add(pre + f"retuned passivity margin [node {node}]", chk.margin, chk.tol, chk.passed)
        dQ = state_cost_block(res.P, sys.A, sys.Bu, Rb) - state_cost_block(res.P, sys.A, sys.Bu, res.R)
        lam = float(np.linalg.eigvalsh(dQ)[0])
        tol = loewner_tol * max(1.0, float(np.abs(dQ).max()))
        report.add(pre + f"Q(R_bar) >= Q(R) [node {node}]", -lam, tol, -lam <= tol)
    return report

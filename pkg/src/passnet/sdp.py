"""Backend-neutral semidefinite programs in coefficient-matrix form.

A problem is

    minimize    c'x
    subject to  F0_b + sum_j x_j F_jb  <= 0   (negative semidefinite) per block b
                A_eq x = b_eq

Each block keeps a name so infeasibility can be attributed to a constraint
class. :func:`solve` eliminates the equalities through a null-space basis,
normalizes blocks and variables, and hands the reduced problem to cvxopt.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SolverError

__all__ = ["LmiBlock", "SdpProblem", "SdpSolution", "solve", "DEFAULT_TOLERANCES"]

DEFAULT_TOLERANCES = dict(abstol=1e-10, reltol=1e-10, feastol=1e-10, maxiters=200)
#: successive retries when the solver breaks down numerically (near-singular iterates)
RELAXED_LADDER = (1e-8, 1e-7)


@dataclass
class LmiBlock:
    """Constraint ``F0 + sum_j x_j F[j] <= 0`` on symmetric k-by-k matrices."""

    name: str
    F0: np.ndarray
    F: list

    def value(self, x) -> np.ndarray:
        out = np.array(self.F0, dtype=float)
        for xj, Fj in zip(x, self.F):
            out = out + xj * Fj
        return 0.5 * (out + out.T)

    def max_eig(self, x) -> float:
        return float(np.linalg.eigvalsh(self.value(x))[-1])


@dataclass
class SdpProblem:
    c: np.ndarray
    blocks: list
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    var_names: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def subset(self, names) -> "SdpProblem":
        """Same problem restricted to blocks whose name is in ``names``."""
        return SdpProblem(self.c, [b for b in self.blocks if b.name in names],
                          self.A_eq, self.b_eq, self.var_names)

    def equality_residual(self, x) -> float:
        if self.A_eq is None or len(self.A_eq) == 0:
            return 0.0
        return float(np.abs(self.A_eq @ x - self.b_eq).max())


@dataclass
class SdpSolution:
    x: np.ndarray | None
    status: str
    objective: float
    iterations: int = 0
    margins: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def _reduce_equalities(problem: SdpProblem):
    """Return ``(x0, N)`` with ``{x : A_eq x = b_eq} = {x0 + N z}``, or ``None``."""
    n = problem.n_vars
    if problem.A_eq is None or len(problem.A_eq) == 0:
        return np.zeros(n), np.eye(n)
    A = np.atleast_2d(np.asarray(problem.A_eq, dtype=float))
    b = np.asarray(problem.b_eq, dtype=float).ravel()
    x0, *_ = np.linalg.lstsq(A, b, rcond=None)
    scale = max(1.0, np.abs(b).max(initial=0.0))
    if np.abs(A @ x0 - b).max(initial=0.0) > 1e-9 * scale:
        return None
    return x0, sla.null_space(A)


def solve(problem: SdpProblem, tolerances=None) -> SdpSolution:
    """Solve with cvxopt's conic solver.

    Status is one of ``optimal``, ``infeasible`` (including inconsistent
    equalities), ``unbounded`` or ``unknown``.
    """
    import cvxopt
    from cvxopt import solvers

    opts = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    opts["show_progress"] = False
    reduced = _reduce_equalities(problem)
    if reduced is None:
        return SdpSolution(None, "infeasible", np.inf)
    x0, N = reduced
    nz = N.shape[1]
    c = np.asarray(problem.c, dtype=float)

    # reduced blocks, each normalized to unit coefficient scale
    F0s, Fzs = [], []
    for blk in problem.blocks:
        F0 = blk.value(x0)
        Fz = [sum(N[j, k] * blk.F[j] for j in range(problem.n_vars)) for k in range(nz)]
        F0s.append(F0)
        Fzs.append(Fz)
    col_scale = np.ones(nz)
    for k in range(nz):
        nk = max([np.abs(Fz[k]).max(initial=0.0) for Fz in Fzs] + [0.0])
        col_scale[k] = 1.0 / nk if nk > 0 else 1.0
    Gnp, hnp = [], []
    for F0, Fz in zip(F0s, Fzs):
        size = F0.shape[0]
        cols = [Fz[k] * col_scale[k] for k in range(nz)]
        bscale = max([np.abs(F0).max(initial=0.0)] + [np.abs(M).max(initial=0.0) for M in cols] + [1e-300])
        Gnp.append(np.column_stack([M.reshape(-1, order="F") / bscale for M in cols]) if nz
                   else np.zeros((size * size, 0)))
        hnp.append(-F0 / bscale)
    cz = N.T @ c * col_scale

    if nz == 0:
        ok = all(np.linalg.eigvalsh(F0)[-1] <= 1e-9 * max(1.0, np.abs(F0).max()) for F0 in F0s)
        status = "optimal" if ok else "infeasible"
        return SdpSolution(x0 if ok else None, status, float(c @ x0) if ok else np.inf,
                           margins=_margins(problem, x0))

    # directions no block constrains: unbounded if the cost sees them, else fixed at zero
    T = np.eye(nz)
    _, sv, Vt = np.linalg.svd(np.vstack(Gnp), full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * sv[0])) if sv.size and sv[0] > 0 else 0
    if rank < nz:
        T = Vt[:rank].T
        if np.linalg.norm(cz - T @ (T.T @ cz)) > 1e-12 * max(np.linalg.norm(cz), 1e-300):
            return SdpSolution(None, "unbounded", -np.inf)
        if rank == 0:
            ok = all(np.linalg.eigvalsh(F0)[-1] <= 1e-9 * max(1.0, np.abs(F0).max()) for F0 in F0s)
            return SdpSolution(x0 if ok else None, "optimal" if ok else "infeasible",
                               float(c @ x0) if ok else np.inf, margins=_margins(problem, x0))
    Gs = [cvxopt.matrix(G @ T) for G in Gnp]
    hs = [cvxopt.matrix(h) for h in hnp]
    cw = T.T @ cz
    cnorm = max(np.abs(cw).max(initial=0.0), 1e-300)

    attempts = [opts] + [dict(opts, **{k: max(opts[k], tol) for k in ("abstol", "reltol", "feastol")})
                         for tol in RELAXED_LADDER]
    sol, failure = None, None
    for attempt in attempts:
        try:
            sol = solvers.sdp(cvxopt.matrix(cw / cnorm), Gs=Gs, hs=hs, options=attempt)
            break
        except (ValueError, ArithmeticError) as exc:
            failure = exc
    if sol is None:
        raise SolverError(f"cvxopt failed: {failure}") from failure

    raw = sol["status"]
    iters = int(sol.get("iterations", 0))
    if raw == "primal infeasible":
        return SdpSolution(None, "infeasible", np.inf, iters)
    if raw == "dual infeasible":
        return SdpSolution(None, "unbounded", -np.inf, iters)
    if sol["x"] is None:
        return SdpSolution(None, "unknown", np.nan, iters)
    z = (T @ np.array(sol["x"]).ravel()) * col_scale
    x = x0 + N @ z
    margins = _margins(problem, x)
    if raw == "optimal":
        return SdpSolution(x, "optimal", float(c @ x), iters, margins)
    # 'unknown': accept only if the returned point is feasible to working precision
    worst = max((margins[b.name] / max(1.0, np.abs(b.value(x)).max()) for b in problem.blocks),
                default=-np.inf)
    status = "optimal" if worst <= 1e-8 else "unknown"
    return SdpSolution(x, status, float(c @ x), iters, margins)


def _margins(problem, x):
    out = {}
    for blk in problem.blocks:
        val = blk.max_eig(x)
        out[blk.name] = max(out.get(blk.name, -np.inf), val)
    return out

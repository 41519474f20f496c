"""LTI subsystems, quadratic storage functions and passivity certificates.

A node system is

    dx/dt = A x + Bu u + Bw w + Br r,    y = C x

where ``w``/``y`` are the coupling port (dimension p), ``u`` the control input
and ``r`` an exogenous reference (setpoints). Edge systems have no ``u`` and no
``r``. Storage functions are V(x) = x'Px/2 and dissipation psi(x) = x'G^-1x/2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError

__all__ = [
    "LtiNode",
    "LtiEdge",
    "PassivityCertificate",
    "PassivityCheck",
    "bmi_matrix",
    "check_strict_passivity",
    "default_tolerance",
    "global_storage",
    "is_spd",
]


def _as_matrix(value, rows=None, cols=None, name="matrix"):
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a bare vector is a column unless a row shape was asked for
        arr = arr.reshape(1, -1) if rows == 1 and cols != 1 else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows and arr.size > 0:
        raise DimensionError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols and arr.size > 0:
        raise DimensionError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _empty(rows, cols=0):
    arr = np.zeros((rows, cols))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiNode:
    """Linear node subsystem with control, coupling and reference inputs.

    ``Bu`` may have zero columns (uncontrolled node, e.g. a load bus) and
    ``Br`` defaults to no reference input.
    """

    A: np.ndarray
    Bu: np.ndarray
    Bw: np.ndarray
    C: np.ndarray
    state_labels: tuple = ()
    Br: np.ndarray | None = None
    input_labels: tuple = ()

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        Bu = _empty(n) if self.Bu is None or np.size(self.Bu) == 0 else _as_matrix(self.Bu, rows=n, name="Bu")
        Bw = _as_matrix(self.Bw, rows=n, name="Bw")
        C = _as_matrix(self.C, cols=n, name="C")
        if C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns")
        if C.shape[0] != Bw.shape[1]:
            raise DimensionError(
                f"port mismatch: Bw has {Bw.shape[1]} columns but C has {C.shape[0]} rows")
        Br = _empty(n) if self.Br is None or np.size(self.Br) == 0 else _as_matrix(self.Br, rows=n, name="Br")
        labels = tuple(self.state_labels) or tuple(f"x{k}" for k in range(n))
        if len(labels) != n:
            raise DimensionError(f"{len(labels)} state labels for {n} states")
        ulabels = tuple(self.input_labels) or tuple(f"u{k}" for k in range(Bu.shape[1]))
        if len(ulabels) != Bu.shape[1]:
            raise DimensionError(f"{len(ulabels)} input labels for {Bu.shape[1]} inputs")
        for key, val in dict(A=A, Bu=Bu, Bw=Bw, C=C, Br=Br, state_labels=labels,
                             input_labels=ulabels).items():
            object.__setattr__(self, key, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.Bu.shape[1]

    @property
    def p(self) -> int:
        return self.Bw.shape[1]

    @property
    def q(self) -> int:
        return self.Br.shape[1]

    @property
    def controlled(self) -> bool:
        return self.m > 0


@dataclass(frozen=True, eq=False)
class LtiEdge:
    """Linear edge subsystem ``dx/dt = A x + Bw w``, ``y = C x``."""

    A: np.ndarray
    Bw: np.ndarray
    C: np.ndarray
    state_labels: tuple = ()

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        r = A.shape[0]
        if A.shape != (r, r):
            raise DimensionError(f"A must be square, got {A.shape}")
        Bw = _as_matrix(self.Bw, rows=r, name="Bw")
        C = _as_matrix(self.C, cols=r, name="C")
        if C.shape[1] != r:
            raise DimensionError(f"C must have {r} columns")
        if C.shape[0] != Bw.shape[1]:
            raise DimensionError(
                f"port mismatch: Bw has {Bw.shape[1]} columns but C has {C.shape[0]} rows")
        labels = tuple(self.state_labels) or tuple(f"x{k}" for k in range(r))
        if len(labels) != r:
            raise DimensionError(f"{len(labels)} state labels for {r} states")
        for key, val in dict(A=A, Bw=Bw, C=C, state_labels=labels).items():
            object.__setattr__(self, key, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.Bw.shape[1]


@dataclass(frozen=True, eq=False)
class PassivityCertificate:
    """Storage matrix ``P`` and dissipation matrix ``Gamma``.

    ``margin`` is the largest eigenvalue of the certified matrix inequality
    (non-positive when valid), ``nan`` if it has not been evaluated yet.
    Either ``Gamma`` or ``Gamma_inv`` may be given; the dissipation weight
    ``Gamma_inv`` is kept as supplied because forming it from a badly
    conditioned ``Gamma`` loses the digits the inequality depends on.
    """

    P: np.ndarray
    Gamma: np.ndarray | None = None
    margin: float = float("nan")
    Gamma_inv: np.ndarray | None = None

    def __post_init__(self):
        P = _as_matrix(self.P, name="P")
        if self.Gamma is None and self.Gamma_inv is None:
            raise DimensionError("one of Gamma or Gamma_inv is required")
        if self.Gamma_inv is None:
            G = _as_matrix(self.Gamma, name="Gamma")
            Gi = _as_matrix(_gamma_inverse(G), name="Gamma_inv")
        else:
            Gi = _as_matrix(self.Gamma_inv, name="Gamma_inv")
            G = _as_matrix(_sym(np.linalg.inv(Gi)) if self.Gamma is None else self.Gamma, name="Gamma")
        if P.shape != G.shape or P.shape != Gi.shape or P.shape[0] != P.shape[1]:
            raise DimensionError(f"P {P.shape} and Gamma {G.shape} must be square and equal")
        for name, M in (("P", P), ("Gamma", Gi)):
            scale = max(1.0, float(np.abs(M).max()))
            if np.abs(M - M.T).max() > 1e-9 * scale or np.linalg.eigvalsh(_sym(M))[0] <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "Gamma_inv", Gi)

    @classmethod
    def from_dissipation(cls, P, Gamma_inv, margin=float("nan")):
        """Build from the dissipation weight ``Gamma^-1`` directly."""
        return cls(P, None, margin, Gamma_inv=Gamma_inv)


@dataclass(frozen=True)
class PassivityCheck:
    passed: bool
    margin: float
    tol: float

    def __bool__(self):
        return self.passed


def _sym(M):
    return 0.5 * (M + M.T)


def is_spd(M, tol=0.0) -> bool:
    """True when ``M`` is symmetric with smallest eigenvalue above ``tol``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        return False
    scale = max(1.0, np.abs(M).max(initial=0.0))
    if np.abs(M - M.T).max(initial=0.0) > 1e-9 * scale:
        return False
    return bool(np.linalg.eigvalsh(_sym(M))[0] > tol)


def _gamma_inverse(Gamma):
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    if not np.isfinite(np.linalg.cond(Gamma)) or np.linalg.cond(Gamma) > 1e15:
        raise np.linalg.LinAlgError("Gamma is singular")
    return _sym(np.linalg.inv(Gamma))


def bmi_matrix(A_cl, Bw, C, P, Gamma=None, *, Gamma_inv=None) -> np.ndarray:
    """Strict-passivity matrix for storage ``P`` and dissipation ``Gamma``.

    Returns ``[[A'P + PA + Gamma^-1, PBw - C'], [Bw'P - C, 0]]``; the system
    is strictly passive with these certificates iff the result is negative
    semidefinite. ``Gamma_inv`` may be passed instead of ``Gamma``.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``Gamma`` is singular.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    n = A_cl.shape[0]
    Bw = np.asarray(Bw, dtype=float).reshape(n, -1)
    p = Bw.shape[1]
    C = np.asarray(C, dtype=float).reshape(p, n)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape != (n, n):
        raise DimensionError(f"P must be {n}x{n}, got {P.shape}")
    Gi = _gamma_inverse(Gamma) if Gamma_inv is None else np.atleast_2d(np.asarray(Gamma_inv, dtype=float))
    top = A_cl.T @ P + P @ A_cl + Gi
    off = P @ Bw - C.T
    out = np.block([[top, off], [off.T, np.zeros((p, p))]])
    return _sym(out)


def default_tolerance(M) -> float:
    """Certification slack ``1e-8 * (1 + max |entry|)``."""
    return 1e-8 * (1.0 + float(np.abs(M).max(initial=0.0)))


def _closed_loop(system, K):
    A = system.A
    if K is None:
        return A
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Bu = getattr(system, "Bu", None)
    if Bu is None or Bu.shape[1] == 0:
        raise DimensionError("a gain was given for a system without control input")
    if K.shape != (Bu.shape[1], A.shape[0]):
        raise DimensionError(f"K must be {Bu.shape[1]}x{A.shape[0]}, got {K.shape}")
    return A + Bu @ K


def check_strict_passivity(system, K, cert: PassivityCertificate, tol=None) -> PassivityCheck:
    """Evaluate the strict-passivity inequality for ``system`` under ``u = Kx``.

    ``K`` may be ``None`` for edges, uncontrolled nodes, or to test the open
    loop of a controlled node. ``tol`` defaults to :func:`default_tolerance`
    of the inequality matrix.
    """
    M = bmi_matrix(_closed_loop(system, K), system.Bw, system.C, cert.P, Gamma_inv=cert.Gamma_inv)
    margin = float(np.linalg.eigvalsh(M)[-1])
    if tol is None:
        tol = default_tolerance(M)
    return PassivityCheck(margin <= tol, margin, float(tol))


def global_storage(model, node_storages, edge_storages) -> np.ndarray:
    """Block-diagonal network storage matrix in assembly order.

    Parameters
    ----------
    model : NetworkModel
        Fixes the node and edge ordering.
    node_storages : mapping node id -> P matrix (or certificate / synthesis result)
    edge_storages : sequence aligned with ``model.graph.edges`` (or mapping by index)
    """
    blocks = []
    for node in model.graph.nodes:
        if node not in node_storages:
            raise DimensionError(f"no storage for node {node!r}")
        P = _storage_of(node_storages[node])
        if P.shape != (model.node_systems[node].n,) * 2:
            raise DimensionError(f"storage for node {node!r} has shape {P.shape}")
        blocks.append(P)
    if len(edge_storages) != len(model.graph.edges):
        raise DimensionError(
            f"{len(edge_storages)} edge storages for {len(model.graph.edges)} edges")
    for k, edge in enumerate(model.edge_systems):
        P = _storage_of(edge_storages[k])
        if P.shape != (edge.n, edge.n):
            raise DimensionError(f"storage for edge {k} has shape {P.shape}")
        blocks.append(P)
    return sla.block_diag(*blocks) if blocks else np.zeros((0, 0))


def _storage_of(item):
    P = getattr(item, "P", item)
    return np.atleast_2d(np.asarray(P, dtype=float))

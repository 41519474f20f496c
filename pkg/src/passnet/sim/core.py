"""Closed-loop network simulation with scripted events.

The network is integrated in absolute coordinates, ``x' = A_cl x + b``, with
``u_i = K_i x_i`` and the setpoints entering only via ``b``. A schedule of
events splits the run into segments; each segment keeps the model that was
active, so port signals and storages can be reconstructed afterwards.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np

from ..errors import SimulationDiverged, SingularSystemError, TopologyError
from ..netgraph import (AddEdge, NetworkModel, RemoveEdge, SetEdgeParam, SetNodeParam,
                        embed_gains, find_edge, modify_topology)
from . import kernels

__all__ = [
    "DisconnectEdge",
    "Event",
    "EventSchedule",
    "Segment",
    "Trajectory",
    "StiffnessWarning",
    "closed_loop_matrix",
    "spectral_abscissa",
    "compute_equilibrium",
    "simulate",
    "apply_change",
]

METHODS = ("trapezoidal", "rk4")
RK4_STABILITY_LIMIT = 2.5


class StiffnessWarning(RuntimeWarning):
    """RK4 step is close to or beyond its stability region."""


@dataclass(frozen=True)
class DisconnectEdge:
    """Remove the first edge ``(source, sink)``."""

    source: Hashable
    sink: Hashable


_TOPOLOGY_CHANGES = (AddEdge, RemoveEdge, DisconnectEdge)
_ACTIONS = {
    "set-node-param": SetNodeParam,
    "set-edge-param": SetEdgeParam,
    "connect-edge": AddEdge,
    "disconnect-edge": DisconnectEdge,
}


@dataclass(frozen=True)
class Event:
    """A change applied at time ``t``."""

    t: float
    change: Any

    def __post_init__(self):
        t = float(self.t)
        if not math.isfinite(t) or t < 0:
            raise ValueError(f"event time must be finite and non-negative, got {self.t}")
        object.__setattr__(self, "t", t)

    @property
    def action(self) -> str:
        for name, cls in _ACTIONS.items():
            if isinstance(self.change, cls):
                return name
        return type(self.change).__name__

    @property
    def changes_topology(self) -> bool:
        return isinstance(self.change, _TOPOLOGY_CHANGES)


class EventSchedule(Sequence):
    """Events with strictly increasing times."""

    def __init__(self, events=()):
        events = tuple(events)
        for prev, nxt in zip(events, events[1:]):
            if not nxt.t > prev.t:
                raise ValueError(f"event times must be strictly increasing ({prev.t} then {nxt.t})")
        self.events = events

    def __getitem__(self, k):
        return self.events[k]

    def __len__(self):
        return len(self.events)

    def __repr__(self):
        return f"EventSchedule({list(self.events)!r})"

    def validate(self, t_end: float):
        for ev in self.events:
            if ev.t > t_end:
                raise ValueError(f"event at t={ev.t} lies beyond t_end={t_end}")


@dataclass(frozen=True, eq=False)
class Segment:
    """Samples between two events.

    ``t`` has shape ``(N,)`` and ``x`` shape ``(N, n)``; the first sample is
    the state right after the opening event and the last one the state right
    before the closing event (or at the end of the run). ``x_eq`` is ``None``
    when the closed loop has no unique equilibrium.
    """

    epoch: int
    t: np.ndarray
    x: np.ndarray
    model: NetworkModel
    K_hat: np.ndarray
    b: np.ndarray
    x_eq: np.ndarray | None

    @property
    def state_labels(self) -> tuple:
        return self.model.state_labels

    @property
    def input_labels(self) -> tuple:
        return self.model.input_labels

    @property
    def u(self) -> np.ndarray:
        return self.x @ self.K_hat.T

    def ports(self):
        """Port samples ``{"nodes": {id: (w, y)}, "edges": {k: (w, y)}}``."""
        Wv, Yv, We, Ye = self.model.port_maps()
        p = self.model.coupling_dim
        wv, yv, we, ye = (self.x @ M.T for M in (Wv, Yv, We, Ye))
        nodes = {n: (wv[:, i * p:(i + 1) * p], yv[:, i * p:(i + 1) * p])
                 for i, n in enumerate(self.model.graph.nodes)}
        edges = {k: (we[:, k * p:(k + 1) * p], ye[:, k * p:(k + 1) * p])
                 for k in range(len(self.model.graph.edges))}
        return {"nodes": nodes, "edges": edges}

    def column(self, label) -> np.ndarray:
        if label in self.state_labels:
            return self.x[:, self.state_labels.index(label)]
        if label in self.input_labels:
            return self.u[:, self.input_labels.index(label)]
        raise KeyError(label)


@dataclass
class Trajectory:
    segments: list = field(default_factory=list)
    dt: float = float("nan")
    method: str = "trapezoidal"

    @property
    def t(self) -> np.ndarray:
        return np.concatenate([s.t for s in self.segments])

    @property
    def epochs(self) -> list:
        return sorted({s.epoch for s in self.segments})

    def epoch_segments(self, epoch) -> list:
        return [s for s in self.segments if s.epoch == epoch]

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].x[-1]

    @property
    def final_labels(self) -> tuple:
        return self.segments[-1].state_labels

    def series(self, label):
        """``(t, values)`` for a state or input label over the segments that have it."""
        ts, vs = [], []
        for s in self.segments:
            if label in s.state_labels or label in s.input_labels:
                ts.append(s.t)
                vs.append(s.column(label))
        if not ts:
            raise KeyError(label)
        return np.concatenate(ts), np.concatenate(vs)


def closed_loop_matrix(model: NetworkModel, controllers: Mapping) -> np.ndarray:
    """``A_hat + B_hat K_hat`` with per-node gains embedded block-diagonally."""
    return model.A_hat + model.B_hat @ embed_gains(model, controllers)


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of ``A``."""
    return float(np.linalg.eigvals(A).real.max())


def compute_equilibrium(model: NetworkModel, controllers: Mapping, refs=None) -> np.ndarray:
    """Solve ``A_cl x + b = 0``."""
    A = closed_loop_matrix(model, controllers)
    b = model.reference_vector(refs)
    if A.shape[0] == 0:
        return np.zeros(0)
    try:
        x = np.linalg.solve(A, -b)
    except np.linalg.LinAlgError:
        raise SingularSystemError("closed-loop matrix is singular: no unique equilibrium") from None
    if np.linalg.cond(A) > 1e14:
        raise SingularSystemError("closed-loop matrix is numerically singular")
    return x


# ---------------------------------------------------------------------------
def apply_change(model: NetworkModel, change) -> NetworkModel:
    """:func:`modify_topology` that also accepts edges named by ``(source, sink)``."""
    if isinstance(change, DisconnectEdge):
        change = RemoveEdge(find_edge(model.graph, change.source, change.sink))
    elif isinstance(change, SetEdgeParam) and isinstance(change.index, tuple):
        change = SetEdgeParam(find_edge(model.graph, *change.index), change.path, change.value)
    return modify_topology(model, change)


def _carry_over(x_old, old_labels, new_labels) -> np.ndarray:
    pos = {lab: k for k, lab in enumerate(old_labels)}
    x = np.zeros(len(new_labels))
    for k, lab in enumerate(new_labels):
        if lab in pos:
            x[k] = x_old[pos[lab]]
    return x


class _Stepper:
    """Fixed-step propagation of one affine system, chunked to bound memory."""

    def __init__(self, A, b, method, guard):
        self.A, self.b, self.method, self.guard = A, b, method, guard
        self._ops = {}

    def _op(self, h):
        if h not in self._ops:
            self._ops[h] = kernels.trapezoid_operator(self.A, self.b, h)
        return self._ops[h]

    def run(self, x0, h, n_steps, out):
        if self.method == "trapezoidal":
            M, c = self._op(h)
            return kernels.propagate_affine(M, c, x0, n_steps, out, self.guard)
        return kernels.propagate_rk4(self.A, self.b, h, x0, n_steps, out, self.guard)


def _integrate_segment(stepper, x0, t0, t1, dt, record_every, chunk_steps, on_chunk, epoch_info):
    """Integrate from ``t0`` to ``t1``; return recorded ``(t, x)``."""
    span = t1 - t0
    n_full = int(math.floor(span / dt * (1 + 1e-12)))
    rest = span - n_full * dt
    if rest <= 1e-9 * dt:
        rest = 0.0
    n = len(x0)
    ts, xs = [np.array([t0])], [np.asarray(x0, dtype=float)[None, :]]
    x = np.asarray(x0, dtype=float)
    done = 0
    while done < n_full:
        m = min(chunk_steps, n_full - done)
        buf = np.empty((m + 1, n))
        bad = stepper.run(x, dt, m, buf)
        tk = t0 + (done + np.arange(m + 1)) * dt
        if bad >= 0:
            raise SimulationDiverged(f"state norm exceeded guard at t={tk[bad]:.9g}")
        if on_chunk is not None:
            on_chunk(tk, buf, epoch_info)
        idx = np.arange(1, m + 1)
        keep = idx[(done + idx) % record_every == 0]
        if done + m == n_full and rest == 0.0 and (keep.size == 0 or keep[-1] != m):
            keep = np.append(keep, m)
        ts.append(tk[keep])
        xs.append(buf[keep])
        x = buf[m]
        done += m
    if rest > 0.0:
        buf = np.empty((2, n))
        bad = stepper.run(x, rest, 1, buf)
        if bad >= 0:
            raise SimulationDiverged(f"state norm exceeded guard at t={t1:.9g}")
        tk = np.array([t0 + n_full * dt, t1])
        if on_chunk is not None:
            on_chunk(tk, buf, epoch_info)
        ts.append(tk[1:])
        xs.append(buf[1:])
    t = np.concatenate(ts)
    t[-1] = t1
    return t, np.concatenate(xs)


def simulate(model: NetworkModel, controllers: Mapping, refs=None, x0=None,
             schedule: EventSchedule | Sequence[Event] = (), dt: float = 2e-6,
             t_end: float = 1.0, method: str = "trapezoidal", *, record_every: int = 1,
             guard: float = 1e12, chunk_steps: int = 1 << 16,
             on_chunk: Callable | None = None) -> Trajectory:
    """Integrate the closed-loop network through a schedule of events.

    Parameters
    ----------
    controllers
        Gain per controllable node, applied as ``u_i = K_i x_i``.
    refs
        Setpoints per node; ``None`` reads them from the model's parameter
        records at every epoch (so setpoint events take effect).
    x0
        Initial state; ``None`` starts at the equilibrium of the initial model.
        With an explicit ``x0`` a singular closed loop is allowed and the
        segment's ``x_eq`` is ``None``.
    dt
        Fixed step. The step before each event is shortened to land on it.
    method
        ``"trapezoidal"`` (default, A-stable) or ``"rk4"``.
    record_every
        Keep every k-th sample (segment end points are always kept).
    guard
        Divergence threshold on ``max|x|``.
    on_chunk
        Called as ``on_chunk(t, x, segment_info)`` with every full-resolution
        block of samples, where ``segment_info`` holds the active model,
        ``K_hat``, ``b`` and ``x_eq``.

    Raises
    ------
    SimulationDiverged, TopologyError, ValueError
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if not dt > 0 or not math.isfinite(dt):
        raise ValueError("dt must be positive")
    if not t_end >= 0:
        raise ValueError("t_end must be non-negative")
    if int(record_every) < 1:
        raise ValueError("record_every must be >= 1")
    record_every = int(record_every)
    schedule = schedule if isinstance(schedule, EventSchedule) else EventSchedule(schedule)
    schedule.validate(t_end)

    def setup(m):
        K_hat = embed_gains(m, controllers)
        A = m.A_hat + m.B_hat @ K_hat
        if not np.isfinite(A).all():
            raise ValueError("closed-loop matrix has non-finite entries")
        b = m.reference_vector(refs)
        try:
            x_eq = compute_equilibrium(m, controllers, refs)
        except SingularSystemError:
            if x0 is None:
                raise
            x_eq = None
        if method == "rk4" and A.size:
            rho = float(np.abs(np.linalg.eigvals(A)).max())
            if dt * rho > RK4_STABILITY_LIMIT:
                warnings.warn(f"RK4 step dt={dt:g} with spectral radius {rho:.4g} "
                              f"(dt*rho={dt * rho:.3g} > {RK4_STABILITY_LIMIT})", StiffnessWarning,
                              stacklevel=3)
        return K_hat, A, b, x_eq

    current = model
    K_hat, A, b, x_eq = setup(current)
    x = x_eq.copy() if x0 is None else np.array(x0, dtype=float).ravel()
    if x.shape != (current.n_states,):
        raise ValueError(f"x0 must have {current.n_states} entries, got {x.shape}")

    traj = Trajectory(dt=float(dt), method=method)
    epoch = 0
    t = 0.0
    boundaries = [ev for ev in schedule if ev.t < t_end] + [None]
    for ev in boundaries:
        t_next = t_end if ev is None else ev.t
        if t_next > t or ev is None:
            info = dict(model=current, K_hat=K_hat, b=b, x_eq=x_eq, epoch=epoch)
            ts, xs = _integrate_segment(_Stepper(A, b, method, guard), x, t, t_next, dt,
                                        record_every, chunk_steps, on_chunk, info)
            traj.segments.append(Segment(epoch, ts, xs, current, K_hat, b, x_eq))
            x = xs[-1]
            t = t_next
        if ev is None:
            break
        old_labels = current.state_labels
        try:
            current = apply_change(current, ev.change)
        except TopologyError as exc:
            raise TopologyError(f"event at t={ev.t}: {exc.args[0] if exc.args else exc}") from None
        if ev.changes_topology:
            epoch += 1
        x = _carry_over(x, old_labels, current.state_labels)
        K_hat, A, b, x_eq = setup(current)
    return traj

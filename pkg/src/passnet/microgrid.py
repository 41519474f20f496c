"""DC microgrid subsystems: buck-converter DGU buses, RC loads and RL lines.

Port convention: every bus takes the negated line injection ``w = -i_o`` as
input and exposes its voltage as output; every line takes the voltage
difference (sink minus source) and outputs its current. All values are SI.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linsys import LtiEdge, LtiNode, PassivityCertificate
from .netgraph import AddEdge, DirectedGraph, NetworkModel, SetNodeParam

__all__ = [
    "DguParams",
    "LoadParams",
    "LineParams",
    "build_dgu",
    "build_load",
    "build_line",
    "natural_certificate",
    "CASE_DGU",
    "CASE_LINE",
    "build_case_study",
]


def _positive(**kw):
    for name, val in kw.items():
        if not val > 0:
            raise DimensionError(f"{name} must be positive, got {val}")


@dataclass(frozen=True)
class DguParams:
    """Converter filter and integrator parameters of a DGU bus."""

    r: float
    l: float
    c: float
    g: float = 0.0
    z: float = 0.0
    v_set: float = 0.0

    def __post_init__(self):
        _positive(r=self.r, l=self.l, c=self.c)
        if self.g < 0 or self.z < 0:
            raise DimensionError("g and z must be non-negative")

    def to_lti(self) -> LtiNode:
        return build_dgu(self)[0]

    def reference(self):
        return np.array([self.v_set])


@dataclass(frozen=True)
class LoadParams:
    """Constant-impedance load bus."""

    c: float
    g: float

    def __post_init__(self):
        _positive(c=self.c, g=self.g)

    def to_lti(self) -> LtiNode:
        return build_load(self)

    def certificate(self) -> PassivityCertificate:
        return natural_certificate(self)

    def state_cost(self) -> np.ndarray:
        """State-cost block under the natural storage, ``-(c)(-g/c) = g``."""
        return np.array([[self.g]])


@dataclass(frozen=True)
class LineParams:
    r: float
    l: float

    def __post_init__(self):
        _positive(r=self.r, l=self.l)

    def to_lti(self) -> LtiEdge:
        return build_line(self)

    def certificate(self) -> PassivityCertificate:
        return natural_certificate(self)

    def state_cost(self) -> np.ndarray:
        """State-cost block under the natural storage, ``-(l)(-r/l) = r``."""
        return np.array([[self.r]])


def build_dgu(p: DguParams):
    """DGU bus with states (filter current, bus voltage, integrator).

    Returns the node system and its reference input matrix; the setpoint
    enters the integrator row with weight -1.
    """
    A = np.array([
        [-p.r / p.l, -1.0 / p.l, 0.0],
        [1.0 / p.c, -p.g / p.c, 0.0],
        [0.0, 1.0, 0.0],
    ])
    Bu = np.array([[1.0 / p.l], [0.0], [0.0]])
    # zeta' = v - v_set + z i_o and w = -i_o
    Bw = np.array([[0.0], [1.0 / p.c], [-p.z]])
    C = np.array([[0.0, 1.0, 0.0]])
    Br = np.array([[0.0], [0.0], [-1.0]])
    node = LtiNode(A, Bu, Bw, C, ("i", "v", "zeta"), Br=Br, input_labels=("u",))
    return node, Br[:, 0]


def build_load(p: LoadParams) -> LtiNode:
    """Uncontrolled one-state node ``c dv/dt = -g v + w``."""
    return LtiNode([[-p.g / p.c]], None, [[1.0 / p.c]], [[1.0]], ("v",))


def build_line(p: LineParams) -> LtiEdge:
    """RL line ``l di/dt = -r i + w``."""
    return LtiEdge([[-p.r / p.l]], [[1.0 / p.l]], [[1.0]], ("i",))


def natural_certificate(params) -> PassivityCertificate:
    """Physical storage and a certifying dissipation for a load or a line.

    The storage is the stored field energy (``P = c`` or ``P = l``); the
    dissipation weight is half the resistive loss coefficient (``g`` or ``r``),
    strictly inside the passivity bound ``2g`` / ``2r``.
    """
    if isinstance(params, LoadParams):
        return PassivityCertificate.from_dissipation([[params.c]], [[params.g]])
    if isinstance(params, LineParams):
        return PassivityCertificate.from_dissipation([[params.l]], [[params.r]])
    raise TypeError(f"no natural storage for {type(params).__name__}")


CASE_DGU = dict(r=0.2, l=1.8e-3, c=2.2e-3, g=0.01, z=1.0)
CASE_LINE = LineParams(r=0.05, l=2.1e-6)
CASE_SETPOINTS = {1: 48.0, 2: 47.8, 3: 48.1}
CASE_LOADS = {4: LoadParams(c=70e-6, g=0.1), 5: LoadParams(c=70e-6, g=0.05)}


def build_case_study():
    """Five-bus test network with its disturbance schedule.

    Returns ``(model, refs, schedule)``: three identical DGUs (1-3), loads 4
    and 5, lines (1,4), (1,2), (2,5); the schedule steps g4 to 0.15 S at 1 s,
    g5 to 0.03 S at 2 s and connects line (5,3) at 3 s.
    """
    from .sim import Event, EventSchedule

    node_params = {k: DguParams(**CASE_DGU, v_set=v) for k, v in CASE_SETPOINTS.items()}
    node_params.update(CASE_LOADS)
    graph = DirectedGraph((1, 2, 3, 4, 5), ((1, 4), (1, 2), (2, 5)))
    model = NetworkModel.from_params(graph, node_params, [CASE_LINE] * 3)
    schedule = EventSchedule([
        Event(1.0, SetNodeParam(4, "g", 0.15)),
        Event(2.0, SetNodeParam(5, "g", 0.03)),
        Event(3.0, AddEdge(5, 3, params=CASE_LINE)),
    ])
    return model, model.references(), schedule

"""Time-domain simulation of closed-loop networks."""
from .core import (METHODS, DisconnectEdge, apply_change, Event, EventSchedule, Segment, StiffnessWarning, Trajectory,
                   closed_loop_matrix, compute_equilibrium, simulate, spectral_abscissa)
from .metrics import EventMetrics, event_metrics, summarize
from .io import CsvTable, read_csv, write_csv, write_table
from .kernels import NUMBA_ENABLED

__all__ = [
    "METHODS",
    "DisconnectEdge",
    "apply_change",
    "Event",
    "EventSchedule",
    "Segment",
    "StiffnessWarning",
    "Trajectory",
    "closed_loop_matrix",
    "compute_equilibrium",
    "simulate",
    "spectral_abscissa",
    "CsvTable",
    "read_csv",
    "write_csv",
    "write_table",
    "EventMetrics",
    "event_metrics",
    "summarize",
    "NUMBA_ENABLED",
]

"""Transient metrics around scripted events."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["EventMetrics", "event_metrics", "summarize"]


@dataclass(frozen=True)
class EventMetrics:
    """Response of one signal to one event.

    ``settling_time`` is measured from the event to the last sample outside
    the band ``band * |step|`` around the new equilibrium (``abs_floor``
    when the step is negligible). ``overshoot`` is the excursion beyond the
    new equilibrium, in the direction of the step, as a fraction of the step
    (``nan`` for a negligible step).
    """

    event_time: float
    label: str
    step: float
    settling_time: float
    peak_deviation: float
    overshoot: float
    final_error: float


def event_metrics(traj, labels, band: float = 0.02, abs_floor: float = 1e-3) -> list:
    """Metrics for each segment boundary and each label present on both sides."""
    out = []
    segs = traj.segments
    for prev, seg in zip(segs, segs[1:]):
        if prev.x_eq is None or seg.x_eq is None:
            continue
        t_event = float(seg.t[0])
        for lab in labels:
            if lab not in prev.state_labels or lab not in seg.state_labels:
                continue
            old = prev.x_eq[prev.state_labels.index(lab)]
            new = seg.x_eq[seg.state_labels.index(lab)]
            step = float(new - old)
            v = seg.column(lab)
            err = v - new
            tol = max(band * abs(step), abs_floor)
            outside = np.nonzero(np.abs(err) > tol)[0]
            settle = float(seg.t[outside[-1]] - t_event) if outside.size else 0.0
            if abs(step) > abs_floor:
                over = max(0.0, float(np.max(err * np.sign(step)))) / abs(step)
            else:
                over = float("nan")
            out.append(EventMetrics(t_event, lab, step, settle, float(np.abs(err).max()), over,
                                    float(abs(err[-1]))))
    return out


def summarize(metrics) -> dict:
    """Worst settling time, peak deviation and overshoot over ``metrics``."""
    if not metrics:
        return dict(settling_time=0.0, peak_deviation=0.0, overshoot=float("nan"), final_error=0.0)
    overs = [m.overshoot for m in metrics if np.isfinite(m.overshoot)]
    return dict(
        settling_time=max(m.settling_time for m in metrics),
        peak_deviation=max(m.peak_deviation for m in metrics),
        overshoot=max(overs) if overs else float("nan"),
        final_error=max(m.final_error for m in metrics),
    )

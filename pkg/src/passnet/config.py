"""JSON run configuration.

Schema (all sections except ``graph`` optional)::

    {
      "graph": {
        "nodes": [{"id": 1, "type": "dgu", "r": 0.2, "l": 1.8e-3, "c": 2.2e-3,
                   "g": 0.01, "z": 1.0, "v_set": 48.0},
                  {"id": 4, "type": "load", "c": 7e-5, "g": 0.1},
                  {"id": 9, "type": "lti", "A": [[...]], "Bu": [[...]],
                   "Bw": [[...]], "C": [[...]]}],
        "edges": [{"source": 1, "sink": 4, "r": 0.05, "l": 2.1e-6}]
      },
      "synthesis": {"lambda": -8.0, "epsilon": null,
                    "bounds": {"s_min": 1e-9, "s_max": 1e9}, "tolerances": {}},
      "tuning": {"rbar": [1.55, 0.5, 0.1, 0.01]},
      "simulation": {"dt": 2e-6, "t_end": 4.0, "method": "trapezoidal",
                     "record_every": 50, "workers": null,
                     "events": [{"t": 1.0, "action": "set-node-param",
                                 "node": 4, "param": "g", "value": 0.15},
                                {"t": 3.0, "action": "connect-edge",
                                 "source": 5, "sink": 3, "r": 0.05, "l": 2.1e-6}]},
      "output": {"dir": "out"}
    }

Event actions are ``set-node-param`` (``node``, ``param``, ``value``),
``set-edge-param`` (``source``, ``sink``, ``param``, ``value``),
``connect-edge`` (``source``, ``sink``, ``r``, ``l``) and
``disconnect-edge`` (``source``, ``sink``). Node ids are integers or strings.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, PassnetError
from .linsys import LtiNode
from .microgrid import DguParams, LineParams, LoadParams
from .netgraph import AddEdge, DirectedGraph, NetworkModel, SetEdgeParam, SetNodeParam
from .sim import METHODS, DisconnectEdge, Event, EventSchedule
from .synthesis import SynthesisOptions

__all__ = ["RunConfig", "load_config", "parse_config", "DEFAULT_RBAR"]

DEFAULT_RBAR = (1.55, 0.5, 0.1, 0.01)

_SECTIONS = {"graph", "synthesis", "tuning", "simulation", "output"}


@dataclass
class RunConfig:
    raw: dict
    model: NetworkModel
    options: SynthesisOptions
    rbar: tuple
    schedule: EventSchedule
    dt: float = 2e-6
    t_end: float = 4.0
    method: str = "trapezoidal"
    record_every: int = 50
    workers: int | None = None
    out_dir: Path = field(default_factory=lambda: Path("out"))
    node_types: dict = field(default_factory=dict)

    @property
    def dgu_nodes(self) -> list:
        return [n for n, kind in self.node_types.items() if kind == "dgu"]


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing '{key}'")
    return d[key]


def _number(v, where, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}: expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}: must be positive, got {v!r}")
    return float(v)


def _node_id(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise ConfigError(f"{where}: node id must be an integer or string, got {v!r}")
    return v


def _fields(d, names, where, required=()):
    out = {}
    for k in names:
        if k in d:
            out[k] = _number(d[k], f"{where}.{k}")
        elif k in required:
            raise ConfigError(f"{where}: missing '{k}'")
    extra = set(d) - set(names) - {"id", "type", "source", "sink"}
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return out


def _parse_node(d, k):
    where = f"graph.nodes[{k}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    nid = _node_id(_require(d, "id", where), where + ".id")
    kind = _require(d, "type", where)
    try:
        if kind == "dgu":
            return nid, kind, DguParams(**_fields(d, ("r", "l", "c", "g", "z", "v_set"), where,
                                                  required=("r", "l", "c")))
        if kind == "load":
            return nid, kind, LoadParams(**_fields(d, ("c", "g"), where, required=("c", "g")))
        if kind == "lti":
            mats = {name: d.get(name) for name in ("A", "Bu", "Bw", "C")}
            for name in ("A", "Bu", "Bw", "C"):
                _require(d, name, where)
            extra = set(d) - {"id", "type", "A", "Bu", "Bw", "C"}
            if extra:
                raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
            system = LtiNode(mats["A"], mats["Bu"], mats["Bw"], mats["C"])
            if not system.controlled:
                raise ConfigError(f"{where}: generic nodes must have a control input")
            return nid, kind, system
    except (PassnetError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown node type {kind!r} (expected dgu, load or lti)")


def _line(d, where):
    try:
        return LineParams(**_fields(d, ("r", "l"), where, required=("r", "l")))
    except ConfigError:
        raise
    except (PassnetError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_event(d, k, known_nodes):
    where = f"simulation.events[{k}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    t = _number(_require(d, "t", where), where + ".t")
    action = _require(d, "action", where)

    def node(key):
        nid = _node_id(_require(d, key, where), f"{where}.{key}")
        if nid not in known_nodes:
            raise ConfigError(f"{where}: unknown node {nid!r}")
        return nid

    if action == "set-node-param":
        change = SetNodeParam(node("node"), str(_require(d, "param", where)),
                              _number(_require(d, "value", where), where + ".value"))
    elif action == "set-edge-param":
        change = SetEdgeParam((node("source"), node("sink")), str(_require(d, "param", where)),
                              _number(_require(d, "value", where), where + ".value"))
    elif action == "connect-edge":
        params = {k2: v for k2, v in d.items() if k2 not in ("t", "action")}
        change = AddEdge(node("source"), node("sink"), params=_line(params, where))
    elif action == "disconnect-edge":
        change = DisconnectEdge(node("source"), node("sink"))
    else:
        raise ConfigError(f"{where}: unknown action {action!r}")
    try:
        return Event(t, change)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a configuration document and build the run objects.

    Raises
    ------
    ConfigError
        For any structural or value problem.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    graph = _require(raw, "graph", "config")
    nodes_raw = _require(graph, "nodes", "graph")
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise ConfigError("graph.nodes must be a non-empty list")
    node_params, node_types = {}, {}
    for k, d in enumerate(nodes_raw):
        nid, kind, params = _parse_node(d, k)
        if nid in node_params:
            raise ConfigError(f"graph.nodes[{k}]: duplicate id {nid!r}")
        node_params[nid] = params
        node_types[nid] = kind
    edges, lines = [], []
    for k, d in enumerate(graph.get("edges", [])):
        where = f"graph.edges[{k}]"
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected an object")
        src = _node_id(_require(d, "source", where), where + ".source")
        dst = _node_id(_require(d, "sink", where), where + ".sink")
        edges.append((src, dst))
        lines.append(_line(d, where))
    systems = {n: p if node_types[n] == "lti" else p.to_lti() for n, p in node_params.items()}
    records = {n: p for n, p in node_params.items() if node_types[n] != "lti"}
    try:
        model = NetworkModel(DirectedGraph(tuple(node_params), tuple(edges)), systems,
                             [line.to_lti() for line in lines], 1, records, tuple(lines))
    except PassnetError as exc:
        raise ConfigError(f"graph: {exc}") from None

    syn = raw.get("synthesis", {})
    bounds = syn.get("bounds", {})
    try:
        options = SynthesisOptions(
            lam=_number(syn.get("lambda", -8.0), "synthesis.lambda", allow_none=True),
            epsilon=_number(syn.get("epsilon"), "synthesis.epsilon", allow_none=True),
            s_min=_number(bounds.get("s_min", 1e-9), "synthesis.bounds.s_min", positive=True),
            s_max=_number(bounds.get("s_max", 1e9), "synthesis.bounds.s_max", positive=True),
            tolerances=dict(syn.get("tolerances", {})),
        )
    except ValueError as exc:
        raise ConfigError(f"synthesis: {exc}") from None

    rbar = raw.get("tuning", {}).get("rbar", list(DEFAULT_RBAR))
    if not isinstance(rbar, list) or not rbar:
        raise ConfigError("tuning.rbar must be a non-empty list")
    rbar = tuple(_number(v, f"tuning.rbar[{k}]", positive=True) for k, v in enumerate(rbar))

    sim = raw.get("simulation", {})
    dt = _number(sim.get("dt", 2e-6), "simulation.dt", positive=True)
    t_end = _number(sim.get("t_end", 4.0), "simulation.t_end", positive=True)
    method = sim.get("method", "trapezoidal")
    if method not in METHODS:
        raise ConfigError(f"simulation.method must be one of {METHODS}, got {method!r}")
    record_every = sim.get("record_every", 50)
    if isinstance(record_every, bool) or not isinstance(record_every, int) or record_every < 1:
        raise ConfigError("simulation.record_every must be a positive integer")
    workers = sim.get("workers")
    if workers is not None and (isinstance(workers, bool) or not isinstance(workers, int) or workers < 1):
        raise ConfigError("simulation.workers must be a positive integer or null")
    events = [_parse_event(d, k, node_params) for k, d in enumerate(sim.get("events", []))]
    try:
        schedule = EventSchedule(events)
        schedule.validate(t_end)
    except ValueError as exc:
        raise ConfigError(f"simulation.events: {exc}") from None

    out = Path(raw.get("output", {}).get("dir", "out"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    return RunConfig(raw, model, options, rbar, schedule, dt, t_end, method, record_every,
                     workers, out, node_types)


def load_config(path) -> RunConfig:
    """Read and parse a JSON configuration file.

    A relative ``output.dir`` is resolved against the current directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return parse_config(raw)


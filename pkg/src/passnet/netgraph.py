"""Directed graphs and assembly of the interconnected network system.

Nodes and edges exchange port signals through the incidence matrix
(Kirchhoff-style relations):

    w_nodes = -(B kron I_p) y_edges,      w_edges = (B kron I_p)' y_nodes

so the aggregate state ``[x_nodes; x_edges]`` evolves with

    A_hat = [[A_V, -Bw_V B_p C_E], [Bw_E B_p' C_V, A_E]],   B_hat = [Bu_V; 0].
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Hashable, Mapping, Sequence, Union

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, TopologyError
from .linsys import LtiEdge, LtiNode

__all__ = [
    "DirectedGraph",
    "NetworkModel",
    "AddEdge",
    "RemoveEdge",
    "SetNodeParam",
    "SetEdgeParam",
    "incidence_matrix",
    "assemble_global",
    "modify_topology",
    "embed_gains",
    "find_edge",
]


@dataclass(frozen=True)
class DirectedGraph:
    """Ordered node ids and ordered ``(source, sink)`` edges.

    Parallel edges are accepted; self-loops are not.
    """

    nodes: tuple
    edges: tuple = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple((e[0], e[1]) for e in self.edges)
        if len(set(nodes)) != len(nodes):
            raise TopologyError("duplicate node ids")
        known = set(nodes)
        for k, (src, dst) in enumerate(edges):
            if src not in known or dst not in known:
                raise TopologyError(f"edge {k} ({src!r}, {dst!r}) references an unknown node")
            if src == dst:
                raise TopologyError(f"edge {k} is a self-loop at node {src!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def index(self, node) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise TopologyError(f"unknown node {node!r}") from None

    def sink_edges(self, node):
        """Indices of edges with ``node`` as sink."""
        return [k for k, (_, dst) in enumerate(self.edges) if dst == node]

    def source_edges(self, node):
        """Indices of edges with ``node`` as source."""
        return [k for k, (src, _) in enumerate(self.edges) if src == node]


def incidence_matrix(graph: DirectedGraph) -> np.ndarray:
    """Node-by-edge incidence matrix: +1 at the sink row, -1 at the source row."""
    B = np.zeros((len(graph.nodes), len(graph.edges)), dtype=int)
    for k, (src, dst) in enumerate(graph.edges):
        B[graph.index(src), k] = -1
        B[graph.index(dst), k] = 1
    return B


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Graph plus node and edge subsystems sharing a port dimension ``p``.

    ``node_params`` / ``edge_params`` optionally hold the physical parameter
    records the subsystems were built from (any dataclass exposing
    ``to_lti()``, and ``reference()`` for nodes with setpoints); they let
    :func:`modify_topology` rebuild a subsystem after a parameter change.
    """

    graph: DirectedGraph
    node_systems: Mapping[Hashable, LtiNode]
    edge_systems: Sequence[LtiEdge]
    coupling_dim: int = 1
    node_params: Mapping[Hashable, Any] = field(default_factory=dict)
    edge_params: Sequence[Any] = ()

    def __post_init__(self):
        p = int(self.coupling_dim)
        if p <= 0:
            raise DimensionError("coupling dimension must be positive")
        nodes = dict(self.node_systems)
        if set(nodes) != set(self.graph.nodes):
            missing = set(self.graph.nodes) - set(nodes)
            extra = set(nodes) - set(self.graph.nodes)
            raise TopologyError(f"node systems do not match graph (missing {missing}, extra {extra})")
        for node, sys in nodes.items():
            if sys.p != p:
                raise DimensionError(f"node {node!r} port dimension {sys.p} != coupling dimension {p}")
        edges = tuple(self.edge_systems)
        if len(edges) != len(self.graph.edges):
            raise DimensionError(f"{len(edges)} edge systems for {len(self.graph.edges)} edges")
        for k, sys in enumerate(edges):
            if sys.p != p:
                raise DimensionError(f"edge {k} port dimension {sys.p} != coupling dimension {p}")
        eparams = tuple(self.edge_params) or (None,) * len(edges)
        if len(eparams) != len(edges):
            raise DimensionError("edge_params must align with edges")
        object.__setattr__(self, "coupling_dim", p)
        object.__setattr__(self, "node_systems", {n: nodes[n] for n in self.graph.nodes})
        object.__setattr__(self, "edge_systems", edges)
        object.__setattr__(self, "node_params", dict(self.node_params))
        object.__setattr__(self, "edge_params", eparams)

    @classmethod
    def from_params(cls, graph, node_params, edge_params, coupling_dim=1):
        """Build subsystems from parameter records via their ``to_lti()``."""
        node_params = dict(node_params)
        return cls(graph,
                   {n: node_params[n].to_lti() for n in graph.nodes},
                   [e.to_lti() for e in edge_params],
                   coupling_dim, node_params, tuple(edge_params))

    # -- ordering -------------------------------------------------------
    @cached_property
    def node_offsets(self) -> dict:
        """Start index of each node's states in the global state vector."""
        out, k = {}, 0
        for node in self.graph.nodes:
            out[node] = k
            k += self.node_systems[node].n
        return out

    @cached_property
    def edge_offsets(self) -> tuple:
        out, k = [], self.n_node_states
        for sys in self.edge_systems:
            out.append(k)
            k += sys.n
        return tuple(out)

    @cached_property
    def input_offsets(self) -> dict:
        out, k = {}, 0
        for node in self.graph.nodes:
            out[node] = k
            k += self.node_systems[node].m
        return out

    @property
    def n_node_states(self) -> int:
        return sum(s.n for s in self.node_systems.values())

    @property
    def n_states(self) -> int:
        return self.n_node_states + sum(s.n for s in self.edge_systems)

    @property
    def n_inputs(self) -> int:
        return sum(s.m for s in self.node_systems.values())

    @property
    def controlled_nodes(self) -> list:
        return [n for n in self.graph.nodes if self.node_systems[n].controlled]

    def node_slice(self, node) -> slice:
        start = self.node_offsets[node]
        return slice(start, start + self.node_systems[node].n)

    def edge_slice(self, k) -> slice:
        start = self.edge_offsets[k]
        return slice(start, start + self.edge_systems[k].n)

    def input_slice(self, node) -> slice:
        start = self.input_offsets[node]
        return slice(start, start + self.node_systems[node].m)

    def edge_label(self, k) -> str:
        src, dst = self.graph.edges[k]
        dup = self.graph.edges[:k].count((src, dst))
        return f"{src}_{dst}" if dup == 0 else f"{src}_{dst}#{dup}"

    @cached_property
    def state_labels(self) -> tuple:
        labels = []
        for node in self.graph.nodes:
            labels += [f"{lab}[{node}]" for lab in self.node_systems[node].state_labels]
        for k, sys in enumerate(self.edge_systems):
            labels += [f"{lab}[{self.edge_label(k)}]" for lab in sys.state_labels]
        return tuple(labels)

    @cached_property
    def input_labels(self) -> tuple:
        labels = []
        for node in self.graph.nodes:
            labels += [f"{lab}[{node}]" for lab in self.node_systems[node].input_labels]
        return tuple(labels)

    # -- assembled matrices ----------------------------------------------
    @cached_property
    def incidence(self) -> np.ndarray:
        return incidence_matrix(self.graph)

    @cached_property
    def _global(self):
        return _assemble(self)

    @property
    def A_hat(self) -> np.ndarray:
        return self._global[0]

    @property
    def B_hat(self) -> np.ndarray:
        return self._global[1]

    def references(self) -> dict:
        """Per-node reference vectors taken from the parameter records."""
        out = {}
        for node in self.graph.nodes:
            sys = self.node_systems[node]
            params = self.node_params.get(node)
            if sys.q and params is not None and hasattr(params, "reference"):
                out[node] = np.asarray(params.reference(), dtype=float).reshape(sys.q)
            else:
                out[node] = np.zeros(sys.q)
        return out

    def reference_vector(self, refs=None) -> np.ndarray:
        """Constant drift ``b`` collecting ``Br_i r_i`` in global state order."""
        refs = self.references() if refs is None else {**self.references(), **refs}
        b = np.zeros(self.n_states)
        for node in self.graph.nodes:
            sys = self.node_systems[node]
            if sys.q:
                b[self.node_slice(node)] = sys.Br @ np.asarray(refs[node], dtype=float).reshape(sys.q)
        return b

    def port_maps(self):
        """Linear maps from the global state to stacked node and edge ports.

        Returns ``(Wv, Yv, We, Ye)`` with ``w_nodes = Wv x``, ``y_nodes = Yv x``,
        ``w_edges = We x`` and ``y_edges = Ye x``.
        """
        p = self.coupling_dim
        N = self.n_states
        nv, ne = len(self.graph.nodes), len(self.graph.edges)
        Bp = np.kron(self.incidence, np.eye(p))
        Yv = np.zeros((nv * p, N))
        for i, node in enumerate(self.graph.nodes):
            Yv[i * p:(i + 1) * p, self.node_slice(node)] = self.node_systems[node].C
        Ye = np.zeros((ne * p, N))
        for k, sys in enumerate(self.edge_systems):
            Ye[k * p:(k + 1) * p, self.edge_slice(k)] = sys.C
        return -Bp @ Ye, Yv, Bp.T @ Yv, Ye


def _assemble(model: NetworkModel):
    p = model.coupling_dim
    nodes = [model.node_systems[n] for n in model.graph.nodes]
    edges = list(model.edge_systems)
    A_V = sla.block_diag(*[s.A for s in nodes]) if nodes else np.zeros((0, 0))
    Bw_V = _block_diag_rect([s.Bw for s in nodes], model.n_node_states, len(nodes) * p)
    C_V = _block_diag_rect([s.C for s in nodes], len(nodes) * p, model.n_node_states)
    Bu_V = _block_diag_rect([s.Bu for s in nodes], model.n_node_states, model.n_inputs)
    ne_states = sum(s.n for s in edges)
    A_E = sla.block_diag(*[s.A for s in edges]) if edges else np.zeros((0, 0))
    Bw_E = _block_diag_rect([s.Bw for s in edges], ne_states, len(edges) * p)
    C_E = _block_diag_rect([s.C for s in edges], len(edges) * p, ne_states)
    Bp = np.kron(model.incidence, np.eye(p))
    A_hat = np.block([
        [A_V, -Bw_V @ Bp @ C_E],
        [Bw_E @ Bp.T @ C_V, A_E.reshape(ne_states, ne_states)],
    ])
    B_hat = np.vstack([Bu_V, np.zeros((ne_states, model.n_inputs))])
    A_hat.setflags(write=False)
    B_hat.setflags(write=False)
    return A_hat, B_hat


def _block_diag_rect(blocks, rows, cols):
    out = np.zeros((rows, cols))
    r = c = 0
    for blk in blocks:
        out[r:r + blk.shape[0], c:c + blk.shape[1]] = blk
        r += blk.shape[0]
        c += blk.shape[1]
    return out


def embed_gains(model: NetworkModel, gains) -> np.ndarray:
    """Global gain matrix (inputs x states) from per-node gains."""
    K = np.zeros((model.n_inputs, model.n_states))
    for node in model.controlled_nodes:
        if node not in gains:
            raise DimensionError(f"no gain for controllable node {node!r}")
        Ki = np.atleast_2d(np.asarray(gains[node], dtype=float))
        sys = model.node_systems[node]
        if Ki.shape != (sys.m, sys.n):
            raise DimensionError(f"gain for node {node!r} must be {sys.m}x{sys.n}, got {Ki.shape}")
        K[model.input_slice(node), model.node_slice(node)] = Ki
    return K


def assemble_global(model: NetworkModel):
    """Return ``(A_hat, B_hat)`` for the interconnected network."""
    return model.A_hat, model.B_hat


# -- topology and parameter changes ------------------------------------------

@dataclass(frozen=True)
class AddEdge:
    source: Hashable
    sink: Hashable
    system: LtiEdge | None = None
    params: Any = None

    def edge_system(self):
        if self.system is not None:
            return self.system
        if self.params is None:
            raise TopologyError("AddEdge needs an edge system or parameter record")
        return self.params.to_lti()


@dataclass(frozen=True)
class RemoveEdge:
    index: int


@dataclass(frozen=True)
class SetNodeParam:
    node: Hashable
    path: str
    value: Any


@dataclass(frozen=True)
class SetEdgeParam:
    index: int
    path: str
    value: Any


Change = Union[AddEdge, RemoveEdge, SetNodeParam, SetEdgeParam]

_ENTRY = re.compile(r"^(A|Bu|Bw|C|Br)\[(\d+),\s*(\d+)\]$")


def _updated(system, params, path, value, what):
    """Apply ``path = value`` to a parameter record or a raw matrix entry."""
    if params is not None and dataclasses.is_dataclass(params) and path in {
            f.name for f in dataclasses.fields(params)}:
        new_params = dataclasses.replace(params, **{path: value})
        return new_params.to_lti(), new_params
    match = _ENTRY.match(path.replace(" ", ""))
    if match and hasattr(system, match.group(1)):
        name, i, j = match.group(1), int(match.group(2)), int(match.group(3))
        M = np.array(getattr(system, name))
        if i >= M.shape[0] or j >= M.shape[1]:
            raise TopologyError(f"{what}: entry {path} out of range for shape {M.shape}")
        M[i, j] = float(value)
        return dataclasses.replace(system, **{name: M}), None
    raise TopologyError(f"{what}: parameter path {path!r} not recognized")


def modify_topology(model: NetworkModel, change: Change) -> NetworkModel:
    """Return a new model with one topology or parameter change applied.

    Existing nodes and edges keep their order; an added edge goes last.
    """
    graph = model.graph
    if isinstance(change, AddEdge):
        for end in (change.source, change.sink):
            if end not in graph.nodes:
                raise TopologyError(f"unknown node {end!r}")
        new_graph = DirectedGraph(graph.nodes, graph.edges + ((change.source, change.sink),))
        return NetworkModel(new_graph, model.node_systems,
                            model.edge_systems + (change.edge_system(),),
                            model.coupling_dim, model.node_params,
                            model.edge_params + (change.params,))
    if isinstance(change, RemoveEdge):
        k = change.index
        if not 0 <= k < len(graph.edges):
            raise TopologyError(f"unknown edge index {k}")
        keep = [j for j in range(len(graph.edges)) if j != k]
        new_graph = DirectedGraph(graph.nodes, tuple(graph.edges[j] for j in keep))
        return NetworkModel(new_graph, model.node_systems,
                            tuple(model.edge_systems[j] for j in keep),
                            model.coupling_dim, model.node_params,
                            tuple(model.edge_params[j] for j in keep))
    if isinstance(change, SetNodeParam):
        if change.node not in model.node_systems:
            raise TopologyError(f"unknown node {change.node!r}")
        system, params = _updated(model.node_systems[change.node], model.node_params.get(change.node),
                                  change.path, change.value, f"node {change.node!r}")
        nodes = dict(model.node_systems)
        nodes[change.node] = system
        nparams = dict(model.node_params)
        if params is not None:
            nparams[change.node] = params
        else:
            nparams.pop(change.node, None)
        return NetworkModel(graph, nodes, model.edge_systems, model.coupling_dim,
                            nparams, model.edge_params)
    if isinstance(change, SetEdgeParam):
        k = change.index
        if not 0 <= k < len(graph.edges):
            raise TopologyError(f"unknown edge index {k}")
        system, params = _updated(model.edge_systems[k], model.edge_params[k],
                                  change.path, change.value, f"edge {k}")
        edges = list(model.edge_systems)
        edges[k] = system
        eparams = list(model.edge_params)
        eparams[k] = params
        return NetworkModel(graph, model.node_systems, edges, model.coupling_dim,
                            model.node_params, eparams)
    raise TypeError(f"unsupported change {change!r}")


def find_edge(graph: DirectedGraph, source, sink) -> int:
    """Index of the first edge ``(source, sink)``."""
    try:
        return graph.edges.index((source, sink))
    except ValueError:
        raise TopologyError(f"no edge ({source!r}, {sink!r})") from None

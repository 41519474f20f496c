"""Decentralized passivating LQR controllers for networked LTI systems."""
from .errors import (ConfigError, DimensionError, InfeasibleError, PassnetError, SimulationDiverged,
                     SolverError, TopologyError)
from .linsys import LtiEdge, LtiNode, PassivityCertificate, check_strict_passivity
from .netgraph import DirectedGraph, NetworkModel, assemble_global, incidence_matrix
from .synthesis import SynthesisOptions, SynthesisResult, build_cost_certificate, retune, synthesize_node
from .verify import VerificationReport, lqr_oracle, verify_network, verify_retune

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "InfeasibleError",
    "PassnetError",
    "SimulationDiverged",
    "SolverError",
    "TopologyError",
    "LtiEdge",
    "LtiNode",
    "PassivityCertificate",
    "check_strict_passivity",
    "DirectedGraph",
    "NetworkModel",
    "assemble_global",
    "incidence_matrix",
    "SynthesisOptions",
    "SynthesisResult",
    "build_cost_certificate",
    "retune",
    "synthesize_node",
    "VerificationReport",
    "lqr_oracle",
    "verify_network",
    "verify_retune",
]

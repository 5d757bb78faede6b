"""Closed-loop reachability for continuously actuated neural network control.

Per-cell affine abstraction of the controller, sound interval flowpipes,
and forward/backward fixpoints over the resulting cell graph.
"""

from ._core import BACKEND
from .abstraction import OOD, LinearAbstraction, LinearizeConfig, Partition, linearize
from .controller import AnalyticLaw, Network, NeuralNet, load_network, save_network, surrogate_path
from .geom import Box, Interval
from .graph import CatConfig, CellGraph, backward_reach, cat, forward_reach, load_graph, save_graph
from .plant import PlantParams, State, simulate
from .properties import frequency_sweep, verify_p1, verify_p2
from .reach import reach_continuous, reach_fixed, reach_zoh

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "OOD", "LinearAbstraction", "LinearizeConfig", "Partition", "linearize",
    "AnalyticLaw", "Network", "NeuralNet", "load_network", "save_network", "surrogate_path",
    "Box", "Interval", "CatConfig", "CellGraph", "backward_reach", "cat", "forward_reach",
    "load_graph", "save_graph", "PlantParams", "State", "simulate", "frequency_sweep",
    "verify_p1", "verify_p2", "reach_continuous", "reach_fixed", "reach_zoh",
]

"""Learned distance-field barrier safety filter for car-like robots.

Pipeline: load an occupancy map and compute its exact Euclidean distance
field (grid), fit a smooth RBF support-vector surrogate with analytic
derivatives (svr), stack it into an input-constrained control barrier with
an explicit override filter (barrier), and run closed-loop rollouts of the
sigmoid-steering bicycle model (vehicle, sim). See the ``safesteer`` CLI.
"""

from .barrier import BarrierStack, FilterDecision, naive_filter, safety_filter
from .grid import (
    DistanceField,
    EdfDataset,
    OccupancyGrid,
    exact_edf,
    load_grid,
    sample_dataset,
)
from .svr import SvrHyperparams, SvrModel, load_model, save_model, train
from .vehicle import VehicleParams, VehicleState
from .sim import SimConfig, Trajectory, rollout, safety_report

__all__ = [
    "BarrierStack",
    "DistanceField",
    "EdfDataset",
    "FilterDecision",
    "OccupancyGrid",
    "SimConfig",
    "SvrHyperparams",
    "SvrModel",
    "Trajectory",
    "VehicleParams",
    "VehicleState",
    "exact_edf",
    "load_grid",
    "load_model",
    "naive_filter",
    "rollout",
    "safety_filter",
    "safety_report",
    "sample_dataset",
    "save_model",
    "train",
]

"""Closed-loop rollout: goal-seeking nominal steering passed through the
safety filter, integrated with RK4, and logged step by step.

The nominal controller is a proportional steering-rate law on the bearing
error between the velocity direction (theta + delta) and the goal; it has no
knowledge of the map, so aiming it at an off-road goal exercises the filter.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .barrier import BarrierStack, FilterDecision, evaluate, safety_filter
from .grid import DistanceField
from .vehicle import VehicleParams, sigmoid_steer, step_rk4

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = [
    "t", "x_f", "y_f", "theta", "zeta", "delta", "u_nom", "u_applied",
    "overridden", "h0", "h1", "h2", "residual", "violation",
]


@dataclass(frozen=True)
class SimConfig:
    duration: float  # s
    initial_state: tuple[float, float, float, float]  # (x_f, y_f, theta, zeta)
    goal: tuple[float, float]  # m
    dt: float = 0.01  # s
    nominal_gain: float = 2.0  # 1/s
    seed: int = 0
    disturbance: float = 0.0  # additive input disturbance amplitude, rad/s

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration > self.dt:
            raise ValueError("duration must exceed dt")
        if self.disturbance < 0:
            raise ValueError("disturbance amplitude must be nonnegative")


@dataclass
class Trajectory:
    """Uniform-time log of one rollout; row k is the state at t = k dt and
    the controls computed there."""

    t: np.ndarray
    states: np.ndarray  # (n, 4)
    delta: np.ndarray
    u_nom: np.ndarray
    u_applied: np.ndarray
    overridden: np.ndarray  # bool
    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    residual: np.ndarray
    violation: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for k in range(len(self)):
            writer.writerow(
                [repr(float(self.t[k]))]
                + [repr(float(v)) for v in self.states[k]]
                + [repr(float(self.delta[k])), repr(float(self.u_nom[k])),
                   repr(float(self.u_applied[k])), str(int(self.overridden[k])),
                   repr(float(self.h0[k])), repr(float(self.h1[k])),
                   repr(float(self.h2[k])), repr(float(self.residual[k])),
                   repr(float(self.violation[k]))]
            )
        return buf.getvalue()

    def to_csv(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        from pathlib import Path

        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != TRAJECTORY_HEADER:
                raise ValueError(f"unexpected trajectory header {header}")
            rows = [[float(v) for v in row] for row in reader]
        if not rows:
            raise ValueError("empty trajectory file")
        arr = np.asarray(rows)
        return cls(
            t=arr[:, 0], states=arr[:, 1:5], delta=arr[:, 5], u_nom=arr[:, 6],
            u_applied=arr[:, 7], overridden=arr[:, 8] != 0, h0=arr[:, 9],
            h1=arr[:, 10], h2=arr[:, 11], residual=arr[:, 12],
            violation=arr[:, 13],
        )


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped == -math.pi:
        return math.pi
    return wrapped


def nominal_controller(state: np.ndarray, goal: tuple[float, float],
                       gain: float, params: VehicleParams) -> float:
    """Proportional steering rate toward the goal bearing, clamped to u_max."""
    x, y, theta, zeta = state
    bearing = math.atan2(goal[1] - y, goal[0] - x)
    err = wrap_angle(bearing - (theta + sigmoid_steer(zeta, params.delta_max)))
    u = gain * err
    return min(max(u, -params.u_max), params.u_max)


def rollout(config: SimConfig, stack: BarrierStack, params: VehicleParams,
            filtered: bool = True,
            extent: tuple[tuple[float, float], tuple[float, float]] | None = None,
            ) -> Trajectory:
    """Run the closed loop for floor(duration/dt) steps and log every row.

    Deterministic for a fixed config: the optional input disturbance is drawn
    from a generator seeded with ``config.seed``. With ``filtered=False`` the
    nominal input is applied unchanged (counterfactual run); the barrier
    values are still logged for comparison.
    """
    state = np.asarray(config.initial_state, dtype=np.float64)
    if state.shape != (4,):
        raise ValueError("initial_state must have 4 components")
    if extent is not None:
        (x_lo, x_hi), (y_lo, y_hi) = extent
        if not (x_lo <= state[0] <= x_hi and y_lo <= state[1] <= y_hi):
            raise ValueError(f"initial state position {state[:2]} off-map")
        if not (x_lo <= config.goal[0] <= x_hi and y_lo <= config.goal[1] <= y_hi):
            raise ValueError(f"goal {config.goal} off-map")

    start = evaluate(stack, state)
    if min(start.h0, start.h1, start.h2) < 0:
        log.warning(
            "initial state outside C*: h0=%.3f h1=%.3f h2=%.3f",
            start.h0, start.h1, start.h2,
        )

    steps = int(math.floor(config.duration / config.dt))
    n = steps + 1
    rng = np.random.default_rng(config.seed)

    t = np.empty(n)
    states = np.empty((n, 4))
    delta = np.empty(n)
    u_nom_arr = np.empty(n)
    u_app_arr = np.empty(n)
    overridden = np.empty(n, dtype=bool)
    h0_arr = np.empty(n)
    h1_arr = np.empty(n)
    h2_arr = np.empty(n)
    residual = np.empty(n)
    violation = np.empty(n)

    for k in range(n):
        u_nom = nominal_controller(state, config.goal, config.nominal_gain, params)
        decision: FilterDecision = safety_filter(stack, state, u_nom)
        u_applied = decision.u_applied if filtered else u_nom

        t[k] = k * config.dt
        states[k] = state
        delta[k] = sigmoid_steer(state[3], params.delta_max)
        u_nom_arr[k] = u_nom
        u_app_arr[k] = u_applied
        overridden[k] = decision.overridden if filtered else False
        h0_arr[k], h1_arr[k], h2_arr[k] = decision.h_values
        residual[k] = decision.constraint_residual
        violation[k] = decision.violation

        if k < steps:
            u_plant = u_applied
            if config.disturbance > 0:
                w = rng.uniform(-config.disturbance, config.disturbance)
                u_plant = min(max(u_applied + w, -params.u_max), params.u_max)
            state = step_rk4(state, u_plant, config.dt, params)

    return Trajectory(t=t, states=states, delta=delta, u_nom=u_nom_arr,
                      u_applied=u_app_arr, overridden=overridden, h0=h0_arr,
                      h1=h1_arr, h2=h2_arr, residual=residual,
                      violation=violation)


@dataclass(frozen=True)
class SafetyReport:
    rows: int
    min_h0: float
    min_true_edf: float
    overridden_steps: int
    violation_steps: int
    max_violation: float
    filter_engaged_fraction: float

    def to_text(self) -> str:
        return (
            f"rows = {self.rows}\n"
            f"min_h0 = {self.min_h0!r}\n"
            f"min_true_edf = {self.min_true_edf!r}\n"
            f"overridden_steps = {self.overridden_steps}\n"
            f"violation_steps = {self.violation_steps}\n"
            f"max_violation = {self.max_violation!r}\n"
            f"filter_engaged_fraction = {self.filter_engaged_fraction!r}\n"
        )


def safety_report(trajectory: Trajectory, field: DistanceField) -> SafetyReport:
    """Summarize a rollout against the ground-truth distance field."""
    n = len(trajectory)
    if n == 0:
        raise ValueError("empty trajectory")
    true_edf = np.array([
        field.interpolate(x, y) for x, y in trajectory.states[:, :2]
    ])
    n_violations = int(np.sum(trajectory.violation > 0))
    return SafetyReport(
        rows=n,
        min_h0=float(trajectory.h0.min()),
        min_true_edf=float(true_edf.min()),
        overridden_steps=int(trajectory.overridden.sum()),
        violation_steps=n_violations,
        max_violation=float(trajectory.violation.max()),
        filter_engaged_fraction=float(trajectory.overridden.mean()),
    )

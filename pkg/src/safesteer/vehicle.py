"""Kinematic bicycle model with sigmoid-reparameterized steering.

The front-axle bicycle model with steering rate input u has state
(x_f, y_f, theta, delta) and constraints |delta| <= delta_max, |u| <= u_max.
Replacing delta by an unconstrained coordinate zeta through

    delta = phi(zeta) = delta_max * (2 / (1 + exp(-zeta)) - 1)

keeps the steering angle inside its bound by construction, leaving
|u| <= u_max as the only input constraint. State vectors throughout this
package are float arrays ``[x_f, y_f, theta, zeta]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Keeps phi'(zeta) bounded away from underflow; |zeta| <= 30 still leaves
# |phi| < delta_max strictly in float64.
ZETA_LIMIT = 30.0


@dataclass(frozen=True)
class VehicleParams:
    """Constant forward speed, wheelbase, and steering limits."""

    v_f: float = 5.0  # m/s
    L: float = 3.0  # m wheelbase
    delta_max: float = 0.6  # rad
    u_max: float = 1.0  # rad/s

    def __post_init__(self):
        if not (self.v_f > 0 and self.L > 0 and self.u_max > 0):
            raise ValueError("v_f, L, u_max must be positive")
        if not 0 < self.delta_max < math.pi / 2:
            raise ValueError("delta_max must be in (0, pi/2)")


@dataclass(frozen=True)
class VehicleState:
    x_f: float = 0.0
    y_f: float = 0.0
    theta: float = 0.0
    zeta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x_f, self.y_f, self.theta, self.zeta], dtype=np.float64)

    @classmethod
    def from_array(cls, state: np.ndarray) -> "VehicleState":
        x, y, th, ze = (float(s) for s in state)
        return cls(x, y, th, ze)


def sigmoid_steer(zeta: float, delta_max: float) -> float:
    """Steering angle phi(zeta) = delta_max * (2 sigma(zeta) - 1).

    Equals delta_max * tanh(zeta / 2); strictly increasing, |phi| < delta_max.
    """
    return delta_max * math.tanh(0.5 * zeta)


def sigmoid_steer_slope(zeta: float, delta_max: float) -> float:
    """phi'(zeta) = (delta_max / 2) * sech^2(zeta / 2) > 0."""
    t = math.tanh(0.5 * zeta)
    return 0.5 * delta_max * (1.0 - t) * (1.0 + t)


def inverse_sigmoid(delta: float, delta_max: float) -> float:
    """zeta such that phi(zeta) = delta. Requires |delta| < delta_max."""
    if abs(delta) >= delta_max:
        raise ValueError(f"|delta|={abs(delta)} must be < delta_max={delta_max}")
    return 2.0 * math.atanh(delta / delta_max)


def drift_field(state: np.ndarray, params: VehicleParams) -> np.ndarray:
    """f(x): state derivative with zero steering-rate input."""
    _, _, theta, zeta = state
    phi = sigmoid_steer(zeta, params.delta_max)
    psi = theta + phi
    return np.array([
        params.v_f * math.cos(psi),
        params.v_f * math.sin(psi),
        params.v_f * math.sin(phi) / params.L,
        0.0,
    ])


def input_field(state: np.ndarray, params: VehicleParams) -> np.ndarray:
    """g(x): only the zeta component is nonzero, with gain 1/phi'(zeta).

    phi' is evaluated at zeta clipped to the +-30 guard band; beyond it the
    slope underflows and the gain would not be representable.
    """
    zeta = min(max(state[3], -ZETA_LIMIT), ZETA_LIMIT)
    return np.array([0.0, 0.0, 0.0, 1.0 / sigmoid_steer_slope(zeta, params.delta_max)])


def dynamics(state: np.ndarray, u: float, params: VehicleParams) -> np.ndarray:
    """Control-affine state derivative f(x) + g(x) u of the modified model."""
    xdot = drift_field(state, params)
    zeta = min(max(state[3], -ZETA_LIMIT), ZETA_LIMIT)
    xdot[3] = u / sigmoid_steer_slope(zeta, params.delta_max)
    return xdot


def _zeta_after(zeta: float, u: float, tau: float, delta_max: float) -> float:
    """Exact steering flow: phi(zeta) obeys d(phi)/dt = u, so the scalar
    subsystem integrates in closed form through the sigmoid bijection."""
    if u * tau == 0.0:
        return min(max(zeta, -ZETA_LIMIT), ZETA_LIMIT)
    cap = delta_max * math.tanh(0.5 * ZETA_LIMIT)
    delta = sigmoid_steer(zeta, delta_max) + u * tau
    delta = min(max(delta, -cap), cap)
    out = 2.0 * math.atanh(delta / delta_max)
    return min(max(out, -ZETA_LIMIT), ZETA_LIMIT)


def step_rk4(state: np.ndarray, u: float, dt: float, params: VehicleParams) -> np.ndarray:
    """One integrator step with u held constant over the step.

    The steering coordinate uses the exact flow of its scalar dynamics
    (delta advances linearly at rate u, clamped at |zeta| <= 30); zeta's own
    ODE is too stiff near saturation for polynomial stage arithmetic, where
    1/phi' reaches 1e13. The planar states (x_f, y_f, theta) take a classical
    4th-order Runge-Kutta step whose stages see the exact stage-time steering
    angle, preserving 4th-order accuracy away from the saturation clamp.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, y, theta, zeta = (float(s) for s in np.asarray(state, dtype=np.float64))
    v = params.v_f
    cap = params.delta_max * math.tanh(0.5 * ZETA_LIMIT)
    delta0 = sigmoid_steer(zeta, params.delta_max)

    def rates(th: float, tau: float) -> tuple[float, float, float]:
        delta = min(max(delta0 + u * tau, -cap), cap)
        psi = th + delta
        return (v * math.cos(psi), v * math.sin(psi),
                v * math.sin(delta) / params.L)

    k1 = rates(theta, 0.0)
    k2 = rates(theta + 0.5 * dt * k1[2], 0.5 * dt)
    k3 = rates(theta + 0.5 * dt * k2[2], 0.5 * dt)
    k4 = rates(theta + dt * k3[2], dt)
    sixth = dt / 6.0
    return np.array([
        x + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        theta + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        _zeta_after(zeta, u, dt, params.delta_max),
    ])

"""Differential-drive kinematics, measurement model and polar error coordinates.

Poses are ``(x, y, theta)`` in the global frame. Headings are always reported
in the half-open interval ``(-pi, pi]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError

# Below this goal distance the bearing to the goal is undefined.
RHO_SINGULAR = 1e-9


class RobotState(NamedTuple):
    x: float
    y: float
    theta: float


class ControlCommand(NamedTuple):
    v: float
    omega: float


class WheelNoise(NamedTuple):
    d_omega_r: float
    d_omega_l: float


class PolarError(NamedTuple):
    rho: float
    alpha: float
    phi: float


ZERO_COMMAND = ControlCommand(0.0, 0.0)
ZERO_WHEEL_NOISE = WheelNoise(0.0, 0.0)


@dataclass(frozen=True)
class RobotGeometry:
    """Wheel radius and axle length in meters, sample time in seconds."""

    wheel_radius: float = 0.05
    wheel_base: float = 0.6
    sample_time: float = 0.01

    def __post_init__(self):
        for name in ("wheel_radius", "wheel_base", "sample_time"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be finite and > 0, got {value!r}")


def wrap_angle(theta: float) -> float:
    """Map an angle to ``(-pi, pi]``.

    >>> wrap_angle(-math.pi)
    3.141592653589793
    """
    if not math.isfinite(theta):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    r = math.remainder(theta, 2.0 * math.pi)
    return math.pi if r == -math.pi else r


def wrap_angles(theta):
    """Vectorised :func:`wrap_angle` for numpy arrays."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("cannot wrap non-finite angles")
    r = theta - 2.0 * np.pi * np.round(theta / (2.0 * np.pi))
    return np.where(r <= -np.pi, r + 2.0 * np.pi, r)


def _check_finite(*values):
    for value in values:
        if not all(math.isfinite(v) for v in value):
            raise ValueError(f"non-finite input {tuple(value)!r}")


def body_velocity(cmd, noise, geom: RobotGeometry) -> tuple[float, float]:
    """Commanded body velocity perturbed by wheel-speed noise."""
    r = geom.wheel_radius
    v = cmd[0] + r * (noise[0] + noise[1]) / 2.0
    omega = cmd[1] + r * (noise[0] - noise[1]) / geom.wheel_base
    return v, omega


def step_kinematics(state, cmd, noise, geom: RobotGeometry) -> RobotState:
    """Advance the pose one forward-Euler step of length ``geom.sample_time``."""
    _check_finite(state, cmd, noise)
    x, y, theta = state
    v, omega = body_velocity(cmd, noise, geom)
    ts = geom.sample_time
    return RobotState(
        float(x + ts * v * math.cos(theta)),
        float(y + ts * v * math.sin(theta)),
        wrap_angle(float(theta + ts * omega)),
    )


def measure(state, meas_noise=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Full-state pose measurement with additive noise."""
    _check_finite(state, meas_noise)
    z = np.asarray(state, dtype=float) + np.asarray(meas_noise, dtype=float)
    z[2] = wrap_angle(z[2])
    return z


def polar_transform(state, goal) -> PolarError:
    """Distance and bearings of ``goal`` as seen from ``state``.

    ``alpha`` is the goal bearing relative to the robot heading, ``phi`` the
    same bearing relative to the goal heading. Both are zero at the goal.
    """
    _check_finite(state, goal)
    ex = goal[0] - state[0]
    ey = goal[1] - state[1]
    rho = math.hypot(ex, ey)
    if rho < RHO_SINGULAR:
        return PolarError(0.0, 0.0, 0.0)
    beta = math.atan2(ey, ex)
    return PolarError(rho, wrap_angle(beta - state[2]), wrap_angle(beta - goal[2]))


def jacobian_A(est, cmd, geom: RobotGeometry) -> np.ndarray:
    """Derivative of :func:`step_kinematics` with respect to the pose."""
    ts_v = geom.sample_time * cmd[0]
    theta = est[2]
    return np.array(
        [
            [1.0, 0.0, -ts_v * math.sin(theta)],
            [0.0, 1.0, ts_v * math.cos(theta)],
            [0.0, 0.0, 1.0],
        ]
    )


def jacobian_W(est, geom: RobotGeometry) -> np.ndarray:
    """Derivative of :func:`step_kinematics` with respect to ``(d_omega_r, d_omega_l)``.

    Right-wheel noise turns the robot left and left-wheel noise turns it right,
    so the heading row has opposite signs.
    """
    c = math.cos(est[2])
    s = math.sin(est[2])
    k = 2.0 / geom.wheel_base
    scale = geom.sample_time * geom.wheel_radius / 2.0
    return scale * np.array([[c, c], [s, s], [k, -k]])

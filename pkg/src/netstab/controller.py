"""Lyapunov posture-stabilization law in polar error coordinates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError
from .model import ControlCommand, PolarError, RobotState, polar_transform

# Below this |alpha| the factor sin(2a)/(2a) is evaluated by its series.
SERIES_THRESHOLD = 1e-4


@dataclass(frozen=True)
class ControllerGains:
    gamma: float = 3.0
    lam: float = 6.0
    h: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "lam", "h"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"gain {name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class ActuatorLimits:
    """Optional hardware limits; the defaults disable every one of them."""

    v_max: float = math.inf
    omega_max: float = math.inf
    deadband: float = 0.0

    def __post_init__(self):
        if not (self.v_max > 0 and self.omega_max > 0):
            raise ConfigurationError("actuator limits must be > 0")
        if not (math.isfinite(self.deadband) and self.deadband >= 0):
            raise ConfigurationError("deadband must be finite and >= 0")


def sinc2(alpha: float) -> float:
    """``cos(a) sin(a) / a`` with the removable singularity at zero filled in."""
    if abs(alpha) < SERIES_THRESHOLD:
        a2 = alpha * alpha
        return 1.0 - (2.0 / 3.0) * a2 + (2.0 / 15.0) * a2 * a2
    return math.cos(alpha) * math.sin(alpha) / alpha


def stabilize(err, gains: ControllerGains, limits: ActuatorLimits | None = None) -> ControlCommand:
    """Velocity command driving the polar error ``(rho, alpha, phi)`` to zero."""
    if not isinstance(gains, ControllerGains):
        raise ConfigurationError(f"expected ControllerGains, got {type(gains).__name__}")
    rho, alpha, phi = err
    if limits is not None and rho < limits.deadband:
        return ControlCommand(0.0, 0.0)
    v = gains.gamma * math.cos(alpha) * rho
    omega = gains.lam * alpha + gains.gamma * sinc2(alpha) * (alpha + gains.h * phi)
    if limits is not None:
        v = min(max(v, -limits.v_max), limits.v_max)
        omega = min(max(omega, -limits.omega_max), limits.omega_max)
    return ControlCommand(v, omega)


class PolarStabilizer(BaseEstimator):
    """Pose-to-command regulator toward a fixed goal pose.

    ``predict`` maps an ``(n_samples, 3)`` array of poses to an
    ``(n_samples, 2)`` array of ``(v, omega)`` commands. There is nothing to
    learn, so ``fit`` only validates the parameters.
    """

    def __init__(self, gamma=3.0, lam=6.0, h=1.0, goal=(0.0, 0.0, 0.0),
                 v_max=math.inf, omega_max=math.inf, deadband=0.0):
        self.gamma = gamma
        self.lam = lam
        self.h = h
        self.goal = goal
        self.v_max = v_max
        self.omega_max = omega_max
        self.deadband = deadband

    def fit(self, X=None, y=None):
        self.gains_ = ControllerGains(self.gamma, self.lam, self.h)
        self.limits_ = ActuatorLimits(self.v_max, self.omega_max, self.deadband)
        goal = np.asarray(self.goal, dtype=float)
        if goal.shape != (3,) or not np.all(np.isfinite(goal)):
            raise ConfigurationError(f"goal must be a finite 3-vector, got {self.goal!r}")
        self.goal_ = RobotState(*goal)
        return self

    def polar_error(self, pose) -> PolarError:
        return polar_transform(pose, self.goal_)

    def command(self, pose) -> ControlCommand:
        """Single-pose convenience wrapper around :func:`stabilize`."""
        return stabilize(self.polar_error(pose), self.gains_, self.limits_)

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != 3:
            raise ValueError(f"expected poses with 3 columns, got {X.shape[1]}")
        return np.array([self.command(row) for row in X])

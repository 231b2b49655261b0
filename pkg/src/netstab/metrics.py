"""Estimation error and convergence metrics over a simulated trace."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .model import wrap_angles

NOISY_TOLERANCES = (0.1, 0.1)
NOISELESS_TOLERANCES = (0.01, 0.01)

_AXES = {"x": ("est_x", "x"), "y": ("est_y", "y"), "theta": ("est_theta", "theta")}


def default_tolerances(noise_enabled: bool) -> tuple[float, float]:
    return NOISY_TOLERANCES if noise_enabled else NOISELESS_TOLERANCES


def column(trace, name) -> np.ndarray:
    return np.array([getattr(row, name) for row in trace], dtype=float)


def rmse(trace, axis: str) -> float:
    """Root-mean-square of estimate minus truth on ``axis`` (``x``, ``y`` or ``theta``)."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    est_name, true_name = _AXES[axis]
    diff = column(trace, est_name) - column(trace, true_name)
    if axis == "theta":
        diff = wrap_angles(diff)
    return float(np.sqrt(np.mean(diff**2)))


def convergence_check(trace, rho_tol: float, theta_tol: float) -> tuple[bool, float | None]:
    """Whether the true pose is inside the tolerances for the final 10% of steps.

    The settle time is the time of the first step after which the pose never
    leaves the tolerances again, or ``None`` if the final step is outside.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    inside = (column(trace, "rho") < rho_tol) & (np.abs(column(trace, "theta")) < theta_tol)
    tail = max(1, int(np.ceil(0.1 * len(trace))))
    converged = bool(inside[-tail:].all())
    if not inside[-1]:
        return converged, None
    outside = np.flatnonzero(~inside)
    first = 0 if outside.size == 0 else outside[-1] + 1
    return converged, float(trace[first].time)


@dataclass
class MetricsSummary:
    rmse_x: float
    rmse_y: float
    rmse_theta: float
    final_rho: float
    final_abs_theta: float
    final_abs_v: float
    final_abs_omega: float
    settle_time: float | None
    converged: bool

    def to_dict(self):
        return asdict(self)


NUMERIC_FIELDS = tuple(f.name for f in fields(MetricsSummary) if f.name != "converged")


def summarize(trace, rho_tol=None, theta_tol=None, noise_enabled=True) -> MetricsSummary:
    default_rho, default_theta = default_tolerances(noise_enabled)
    converged, settle = convergence_check(
        trace,
        default_rho if rho_tol is None else rho_tol,
        default_theta if theta_tol is None else theta_tol,
    )
    last = trace[-1]
    return MetricsSummary(
        rmse_x=rmse(trace, "x"),
        rmse_y=rmse(trace, "y"),
        rmse_theta=rmse(trace, "theta"),
        final_rho=float(last.rho),
        final_abs_theta=abs(float(last.theta)),
        final_abs_v=abs(float(last.applied_v)),
        final_abs_omega=abs(float(last.applied_omega)),
        settle_time=settle,
        converged=converged,
    )

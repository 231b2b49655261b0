"""Closed-loop simulation of the networked robot: plant, sensor, delay links,
estimator and controller, stepped deterministically from a seed."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Literal

import numpy as np

from .channel import DelayChannel
from .controller import ActuatorLimits, ControllerGains, PolarStabilizer
from .errors import ConfigurationError
from .metrics import NUMERIC_FIELDS, summarize
from .estimation import (
    DelayConfig,
    GaussianBelief,
    NaiveDelayedEKF,
    NoiseModel,
    PastObservationFilter,
)
from .model import (
    ZERO_COMMAND,
    ControlCommand,
    RobotGeometry,
    RobotState,
    WheelNoise,
    measure,
    polar_transform,
    step_kinematics,
    wrap_angle,
)

ESTIMATORS = ("none", "ekf_naive", "popf")
EstimatorKind = Literal["none", "ekf_naive", "popf"]


@dataclass
class ScenarioConfig:
    geom: RobotGeometry = field(default_factory=RobotGeometry)
    gains: ControllerGains = field(default_factory=ControllerGains)
    delays: DelayConfig = field(default_factory=DelayConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    initial_state: RobotState = RobotState(-3.0, -3.0, 0.0)
    initial_belief: GaussianBelief | None = None
    goal: RobotState = RobotState(0.0, 0.0, 0.0)
    estimator: EstimatorKind = "popf"
    steps: int = 3000
    seed: int = 0
    noise_enabled: bool = True
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    epoch_estimate: Literal["lagged", "predicted"] = "lagged"

    def __post_init__(self):
        self.initial_state = RobotState(*map(float, self.initial_state))
        self.goal = RobotState(*map(float, self.goal))
        self.validate()

    def validate(self):
        checks = {
            "geom": RobotGeometry, "gains": ControllerGains, "delays": DelayConfig,
            "noise": NoiseModel, "limits": ActuatorLimits,
        }
        for name, cls in checks.items():
            if not isinstance(getattr(self, name), cls):
                raise ConfigurationError(f"{name} must be a {cls.__name__}")
        for name in ("initial_state", "goal"):
            if not all(math.isfinite(v) for v in getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.initial_belief is not None:
            if not isinstance(self.initial_belief, GaussianBelief):
                raise ConfigurationError("initial_belief must be a GaussianBelief or None")
            if self.initial_belief.mean.shape != (3,):
                raise ConfigurationError("initial_belief must describe a 3-dimensional pose")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.epoch_estimate not in ("lagged", "predicted"):
            raise ConfigurationError(f"unknown epoch_estimate {self.epoch_estimate!r}")
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps <= 0:
            raise ConfigurationError(f"steps must be a positive integer, got {self.steps!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.noise_enabled, bool):
            raise ConfigurationError("noise_enabled must be a boolean")

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def belief0(self) -> GaussianBelief:
        """The configured initial belief, or the initial pose with covariance ``0.5 R``."""
        if self.initial_belief is not None:
            return self.initial_belief.copy()
        return GaussianBelief(np.array(self.initial_state), 0.5 * self.noise.R)


@dataclass
class TraceRow:
    """One simulated step. Angles are wrapped; ``meas_*`` is ``None`` when
    nothing arrived; ``err_*`` is estimate minus truth at the same step."""

    step: int
    time: float
    x: float
    y: float
    theta: float
    est_x: float
    est_y: float
    est_theta: float
    pred_x: float
    pred_y: float
    pred_theta: float
    sent_v: float
    sent_omega: float
    applied_v: float
    applied_omega: float
    rho: float
    alpha: float
    phi: float
    meas_x: float | None
    meas_y: float | None
    meas_theta: float | None
    err_x: float
    err_y: float
    err_theta: float


TRACE_FIELDS = tuple(f.name for f in fields(TraceRow))


def _psd_sqrt(cov):
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))


class NoiseSampler:
    """Draws wheel-speed and measurement noise from one seeded PCG64 stream.

    Every call consumes exactly five standard normals, even when disabled, so
    toggling noise does not shift any other random draw.
    """

    def __init__(self, noise: NoiseModel, seed: int, enabled: bool = True):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.enabled = enabled
        self._q_root = _psd_sqrt(noise.Q)
        self._r_root = _psd_sqrt(noise.R)

    def sample(self) -> tuple[WheelNoise, np.ndarray]:
        draw = self.rng.standard_normal(5)
        if not self.enabled:
            return WheelNoise(0.0, 0.0), np.zeros(3)
        return WheelNoise(*(self._q_root @ draw[:2]).tolist()), self._r_root @ draw[2:]


def sample_noise(rng: np.random.Generator, noise: NoiseModel, enabled: bool = True):
    """One ``(WheelNoise, measurement_noise)`` draw from ``rng``; advances ``rng``."""
    draw = rng.standard_normal(5)
    if not enabled:
        return WheelNoise(0.0, 0.0), np.zeros(3)
    return WheelNoise(*(_psd_sqrt(noise.Q) @ draw[:2]).tolist()), _psd_sqrt(noise.R) @ draw[2:]


def make_estimator(config: ScenarioConfig):
    if config.estimator == "none":
        return None
    kwargs = dict(
        wheel_radius=config.geom.wheel_radius,
        wheel_base=config.geom.wheel_base,
        sample_time=config.geom.sample_time,
        Q=config.noise.Q,
        R=config.noise.R,
        control_delay=config.delays.n,
        meas_delay=config.delays.m,
        initial_mean=config.belief0().mean,
        initial_cov=config.belief0().cov,
    )
    if config.estimator == "popf":
        return PastObservationFilter(epoch_estimate=config.epoch_estimate, **kwargs).fit()
    return NaiveDelayedEKF(**kwargs).fit()


def run_scenario(config: ScenarioConfig,
                 observer: Callable[[int, GaussianBelief], None] | None = None) -> list[TraceRow]:
    """Simulate ``config.steps`` steps and return one :class:`TraceRow` per step.

    Within a step: the plant integrates the command latched at the previous
    step, the sensor measures and transmits, the estimator fuses whatever
    arrived, the controller transmits a command for the pose it expects when
    that command lands, and the actuator latches the command due now.
    ``observer`` is called with ``(step, belief)`` after each filter update.
    """
    config.validate()
    geom, n, m = config.geom, config.delays.n, config.delays.m
    sampler = NoiseSampler(config.noise, config.seed, config.noise_enabled)
    control_link: DelayChannel[ControlCommand] = DelayChannel(n)
    sensor_link: DelayChannel[np.ndarray] = DelayChannel(m)
    controller = PolarStabilizer(
        gamma=config.gains.gamma, lam=config.gains.lam, h=config.gains.h, goal=config.goal,
        v_max=config.limits.v_max, omega_max=config.limits.omega_max,
        deadband=config.limits.deadband,
    ).fit()
    estimator = make_estimator(config)

    # Commands by the step at which the plant applies them, as known to the controller.
    scheduled: dict[int, ControlCommand] = {}
    pose = config.initial_state
    applied = ZERO_COMMAND
    wheel_noise = WheelNoise(0.0, 0.0)
    estimate = RobotState(*config.belief0().mean)
    trace = []

    for k in range(config.steps):
        if k > 0:
            pose = step_kinematics(pose, applied, wheel_noise, geom)
        wheel_noise, meas_noise = sampler.sample()
        sensor_link.push(measure(pose, meas_noise), k)
        delayed_z = sensor_link.pop(k)

        previous = scheduled.pop(k - 1, ZERO_COMMAND) if k > 0 else None
        if estimator is None:
            if delayed_z is not None:
                estimate = RobotState(*delayed_z)
            target = estimate
        else:
            belief = estimator.update(previous, delayed_z)
            if observer is not None:
                observer(k, belief)
            estimate = RobotState(*belief.mean)
            target = estimator.extrapolate([scheduled.get(t, ZERO_COMMAND) for t in range(k, k + n)])

        cmd = controller.command(target)
        control_link.push(cmd, k)
        scheduled[k + n] = cmd
        applied = control_link.pop(k) or ZERO_COMMAND

        err = polar_transform(pose, config.goal)
        trace.append(TraceRow(
            step=k, time=k * geom.sample_time,
            x=pose.x, y=pose.y, theta=pose.theta,
            est_x=float(estimate[0]), est_y=float(estimate[1]), est_theta=float(estimate[2]),
            pred_x=float(target[0]), pred_y=float(target[1]), pred_theta=float(target[2]),
            sent_v=cmd.v, sent_omega=cmd.omega, applied_v=applied.v, applied_omega=applied.omega,
            rho=err.rho, alpha=err.alpha, phi=err.phi,
            meas_x=None if delayed_z is None else float(delayed_z[0]),
            meas_y=None if delayed_z is None else float(delayed_z[1]),
            meas_theta=None if delayed_z is None else float(delayed_z[2]),
            err_x=float(estimate[0]) - pose.x, err_y=float(estimate[1]) - pose.y,
            err_theta=wrap_angle(float(estimate[2]) - pose.theta),
        ))
    return trace


def _run_one(args):
    config, seed = args
    return seed, summarize(run_scenario(config.with_overrides(seed=seed)), noise_enabled=config.noise_enabled)


@dataclass
class MonteCarloSummary:
    per_seed: dict
    median: dict
    q10: dict
    q90: dict
    converged_count: int

    @property
    def n_seeds(self):
        return len(self.per_seed)


def run_monte_carlo(config: ScenarioConfig, seeds, jobs: int = 1) -> MonteCarloSummary:
    """Run one scenario per seed and aggregate their metrics.

    The result depends only on ``config`` and ``seeds``; ``jobs > 1`` runs
    seeds in worker processes.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    work = [(config, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    per_seed = dict(results)

    def stat(q):
        out = {}
        for name in NUMERIC_FIELDS:
            values = [getattr(s, name) for s in per_seed.values()]
            values = [v for v in values if v is not None]
            out[name] = float(np.quantile(values, q)) if values else None
        return out

    return MonteCarloSummary(
        per_seed=per_seed, median=stat(0.5), q10=stat(0.1), q90=stat(0.9),
        converged_count=sum(s.converged for s in per_seed.values()),
    )

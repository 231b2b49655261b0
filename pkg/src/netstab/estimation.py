"""Kalman filtering with constant measurement delay and n-step extrapolation.

The functional core (``kf_*``, ``ekf_*``, ``compute_mstar``, ``popf_*``) works
on plain numpy arrays. The estimator classes at the bottom keep the per-step
history those functions need and expose a scikit-learn style surface.

Indexing convention: step ``k`` holds the belief about the pose at time ``k``.
The command "applied at step k" is the one the plant integrates from ``k`` to
``k + 1``. A measurement fused at step ``k`` was taken at step ``k - m``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError, NumericalError, WarmupError
from .model import (
    ZERO_COMMAND,
    ZERO_WHEEL_NOISE,
    RobotGeometry,
    RobotState,
    jacobian_A,
    jacobian_W,
    step_kinematics,
    wrap_angle,
)

EpochEstimate = Literal["lagged", "predicted"]


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float).reshape(-1)
        self.cov = np.array(self.cov, dtype=float)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean of length {d}")

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())


def check_psd(name, M, shape):
    M = np.array(M, dtype=float)
    if M.shape != shape:
        raise ConfigurationError(f"{name} must have shape {shape}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigurationError(f"{name} must be finite")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12):
        raise ConfigurationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-12:
        raise ConfigurationError(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class NoiseModel:
    """Wheel-speed noise covariance ``Q`` (2x2) and pose measurement covariance ``R`` (3x3)."""

    Q: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.018]))

    def __post_init__(self):
        object.__setattr__(self, "Q", check_psd("Q", self.Q, (2, 2)))
        object.__setattr__(self, "R", check_psd("R", self.R, (3, 3)))


@dataclass(frozen=True)
class DelayConfig:
    n: int = 0
    m: int = 0

    def __post_init__(self):
        for name in ("n", "m"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
                raise ConfigurationError(f"delay {name} must be a nonnegative integer, got {value!r}")


@dataclass
class HistoryRecord:
    """What the filter knew at one step.

    ``A`` and ``Q_eff`` (the process noise added on the way) describe the
    transition to ``step_index + 1`` and are filled in by the following
    prediction. ``K`` is zero when no correction ran. ``x_post``/``P_post``
    is the belief after that step's correction. ``x_epoch``/``P_epoch`` is
    the belief about this step's pose given every measurement taken before
    it; it becomes known ``m - 1`` steps later.
    """

    step_index: int
    H: np.ndarray
    K: np.ndarray
    x_prior: np.ndarray
    P_prior: np.ndarray
    x_post: np.ndarray
    P_post: np.ndarray
    A: np.ndarray | None = None
    Q_eff: np.ndarray | None = None
    x_epoch: np.ndarray | None = None
    P_epoch: np.ndarray | None = None


class History:
    """Ring buffer of :class:`HistoryRecord` addressed by step index."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._records = deque(maxlen=capacity)

    def append(self, record: HistoryRecord):
        if self._records and record.step_index != self._records[-1].step_index + 1:
            raise ValueError(
                f"step {record.step_index} does not follow {self._records[-1].step_index}"
            )
        self._records.append(record)

    def __contains__(self, step) -> bool:
        if not self._records:
            return False
        first = self._records[0].step_index
        return first <= step < first + len(self._records)

    def __getitem__(self, step) -> HistoryRecord:
        if step not in self:
            raise WarmupError(f"no history record for step {step}")
        return self._records[step - self._records[0].step_index]

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)


def symmetrize(P):
    return 0.5 * (P + P.T)


def kalman_gain(P, H, R):
    """``P H^T (H P H^T + R)^-1`` via a Cholesky solve of the innovation covariance."""
    S = symmetrize(H @ P @ H.T + R)
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError:
        raise NumericalError("innovation covariance is not positive definite",
                             condition=np.linalg.cond(S)) from None
    return scipy.linalg.cho_solve(factor, H @ P.T).T


def _residual(z, zhat, angle_index):
    r = np.asarray(z, dtype=float) - zhat
    if angle_index is not None:
        r[angle_index] = wrap_angle(r[angle_index])
    return r


def _wrap_mean(mean, angle_index):
    if angle_index is not None:
        mean[angle_index] = wrap_angle(mean[angle_index])
    return mean


def kf_predict(belief: GaussianBelief, A, B=None, u=None, Q=None) -> GaussianBelief:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = belief.mean.shape[0]
    if A.shape != (d, d):
        raise ValueError(f"A has shape {A.shape}, expected {(d, d)}")
    mean = A @ belief.mean
    if B is not None:
        B = np.asarray(B, dtype=float).reshape(d, -1)
        mean = mean + B @ np.atleast_1d(np.asarray(u, dtype=float))
    cov = A @ belief.cov @ A.T
    if Q is not None:
        cov = cov + np.atleast_2d(np.asarray(Q, dtype=float))
    return GaussianBelief(mean, symmetrize(cov))


def kf_correct(belief: GaussianBelief, H, z, R, angle_index=None) -> GaussianBelief:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = belief.cov
    if H.shape[1] != P.shape[0] or R.shape != (H.shape[0], H.shape[0]):
        raise ValueError(f"incompatible shapes H={H.shape}, R={R.shape}, P={P.shape}")
    K = kalman_gain(P, H, R)
    innovation = _residual(np.atleast_1d(z), H @ belief.mean, angle_index)
    mean = _wrap_mean(belief.mean + K @ innovation, angle_index)
    cov = P - K @ H @ P
    return GaussianBelief(mean, symmetrize(cov))


def ekf_predict(belief: GaussianBelief, applied_control, geom: RobotGeometry, Q):
    """Propagate through the noiseless kinematics.

    Returns ``(belief, A, Q_eff)`` where ``Q_eff = W Q W^T`` is the pose
    covariance contributed by wheel noise.
    """
    A = jacobian_A(belief.mean, applied_control, geom)
    W = jacobian_W(belief.mean, geom)
    Q_eff = symmetrize(W @ Q @ W.T)
    mean = np.array(step_kinematics(belief.mean, applied_control, ZERO_WHEEL_NOISE, geom))
    cov = A @ belief.cov @ A.T + Q_eff
    return GaussianBelief(mean, symmetrize(cov)), A, Q_eff


def ekf_correct(belief: GaussianBelief, z, R) -> GaussianBelief:
    """Pose update with identity measurement model and wrapped heading innovation."""
    return kf_correct(belief, np.eye(3), z, R, angle_index=2)


def compute_mstar(history, k: int, m: int, with_gains: bool = True, dim=None):
    """Error transfer ``A_{k-1}(I-K_{k-1}H_{k-1}) ... A_{k-m}(I-K_{k-m}H_{k-m})``.

    With ``with_gains=False`` every factor is the bare ``A``.
    """
    if m == 0:
        return np.eye(dim if dim is not None else history[k].P_prior.shape[0])
    out = None
    for i in range(1, m + 1):
        rec = history[k - i]
        if rec.A is None:
            raise WarmupError(f"transition out of step {k - i} has not been recorded")
        factor = rec.A @ (np.eye(rec.A.shape[0]) - rec.K @ rec.H) if with_gains else rec.A
        out = factor if out is None else out @ factor
    return out


def _epoch_reference(history, k, m, epoch, d):
    """Belief at ``s = k - m`` and error transfer used by :func:`popf_correct`."""
    rec_s = history[k - m]
    if m > 0 and epoch == "lagged":
        if rec_s.x_epoch is None:
            raise WarmupError(f"epoch belief for step {k - m} is not available")
        return rec_s.x_epoch, rec_s.P_epoch, compute_mstar(history, k, m, with_gains=False)
    return rec_s.x_prior, rec_s.P_prior, compute_mstar(history, k, m, dim=d)


def popf_correct(belief: GaussianBelief, delayed_z, history, k: int, m: int, R, H=None,
                 angle_index=None, epoch: EpochEstimate = "lagged"):
    """Fuse a measurement of the state at ``s = k - m`` into the belief at ``k``.

    Returns ``(belief, K)``. Before any measurement can have arrived, or when
    ``delayed_z`` is ``None``, the belief is returned unchanged with ``K = 0``.

    ``epoch`` selects the reference belief at ``s``. ``"lagged"`` uses the
    belief about ``x_s`` given every measurement taken before ``s`` (kept up
    to date by :func:`advance_epoch`) with the bare transition product as
    error transfer; this is exact for linear systems whether or not other
    measurements were fused in between. ``"predicted"`` uses the filter's
    own prior at ``s`` with the gain-weighted product, which is exact only
    when nothing is fused between ``s`` and ``k``.
    """
    d = belief.mean.shape[0]
    R = np.atleast_2d(np.asarray(R, dtype=float))
    H = np.eye(d) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    if delayed_z is None or k < m:
        return belief, np.zeros((d, H.shape[0]))
    x_s, P_s, M_star = _epoch_reference(history, k, m, epoch, d)
    K = M_star @ kalman_gain(P_s, H, R)
    innovation = _residual(np.atleast_1d(delayed_z), H @ x_s, angle_index)
    mean = _wrap_mean(belief.mean + K @ innovation, angle_index)
    cov = belief.cov - K @ H @ P_s @ M_star.T
    return GaussianBelief(mean, symmetrize(cov)), K


def advance_epoch(history, k: int, m: int, delayed_z, R, H=None, angle_index=None):
    """Move the epoch belief from ``s = k - m`` to ``s + 1`` after step ``k``.

    The measurement of ``x_s`` (if any) is fused into the epoch belief, which
    is then propagated with the transition the filter recorded out of ``s``.
    The mean follows the filter's own trajectory to first order, so the
    linear case is exact. No-op when ``m == 0`` or ``k < m``.
    """
    if m == 0 or k < m:
        return
    rec_s, rec_next = history[k - m], history[k - m + 1]
    belief = GaussianBelief(rec_s.x_epoch, rec_s.P_epoch)
    if delayed_z is not None:
        d = belief.mean.shape[0]
        H = np.eye(d) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
        belief = kf_correct(belief, H, delayed_z, R, angle_index)
    offset = belief.mean - rec_s.x_post
    if angle_index is not None:
        offset[angle_index] = wrap_angle(offset[angle_index])
    rec_next.x_epoch = _wrap_mean(rec_next.x_prior + rec_s.A @ offset, angle_index)
    rec_next.P_epoch = symmetrize(rec_s.A @ belief.cov @ rec_s.A.T + rec_s.Q_eff)


def popf_extrapolate(belief: GaussianBelief, control_schedule, n: int, geom: RobotGeometry) -> RobotState:
    """Roll the mean forward through the ``n`` commands already in flight."""
    if len(control_schedule) < n:
        raise WarmupError(f"need {n} scheduled commands, got {len(control_schedule)}")
    pose = RobotState(*belief.mean)
    for cmd in control_schedule[:n]:
        pose = step_kinematics(pose, cmd, ZERO_WHEEL_NOISE, geom)
    return pose


def ekf_naive_delayed_step(belief: GaussianBelief, applied_control, delayed_z, geom: RobotGeometry,
                           noise: NoiseModel) -> GaussianBelief:
    """Baseline that fuses a delayed pose as if it were current."""
    belief, _, _ = ekf_predict(belief, applied_control, geom, noise.Q)
    if delayed_z is None:
        return belief
    return ekf_correct(belief, delayed_z, noise.R)


# ---------------------------------------------------------------------------
# Estimator classes


def _split_rows(X, n_meas, n_ctrl):
    X = check_array(X, dtype=float, ensure_all_finite="allow-nan")
    if X.shape[1] != n_meas + n_ctrl:
        raise ValueError(f"expected {n_meas + n_ctrl} columns, got {X.shape[1]}")
    Z, U = X[:, :n_meas], X[:, n_meas:]
    if not np.all(np.isfinite(U)):
        raise ValueError("control columns must be finite")
    missing = np.isnan(Z)
    if np.any(missing.any(axis=1) & ~missing.all(axis=1)):
        raise ValueError("a measurement row must be either all finite or all NaN")
    present = ~missing.any(axis=1)
    return Z, U, present


class _BaseStepFilter(BaseEstimator, TransformerMixin):
    """Step-wise filter with a batch ``transform``.

    Batch input has one row per step: the delayed measurement that arrived at
    that step (all NaN when none did) followed by the command applied at that
    step. ``transform`` returns the corrected current-state means.
    """

    _n_meas = 3
    _n_ctrl = 2

    def reset(self):
        check_is_fitted(self)
        self.belief_ = GaussianBelief(self._initial_mean(), self._initial_cov())
        self.step_ = -1
        return self

    def transform(self, X):
        check_is_fitted(self)
        Z, U, present = _split_rows(X, self._n_meas, self._n_ctrl)
        self.reset()
        out = np.empty((len(Z), self.belief_.mean.shape[0]))
        for k in range(len(Z)):
            prev = U[k - 1] if k > 0 else None
            self.update(prev, Z[k] if present[k] else None)
            out[k] = self.belief_.mean
        return out


class _POPFMixin:
    """History bookkeeping shared by the linear and the robot PO-PF."""

    def _start_history(self, H):
        self.history_ = History(self.meas_delay + 2)
        self._H = H

    def _push_prior(self, A_prev=None, Q_prev=None):
        if self.step_ >= 0:
            rec = self.history_[self.step_]
            rec.A, rec.Q_eff = A_prev, Q_prev
        self.step_ += 1
        b = self.belief_
        d = b.mean.shape[0]
        self.history_.append(HistoryRecord(
            step_index=self.step_, H=self._H, K=np.zeros((d, self._H.shape[0])),
            x_prior=b.mean.copy(), P_prior=b.cov.copy(),
            x_post=b.mean.copy(), P_post=b.cov.copy(),
        ))
        if self.step_ == 0:
            self.history_[0].x_epoch = b.mean.copy()
            self.history_[0].P_epoch = b.cov.copy()

    def _fuse(self, z, R, angle_index=None):
        belief, K = popf_correct(self.belief_, z, self.history_, self.step_, self.meas_delay, R,
                                 H=self._H, angle_index=angle_index, epoch=self.epoch_estimate)
        rec = self.history_[self.step_]
        rec.K = K
        rec.x_post = belief.mean.copy()
        rec.P_post = belief.cov.copy()
        self.belief_ = belief
        self.last_gain_ = K
        if self.epoch_estimate == "lagged":
            advance_epoch(self.history_, self.step_, self.meas_delay, z, R, self._H, angle_index)


def _check_epoch(epoch):
    if epoch not in ("lagged", "predicted"):
        raise ConfigurationError(f"epoch_estimate must be 'lagged' or 'predicted', got {epoch!r}")


class LinearPastObservationFilter(_POPFMixin, _BaseStepFilter):
    """PO-PF for ``x_k = A x_{k-1} + B u_{k-1} + w``, ``z_k = H x_{k-m} + v``."""

    def __init__(self, A, B, Q, H, R, meas_delay=0, initial_mean=None, initial_cov=None,
                 epoch_estimate: EpochEstimate = "lagged"):
        self.A = A
        self.B = B
        self.Q = Q
        self.H = H
        self.R = R
        self.meas_delay = meas_delay
        self.initial_mean = initial_mean
        self.initial_cov = initial_cov
        self.epoch_estimate = epoch_estimate

    def fit(self, X=None, y=None):
        self.A_ = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = self.A_.shape[0]
        self.B_ = np.asarray(self.B, dtype=float).reshape(d, -1)
        self.Q_ = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.H_ = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R_ = np.atleast_2d(np.asarray(self.R, dtype=float))
        DelayConfig(0, self.meas_delay)
        _check_epoch(self.epoch_estimate)
        self._n_meas = self.H_.shape[0]
        self._n_ctrl = self.B_.shape[1]
        self.n_features_in_ = self._n_meas + self._n_ctrl
        self.reset()
        return self

    def _initial_mean(self):
        d = self.A_.shape[0]
        return np.zeros(d) if self.initial_mean is None else self.initial_mean

    def _initial_cov(self):
        d = self.A_.shape[0]
        return np.eye(d) if self.initial_cov is None else self.initial_cov

    def reset(self):
        super().reset()
        self._start_history(self.H_)
        return self

    def update(self, u_prev, z):
        """Advance one step: predict with ``u_prev`` (skipped at step 0), then fuse ``z``."""
        if self.step_ >= 0:
            self.belief_ = kf_predict(self.belief_, self.A_, self.B_, u_prev, self.Q_)
        self._push_prior(self.A_, self.Q_)
        self._fuse(z, self.R_)
        return self.belief_


class _RobotFilter(_BaseStepFilter):
    def __init__(self, wheel_radius=0.05, wheel_base=0.6, sample_time=0.01, Q=None, R=None,
                 control_delay=0, meas_delay=0, initial_mean=(0.0, 0.0, 0.0), initial_cov=None):
        self.wheel_radius = wheel_radius
        self.wheel_base = wheel_base
        self.sample_time = sample_time
        self.Q = Q
        self.R = R
        self.control_delay = control_delay
        self.meas_delay = meas_delay
        self.initial_mean = initial_mean
        self.initial_cov = initial_cov

    def fit(self, X=None, y=None):
        self.geom_ = RobotGeometry(self.wheel_radius, self.wheel_base, self.sample_time)
        defaults = NoiseModel()
        self.noise_ = NoiseModel(
            defaults.Q if self.Q is None else self.Q,
            defaults.R if self.R is None else self.R,
        )
        self.delays_ = DelayConfig(self.control_delay, self.meas_delay)
        mean = np.asarray(self.initial_mean, dtype=float)
        if mean.shape != (3,) or not np.all(np.isfinite(mean)):
            raise ConfigurationError("initial_mean must be a finite 3-vector")
        if self.initial_cov is not None:
            check_psd("initial_cov", self.initial_cov, (3, 3))
        self.n_features_in_ = 5
        self.reset()
        return self

    def _initial_mean(self):
        mean = np.array(self.initial_mean, dtype=float)
        mean[2] = wrap_angle(mean[2])
        return mean

    def _initial_cov(self):
        # Smaller than R so the first corrections do not jump.
        return 0.5 * self.noise_.R if self.initial_cov is None else np.asarray(self.initial_cov, float)

    def _predict_step(self, applied_prev):
        cmd = ZERO_COMMAND if applied_prev is None else applied_prev
        self.belief_, A, Q_eff = ekf_predict(self.belief_, cmd, self.geom_, self.noise_.Q)
        return A, Q_eff

    def predict(self, X):
        """Poses the controller should act on: each step's estimate extrapolated
        through the commands applied during the next ``control_delay`` steps."""
        check_is_fitted(self)
        Z, U, present = _split_rows(X, 3, 2)
        n = self.control_delay
        self.reset()
        out = np.empty((len(Z), 3))
        padded = np.vstack([U, np.zeros((n, 2))])
        for k in range(len(Z)):
            self.update(U[k - 1] if k > 0 else None, Z[k] if present[k] else None)
            out[k] = self.extrapolate([tuple(c) for c in padded[k:k + n]])
        return out


class NaiveDelayedEKF(_RobotFilter):
    """EKF that treats every arriving pose as a measurement of the current step."""

    def update(self, applied_prev, delayed_z):
        if self.step_ >= 0:
            self._predict_step(applied_prev)
        self.step_ += 1
        if delayed_z is not None:
            self.belief_ = ekf_correct(self.belief_, delayed_z, self.noise_.R)
        return self.belief_

    def extrapolate(self, control_schedule=()):
        """No look-ahead: the current estimate is handed to the controller as is."""
        check_is_fitted(self)
        return RobotState(*self.belief_.mean)


class PastObservationFilter(_POPFMixin, _RobotFilter):
    """Delay-compensating pose filter for the networked differential-drive robot.

    Each step predicts with the command the plant applied, fuses the pose
    measured ``meas_delay`` steps ago through the cross-covariance-corrected
    gain, and can extrapolate ``control_delay`` steps ahead through the
    commands already in flight.

    Parameters
    ----------
    wheel_radius, wheel_base, sample_time : float
        Robot geometry in meters and seconds.
    Q : array of shape (2, 2), optional
        Wheel-speed noise covariance. Defaults to ``diag(0.01, 0.01)``.
    R : array of shape (3, 3), optional
        Pose measurement covariance. Defaults to ``diag(0.01, 0.01, 0.018)``.
    control_delay, meas_delay : int
        Constant delays in steps.
    initial_mean : sequence of 3 floats
    initial_cov : array of shape (3, 3), optional
        Defaults to ``0.5 * R``.
    epoch_estimate : {"lagged", "predicted"}
        Reference belief at the measurement epoch, see :func:`popf_correct`.
    """

    def __init__(self, wheel_radius=0.05, wheel_base=0.6, sample_time=0.01, Q=None, R=None,
                 control_delay=0, meas_delay=0, initial_mean=(0.0, 0.0, 0.0), initial_cov=None,
                 epoch_estimate: EpochEstimate = "lagged"):
        super().__init__(wheel_radius, wheel_base, sample_time, Q, R, control_delay, meas_delay,
                         initial_mean, initial_cov)
        self.epoch_estimate = epoch_estimate

    def fit(self, X=None, y=None):
        _check_epoch(self.epoch_estimate)
        return super().fit(X, y)

    def reset(self):
        super().reset()
        self._start_history(np.eye(3))
        return self

    def update(self, applied_prev, delayed_z):
        """One filter step: predict (skipped at step 0), then fuse ``delayed_z`` if given."""
        transition = self._predict_step(applied_prev) if self.step_ >= 0 else (None, None)
        self._push_prior(*transition)
        self._fuse(delayed_z, self.noise_.R, angle_index=2)
        return self.belief_

    def extrapolate(self, control_schedule):
        check_is_fitted(self)
        return popf_extrapolate(self.belief_, control_schedule, self.control_delay, self.geom_)


def covariance_defects(cov) -> tuple[float, float]:
    """``(max |P - P^T|, min eigenvalue)`` for hygiene checks."""
    cov = np.asarray(cov, dtype=float)
    return float(np.max(np.abs(cov - cov.T))), float(np.linalg.eigvalsh(symmetrize(cov)).min())


__all__ = [
    "GaussianBelief", "NoiseModel", "DelayConfig", "HistoryRecord", "History",
    "kalman_gain", "kf_predict", "kf_correct", "ekf_predict", "ekf_correct",
    "compute_mstar", "popf_correct", "advance_epoch", "popf_extrapolate", "ekf_naive_delayed_step",
    "LinearPastObservationFilter", "PastObservationFilter", "NaiveDelayedEKF",
    "covariance_defects", "symmetrize",
]


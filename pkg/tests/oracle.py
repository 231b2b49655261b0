"""Brute-force references used only by the test-suite.

``augmented_kf_step`` handles a measurement delayed by ``m`` steps exactly by
stacking ``x_k ... x_{k-m}`` into one state; the delayed measurement is then
an ordinary measurement of the oldest block. ``finite_diff_jacobian`` is a
plain central-difference Jacobian.
"""
from __future__ import annotations

import numpy as np


def augment(mean, cov, m):
    """Stack ``m + 1`` identical copies of an initial belief (fully correlated)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    return np.tile(mean, m + 1), np.kron(np.ones((m + 1, m + 1)), cov)


def augmented_kf_step(aug_mean, aug_cov, A, B, u, Q, H, z, R, m, predict=True):
    """One predict (optional) and correct on the stacked system.

    Returns the new ``(aug_mean, aug_cov)``; the first ``d`` entries are the
    current-state marginal.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    D = d * (m + 1)
    if aug_mean.shape != (D,) or aug_cov.shape != (D, D):
        raise ValueError("augmented belief has the wrong dimension")
    if predict:
        A_aug = np.zeros((D, D))
        A_aug[:d, :d] = A
        A_aug[d:, :-d] = np.eye(D - d)
        B_aug = np.zeros((D, np.size(u)))
        B_aug[:d] = np.asarray(B, dtype=float).reshape(d, -1)
        Q_aug = np.zeros((D, D))
        Q_aug[:d, :d] = np.atleast_2d(Q)
        aug_mean = A_aug @ aug_mean + B_aug @ np.atleast_1d(u)
        aug_cov = A_aug @ aug_cov @ A_aug.T + Q_aug
    if z is not None:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        H_aug = np.zeros((H.shape[0], D))
        H_aug[:, -d:] = H
        R = np.atleast_2d(R)
        S = H_aug @ aug_cov @ H_aug.T + R
        K = np.linalg.solve(S, H_aug @ aug_cov).T
        aug_mean = aug_mean + K @ (np.atleast_1d(z) - H_aug @ aug_mean)
        aug_cov = (np.eye(D) - K @ H_aug) @ aug_cov
        aug_cov = 0.5 * (aug_cov + aug_cov.T)
    return aug_mean, aug_cov


def finite_diff_jacobian(fn, point, epsilon=1e-6):
    """Central differences of ``fn`` at ``point``, one column per input."""
    point = np.asarray(point, dtype=float)
    f0 = np.asarray(fn(point), dtype=float)
    J = np.empty((f0.size, point.size))
    for j in range(point.size):
        step = np.zeros_like(point)
        step[j] = epsilon
        J[:, j] = (np.asarray(fn(point + step)) - np.asarray(fn(point - step))) / (2.0 * epsilon)
    return J

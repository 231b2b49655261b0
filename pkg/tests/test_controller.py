import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from netstab.controller import (
    ActuatorLimits,
    ControllerGains,
    PolarStabilizer,
    sinc2,
    stabilize,
)
from netstab.errors import ConfigurationError
from netstab.model import PolarError, RobotGeometry, ZERO_WHEEL_NOISE, step_kinematics

GAINS = ControllerGains()


def test_examples():
    assert stabilize(PolarError(1, 0, 0), GAINS) == (3.0, 0.0)
    assert stabilize(PolarError(0, 0, 0), GAINS) == (0.0, 0.0)
    v, omega = stabilize(PolarError(math.sqrt(18), math.pi / 4, math.pi / 4), GAINS)
    assert v == pytest.approx(9.0)
    assert omega == pytest.approx(3 * math.pi / 2 + 3, abs=1e-6)
    assert omega == pytest.approx(7.712389, abs=1e-6)


@pytest.mark.parametrize("gains", [(0, 6, 1), (3, -1, 1), (3, 6, 0), (3, 6, float("nan"))])
def test_gains_must_be_positive(gains):
    with pytest.raises(ConfigurationError):
        ControllerGains(*gains)


def test_series_is_continuous():
    for a in (1e-5, -1e-5):
        assert abs(sinc2(a) - 1.0) < 1e-8
        exact = math.cos(a) * math.sin(a) / a
        assert abs(sinc2(a) - exact) < 1e-15
    assert sinc2(0.0) == 1.0


@given(st.floats(-3, 3), st.floats(0.1, 5))
def test_omega_reduces_to_lambda_alpha(alpha, h):
    gains = ControllerGains(3.0, 6.0, h)
    _, omega = stabilize(PolarError(1.0, alpha, -alpha / h), gains)
    assert omega == pytest.approx(6.0 * alpha, abs=1e-12)


@given(st.floats(0.01, 10), st.floats(0.01, 100), st.floats(-3, 3), st.floats(-3, 3))
def test_scaling_rho(rho, c, alpha, phi):
    v1, w1 = stabilize(PolarError(rho, alpha, phi), GAINS)
    v2, w2 = stabilize(PolarError(c * rho, alpha, phi), GAINS)
    assert v2 == pytest.approx(c * v1, rel=1e-12, abs=1e-12)
    assert w2 == w1


def test_limits_and_deadband():
    limits = ActuatorLimits(v_max=1.0, omega_max=2.0, deadband=0.1)
    assert stabilize(PolarError(5, 1, 1), GAINS, limits) == (1.0, 2.0)
    assert stabilize(PolarError(0.05, 1, 1), GAINS, limits) == (0.0, 0.0)
    with pytest.raises(ConfigurationError):
        ActuatorLimits(deadband=-1)


def test_noise_free_rho_is_non_increasing():
    geom = RobotGeometry()
    reg = PolarStabilizer().fit()
    pose = (-3.0, -3.0, 0.0)
    rhos = []
    for _ in range(3000):
        rhos.append(reg.polar_error(pose).rho)
        pose = step_kinematics(pose, reg.command(pose), ZERO_WHEEL_NOISE, geom)
    assert np.all(np.diff(rhos) <= 1e-12)
    assert rhos[-1] < 1e-3


def test_estimator_api():
    reg = PolarStabilizer(gamma=2.0)
    assert reg.get_params()["gamma"] == 2.0
    with pytest.raises(NotFittedError):
        reg.predict([[0, 0, 0]])
    reg.fit()
    out = reg.predict([[-3, -3, 0], [0, 0, 0]])
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out[1], [0, 0])
    with pytest.raises(ValueError):
        reg.predict([[0, 0]])
    with pytest.raises(ConfigurationError):
        PolarStabilizer(goal=(0, 0)).fit()

import math

import numpy as np
import pytest

from netstab.errors import ConfigurationError
from netstab.estimation import DelayConfig, GaussianBelief, NoiseModel
from netstab.metrics import summarize
from netstab.model import RobotState
from netstab.sim import (
    TRACE_FIELDS,
    NoiseSampler,
    ScenarioConfig,
    run_monte_carlo,
    run_scenario,
    sample_noise,
)


def short(**kw):
    kw.setdefault("steps", 200)
    return ScenarioConfig(**kw)


def test_invalid_configs_rejected_before_stepping():
    with pytest.raises(ConfigurationError):
        ScenarioConfig(steps=0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(estimator="kalman")
    with pytest.raises(ConfigurationError):
        ScenarioConfig(seed=-1)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(initial_state=(0, float("nan"), 0))
    with pytest.raises(ConfigurationError):
        ScenarioConfig(initial_belief=GaussianBelief(np.zeros(2), np.eye(2)))
    config = ScenarioConfig()
    config.steps = -5
    with pytest.raises(ConfigurationError):
        run_scenario(config)


def test_default_initial_belief_follows_initial_state():
    config = ScenarioConfig(initial_state=(1.0, 2.0, 0.5))
    b = config.belief0()
    np.testing.assert_array_equal(b.mean, [1.0, 2.0, 0.5])
    np.testing.assert_array_equal(b.cov, 0.5 * NoiseModel().R)


def test_trace_shape_and_wrapping():
    trace = run_scenario(short(delays=DelayConfig(3, 5)))
    assert len(trace) == 200
    assert [r.step for r in trace] == list(range(200))
    assert tuple(vars(trace[0])) == TRACE_FIELDS
    for r in trace:
        for name in ("theta", "est_theta", "pred_theta", "alpha", "phi", "err_theta"):
            assert -math.pi < getattr(r, name) <= math.pi
    assert trace[4].meas_x is None and trace[5].meas_x is not None


@pytest.mark.parametrize("estimator", ["none", "ekf_naive", "popf"])
def test_determinism(estimator):
    config = short(estimator=estimator, delays=DelayConfig(4, 6), seed=42)
    assert run_scenario(config) == run_scenario(config)
    assert run_scenario(config) != run_scenario(config.with_overrides(seed=43))


def test_causality_bookkeeping():
    n, m = 4, 6
    trace = run_scenario(short(delays=DelayConfig(n, m), noise_enabled=False))
    for r in trace:
        if r.step < n:
            assert (r.applied_v, r.applied_omega) == (0.0, 0.0)
        else:
            sent = trace[r.step - n]
            assert (r.applied_v, r.applied_omega) == (sent.sent_v, sent.sent_omega)
        if r.step >= m:
            taken = trace[r.step - m]
            assert (r.meas_x, r.meas_y, r.meas_theta) == (taken.x, taken.y, taken.theta)


def test_observer_sees_every_step():
    seen = []
    run_scenario(short(steps=30), observer=lambda k, b: seen.append(k))
    assert seen == list(range(30))


def test_none_regime_uses_delayed_measurement():
    trace = run_scenario(short(estimator="none", delays=DelayConfig(0, 3), noise_enabled=False))
    for r in trace[3:]:
        assert (r.est_x, r.est_y, r.est_theta) == (r.meas_x, r.meas_y, r.meas_theta)
    first = trace[0]
    assert (first.est_x, first.est_y, first.est_theta) == (-3.0, -3.0, 0.0)


def test_regime_ordering_without_noise():
    base = ScenarioConfig(delays=DelayConfig(10, 20), noise_enabled=False)
    for seed in range(3):
        popf = summarize(run_scenario(base.with_overrides(seed=seed)), noise_enabled=False)
        none = summarize(run_scenario(base.with_overrides(seed=seed, estimator="none")),
                         noise_enabled=False)
        assert popf.final_abs_theta < none.final_abs_theta


def test_noise_sampler_statistics():
    noise = NoiseModel(Q=[[0.02, 0.005], [0.005, 0.01]])
    sampler = NoiseSampler(noise, seed=1)
    draws = np.array([sampler.sample()[0] for _ in range(100_000)])
    np.testing.assert_allclose(np.cov(draws.T), noise.Q, rtol=0.05, atol=0.05 * 0.01)


def test_noise_disabled_and_streams():
    wheel, meas = NoiseSampler(NoiseModel(), 0, enabled=False).sample()
    assert tuple(wheel) == (0.0, 0.0) and not meas.any()
    a = NoiseSampler(NoiseModel(), 0).sample()
    b = NoiseSampler(NoiseModel(), 1).sample()
    assert a[0] != b[0]
    rng = np.random.default_rng(0)
    wheel, meas = sample_noise(rng, NoiseModel())
    assert meas.shape == (3,)


def test_disabling_noise_keeps_stream_alignment():
    on = NoiseSampler(NoiseModel(), 7)
    off = NoiseSampler(NoiseModel(), 7, enabled=False)
    for _ in range(3):
        off.sample()
        on.sample()
    assert on.rng.bit_generator.state == off.rng.bit_generator.state


def test_monte_carlo():
    config = short(delays=DelayConfig(2, 3))
    single = run_monte_carlo(config, [5])
    assert single.n_seeds == 1
    assert single.per_seed[5] == summarize(run_scenario(config.with_overrides(seed=5)))
    assert single.median["rmse_x"] == single.per_seed[5].rmse_x
    twice = run_monte_carlo(config, [5, 6])
    again = run_monte_carlo(config, [5, 6], jobs=2)
    assert twice.per_seed == again.per_seed
    with pytest.raises(ConfigurationError):
        run_monte_carlo(config, [])


def test_fig7_start_converges_without_noise():
    config = ScenarioConfig(initial_state=RobotState(-1.5, -2.0, math.pi / 2), delays=DelayConfig(15, 25),
                            noise_enabled=False)
    assert summarize(run_scenario(config), noise_enabled=False).converged

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopse.simworld import SimTrajectory, WorldConfig, generate_trajectory, measure, step_dynamics


def test_step_examples():
    np.testing.assert_allclose(step_dynamics([0, 0, 0], [1, 0], timestep=0.1), [0.1, 0, 0])
    np.testing.assert_allclose(step_dynamics([0, 0, np.pi / 2], [1, 0], timestep=0.1), [0, 0.1, np.pi / 2], atol=1e-15)
    np.testing.assert_allclose(step_dynamics([1, 1, 0.5], [0, 2], timestep=0.1), [1, 1, 0.7])
    # heading wraps past pi
    assert np.isclose(step_dynamics([0, 0, 3.1], [0, 1], timestep=0.1)[2], 3.2 - 2 * np.pi)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_step_is_affine_in_control(x, y, th, u, om):
    s = np.array([x, y, th])
    f0 = step_dynamics(s, [0, 0])
    f1 = step_dynamics(s, [u, 0])
    f2 = step_dynamics(s, [2 * u, 0])
    np.testing.assert_allclose(f2[:2] - f0[:2], 2 * (f1[:2] - f0[:2]), atol=1e-12)
    np.testing.assert_allclose(step_dynamics(s, [0, om])[:2], s[:2], atol=0)


def test_measure_examples():
    cfg = WorldConfig(range_bias=0.0)
    r = measure([5.0, 5.0, 0.0], cfg)
    np.testing.assert_allclose(r, [np.sqrt(50)] * 4 + [0.0])
    biased = measure([5.0, 5.0, 0.0], WorldConfig())
    np.testing.assert_allclose(biased - r, [0, 0, 0, 0.2, 0.2])


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError, match="index"):
        WorldConfig(biased_anchor_indices=(7,))
    with pytest.raises(ValueError):
        WorldConfig(range_noise_std=-1.0)
    cfg = WorldConfig(range_bias=0.1, multipath=True)
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg


def test_trajectory_shapes_and_determinism():
    a = generate_trajectory(WorldConfig(), 200, 3)
    b = generate_trajectory(WorldConfig(), 200, 3)
    assert a.states.shape == (201, 3) and a.inputs.shape == (200, 2) and a.measurements.shape == (201, 5)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.measurements, b.measurements)
    assert not np.array_equal(generate_trajectory(WorldConfig(), 200, 4).states, a.states)
    with pytest.raises(ValueError):
        generate_trajectory(WorldConfig(), 0, 1)


def test_trajectory_stays_near_workspace():
    cfg = WorldConfig()
    for seed in range(5):
        s = generate_trajectory(cfg, 1000, seed).states
        assert s[:, 0].min() > -0.5 and s[:, 0].max() < 10.5
        assert s[:, 1].min() > -0.5 and s[:, 1].max() < 10.5
        assert np.all(np.abs(s[:, 2]) <= np.pi)


def test_inputs_respect_limits():
    cfg = WorldConfig()
    nu = generate_trajectory(cfg, 500, 1).inputs
    assert np.all(nu[:, 0] >= 0) and np.all(nu[:, 0] <= cfg.max_speed)
    assert np.all(np.abs(nu[:, 1]) <= cfg.max_turn_rate)
    assert nu[:, 0].max() > 0.2


def test_noiseless_replay():
    cfg = WorldConfig(odom_noise_std=(0, 0, 0), range_noise_std=0.0)
    t = generate_trajectory(cfg, 100, 2)
    s = t.states[0]
    for k in range(100):
        s = step_dynamics(s, t.inputs[k], timestep=cfg.timestep)
        np.testing.assert_allclose(s, t.states[k + 1], atol=1e-12)
        np.testing.assert_allclose(measure(s, cfg), t.measurements[k + 1], atol=1e-12)


def test_residual_statistics():
    cfg = WorldConfig()
    t = generate_trajectory(cfg, 5000, 9)
    ideal = np.array([measure(s, WorldConfig(range_bias=0.0)) for s in t.states])
    res = t.measurements - ideal
    np.testing.assert_allclose(res.mean(axis=0), [0, 0, 0, 0.2, 0.2], atol=0.005)
    np.testing.assert_allclose(res.std(axis=0), 0.05, rtol=0.05)
    pred = np.array([step_dynamics(t.states[k], t.inputs[k]) for k in range(5000)])
    d = t.states[1:] - pred
    d[:, 2] = (d[:, 2] + np.pi) % (2 * np.pi) - np.pi
    np.testing.assert_allclose(d.std(axis=0), cfg.odom_noise_std, rtol=0.05)


def test_multipath_bias_is_positive():
    t = generate_trajectory(WorldConfig(multipath=True), 3000, 1)
    ideal = np.array([measure(s, WorldConfig(range_bias=0.0)) for s in t.states])
    res = t.measurements - ideal
    np.testing.assert_allclose(res[:, 3:].mean(axis=0), 0.30, rtol=0.1)
    np.testing.assert_allclose(res[:, :3].mean(axis=0), 0.0, atol=0.005)


def test_csv_roundtrip(tmp_path):
    t = generate_trajectory(WorldConfig(), 20, 5)
    t.to_csv(tmp_path / "t.csv")
    back = SimTrajectory.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.states, t.states)
    np.testing.assert_array_equal(back.inputs, t.inputs)
    np.testing.assert_array_equal(back.measurements, t.measurements)
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(ValueError, match="header"):
        SimTrajectory.from_csv(tmp_path / "bad.csv")

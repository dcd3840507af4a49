import numpy as np
import pytest

from vfp.autodiff import Adam, Tensor, make_rng
from vfp.flow import (FlowBatch, MlpVelocityField, euler_sample, fm_loss,
                      interpolate, log_likelihood, oracle_velocity,
                      standard_normal_logpdf)


class TestInterpolate:
    def test_endpoints(self):
        a0 = np.array([[0.2, -0.4]])
        a1 = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(interpolate(a0, a1, np.array([0.0])), a0)
        np.testing.assert_array_equal(interpolate(a0, a1, np.array([1.0])), a1)

    def test_quarter_point(self):
        out = interpolate(np.array([[0.0, 0.0]]), np.array([[2.0, -4.0]]),
                          np.array([0.25]))
        np.testing.assert_allclose(out, [[0.5, -1.0]])

    def test_range_error(self):
        with pytest.raises(ValueError):
            interpolate(np.zeros((1, 2)), np.ones((1, 2)), np.array([1.5]))


class TestOracleVelocity:
    def test_identical_endpoints(self):
        np.testing.assert_array_equal(
            oracle_velocity(np.ones((2, 2)), np.ones((2, 2))), np.zeros((2, 2)))

    def test_simple_difference(self):
        np.testing.assert_array_equal(
            oracle_velocity(np.array([[1.0]]), np.array([[3.0]])), [[2.0]])

    def test_antisymmetry(self):
        rng = make_rng(0)
        x, y = rng.normal(size=(2, 5, 3))
        np.testing.assert_array_equal(oracle_velocity(x, y),
                                      -oracle_velocity(y, x))


class TestFmLoss:
    def test_oracle_field_zero_loss(self):
        batch = FlowBatch(states=np.zeros((3, 1)), targets=np.ones((3, 2)),
                          sources=np.zeros((3, 2)), times=np.array([0.1, 0.5, 0.9]))
        target = oracle_velocity(batch.sources, batch.targets)
        field = lambda a, t, s: Tensor(target)
        assert fm_loss(field, batch).item() == 0.0

    def test_zero_field_unit_targets(self):
        batch = FlowBatch(states=np.zeros((4, 1)), targets=np.ones((4, 2)),
                          sources=np.zeros((4, 2)),
                          times=np.array([0.0, 0.3, 0.6, 1.0]))
        field = lambda a, t, s: Tensor(np.zeros((4, 2)))
        assert fm_loss(field, batch).item() == pytest.approx(2.0)

    def test_crossing_constant_field_optimum(self):
        # grid-search oracle: best constant prediction for velocities {+1,-1}
        grid = np.linspace(-2.0, 2.0, 801)
        losses = [(c - 1.0) ** 2 / 2 + (c + 1.0) ** 2 / 2 for c in grid]
        best = grid[int(np.argmin(losses))]
        assert best == pytest.approx(0.0, abs=1e-9)
        assert min(losses) == pytest.approx(1.0)
        batch = FlowBatch(states=np.zeros((2, 1)),
                          targets=np.array([[1.0], [-1.0]]),
                          sources=np.zeros((2, 1)), times=np.zeros(2))
        field = lambda a, t, s: Tensor(np.full((2, 1), best))
        assert fm_loss(field, batch).item() == pytest.approx(1.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            FlowBatch(states=np.zeros((0, 1)), targets=np.zeros((0, 2)),
                      sources=np.zeros((0, 2)), times=np.zeros(0))

    def test_nonnegative_on_random_fields(self):
        rng = make_rng(5)
        field = MlpVelocityField(2, 2, (8,), rng)
        for trial in range(10):
            batch = FlowBatch(states=rng.normal(size=(6, 2)),
                              targets=rng.normal(size=(6, 2)),
                              sources=rng.normal(size=(6, 2)),
                              times=rng.uniform(size=6))
            assert fm_loss(field, batch).item() >= 0.0


class TestEulerSample:
    def test_zero_field_stationary(self):
        field = lambda a, t, s: Tensor(np.zeros(a.shape))
        out = euler_sample(field, np.array([[0.3, -0.7]]), np.zeros((1, 1)), 5)
        np.testing.assert_array_equal(out.value, [[0.3, -0.7]])

    def test_constant_field_single_step(self):
        field = lambda a, t, s: Tensor(np.array([[1.0, 0.0]]))
        out = euler_sample(field, np.zeros((1, 2)), np.zeros((1, 1)), 1)
        np.testing.assert_array_equal(out.value, [[1.0, 0.0]])

    def test_linear_ode_reaches_e(self):
        field = lambda a, t, s: a
        out = euler_sample(field, np.array([[1.0]]), np.zeros((1, 1)), 100)
        assert out.value[0, 0] == pytest.approx(np.e, rel=0.02)

    def test_zero_steps_rejected(self):
        field = lambda a, t, s: a
        with pytest.raises(ValueError):
            euler_sample(field, np.ones((1, 1)), np.zeros((1, 1)), 0)

    def test_step_halving_converges_linearly(self):
        field = lambda a, t, s: (a * a + 1.0) * 0.25  # smooth nonlinear field
        sol = {n: euler_sample(field, np.array([[0.5]]), np.zeros((1, 1)), n)
               .value[0, 0] for n in (25, 50, 100, 200)}
        gaps = [abs(sol[25] - sol[50]), abs(sol[50] - sol[100]),
                abs(sol[100] - sol[200])]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[1] / gaps[0] == pytest.approx(0.5, abs=0.15)


class TestLogLikelihood:
    def test_identity_flow_is_standard_normal(self):
        field = lambda a, t, s: Tensor(np.zeros(a.shape))
        a1 = np.array([[0.3, -1.2]])
        ll = log_likelihood(field, a1, np.zeros((1, 1)), 50)
        np.testing.assert_allclose(ll, standard_normal_logpdf(a1), atol=1e-9)

    def test_linear_flow_matches_analytic(self):
        field = lambda a, t, s: a
        a1 = np.array([[0.8]])
        ll = log_likelihood(field, a1, np.zeros((1, 1)), 2000)
        expected = standard_normal_logpdf(a1 / np.e) - 1.0
        np.testing.assert_allclose(ll, expected, atol=2e-3)

    def test_translation_field_shifts_density(self):
        c = np.array([0.7, -0.4])
        field = lambda a, t, s: Tensor(np.tile(c, (a.shape[0], 1)))
        a1 = np.array([[1.0, 0.5]])
        ll = log_likelihood(field, a1, np.zeros((1, 1)), 200)
        np.testing.assert_allclose(ll, standard_normal_logpdf(a1 - c), atol=1e-9)

    def test_dimension_limit(self):
        field = lambda a, t, s: Tensor(np.zeros(a.shape))
        with pytest.raises(ValueError):
            log_likelihood(field, np.zeros((1, 5)), np.zeros((1, 1)), 50)
        with pytest.raises(ValueError):
            log_likelihood(field, np.zeros((1, 2)), np.zeros((1, 1)), 5)


def _train_field(field, states, targets, rng, steps=3000, batch=32):
    opt = Adam(field.parameters(), lr=1e-3)
    n = targets.shape[0]
    for _ in range(steps):
        idx = rng.integers(0, n, batch)
        t = rng.uniform(size=batch)
        a0 = rng.standard_normal((batch, targets.shape[1]))
        batch_obj = FlowBatch(states=states[idx], targets=targets[idx],
                              sources=a0, times=t)
        loss = fm_loss(field, batch_obj)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return field


def test_unique_action_per_state_drives_loss_to_floor():
    # zero ambiguity => the loss floor is 0; training should approach it
    rng = make_rng(11)
    states = np.array([[0.0], [1.0]]).repeat(8, axis=0)
    targets = np.where(states > 0.5, 0.6, -0.2)
    field = MlpVelocityField(1, 1, (32, 32), rng)
    _train_field(field, states, targets, rng, steps=4000)
    batch = FlowBatch(states=states, targets=targets,
                      sources=rng.standard_normal(targets.shape),
                      times=rng.uniform(size=targets.shape[0]))
    assert fm_loss(field, batch).item() < 1e-3


def test_trained_1d_density_normalizes():
    # change-of-variables density must integrate to ~1 on a fine grid
    rng = make_rng(17)
    states = np.zeros((64, 1))
    targets = 0.4 + 0.15 * rng.standard_normal((64, 1))
    field = MlpVelocityField(1, 1, (32, 32), rng)
    _train_field(field, states, targets, rng, steps=3000)
    grid = np.linspace(-2.5, 3.5, 241)
    ll = log_likelihood(field, grid[:, None], np.zeros((grid.size, 1)), 120)
    mass = np.trapezoid(np.exp(ll), grid)
    assert mass == pytest.approx(1.0, abs=0.02)

import numpy as np
import pytest

from vfp.autodiff import Tensor, grad, make_rng
from vfp.errors import DimensionError
from vfp.flow import FlowBatch, euler_sample, fm_loss
from vfp.moe import (ExpertBank, FusedGating, GatingNetwork, moe_loss,
                     select_and_integrate)


def constant_expert(bank: ExpertBank, i: int, value) -> None:
    """Zero the expert's net and set its output bias to a constant."""
    expert = bank[i]
    for p in expert.parameters():
        p.value = np.zeros(p.shape)
    expert.net.biases[-1].value = np.asarray(value, dtype=np.float64)


class TestGating:
    def test_zero_parameters_give_uniform_and_first_index(self):
        gate = GatingNetwork(3, 4, make_rng(0))
        for p in gate.parameters():
            p.value = np.zeros(p.shape)
        decision = gate.decide(np.array([0.3, -0.2, 0.9]))
        np.testing.assert_allclose(decision.weights, np.full(4, 0.25))
        assert decision.index == 0

    def test_softmax_of_known_logits(self):
        gate = FusedGating(3, 3)
        decision = gate.decide(np.array([2.0, 0.0, 0.0]))
        np.testing.assert_allclose(decision.weights,
                                   [0.7870, 0.1065, 0.1065], atol=2e-4)
        assert decision.index == 0

    def test_constant_shift_invariance(self):
        gate = FusedGating(4, 4)
        rng = make_rng(3)
        for _ in range(20):
            z = rng.normal(size=4)
            base = gate.decide(z)
            shifted = gate.decide(z + 7.3)
            np.testing.assert_allclose(shifted.weights, base.weights, atol=1e-12)
            assert shifted.index == base.index

    def test_weights_on_simplex(self):
        gate = GatingNetwork(2, 5, make_rng(1))
        rng = make_rng(2)
        w = gate(rng.normal(size=(50, 2))).value
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), np.ones(50), atol=1e-6)

    def test_fused_gate_requires_matching_dims(self):
        with pytest.raises(DimensionError):
            FusedGating(3, 4)


class TestMoeLoss:
    def test_single_expert_reduces_to_fm_loss(self):
        rng = make_rng(0)
        bank = ExpertBank(1, 2, 2, rng, hidden=(8,))
        batch = FlowBatch(states=rng.normal(size=(6, 2)),
                          targets=rng.normal(size=(6, 2)),
                          sources=rng.normal(size=(6, 2)),
                          times=rng.uniform(size=6))
        from vfp.flow import interpolate, oracle_velocity
        a_t = interpolate(batch.sources, batch.targets, batch.times)
        v = oracle_velocity(batch.sources, batch.targets)
        weights = np.ones((6, 1))
        got = moe_loss(weights, bank, a_t, batch.times, batch.states, v)
        want = fm_loss(bank[0], batch)
        assert got.item() == pytest.approx(want.item())

    def test_one_hot_gate_detaches_other_experts(self):
        rng = make_rng(1)
        bank = ExpertBank(3, 1, 1, rng, hidden=(6,))
        a_t = rng.normal(size=(4, 1))
        t = rng.uniform(size=4)
        s = rng.normal(size=(4, 1))
        v = rng.normal(size=(4, 1))
        weights = np.zeros((4, 3))
        weights[:, 1] = 1.0
        loss = moe_loss(weights, bank, a_t, t, s, v)
        grads = grad(loss, bank.parameters())
        per_expert = [grads[i * 4:(i + 1) * 4] for i in range(3)]
        assert all(np.all(g == 0) for g in per_expert[0])
        assert any(np.any(g != 0) for g in per_expert[1])
        assert all(np.all(g == 0) for g in per_expert[2])

    def test_weighted_sum_arithmetic(self):
        rng = make_rng(2)
        bank = ExpertBank(2, 1, 1, rng, hidden=())
        constant_expert(bank, 0, [1.0])   # error (1-0)^2 = 1
        constant_expert(bank, 1, [2.0])   # error (2-0)^2 = 4
        weights = np.array([[0.25, 0.75]])
        loss = moe_loss(weights, bank, np.zeros((1, 1)), np.zeros(1),
                        np.zeros((1, 1)), np.zeros((1, 1)))
        assert loss.item() == pytest.approx(0.25 * 1.0 + 0.75 * 4.0)

    def test_gate_width_must_match(self):
        rng = make_rng(3)
        bank = ExpertBank(2, 1, 1, rng, hidden=())
        with pytest.raises(DimensionError):
            moe_loss(np.ones((1, 3)), bank, np.zeros((1, 1)), np.zeros(1),
                     np.zeros((1, 1)), np.zeros((1, 1)))


class TestSelectAndIntegrate:
    def test_single_expert_matches_plain_sampling(self):
        rng = make_rng(4)
        bank = ExpertBank(1, 2, 2, rng, hidden=(8,))
        a0 = rng.normal(size=(5, 2))
        s = rng.normal(size=(5, 2))
        got = select_and_integrate(np.ones((5, 1)), bank, a0, s, 3)
        want = euler_sample(bank[0], a0, s, 3)
        np.testing.assert_array_equal(got.value, want.value)

    def test_argmax_commits_no_averaging(self):
        rng = make_rng(5)
        bank = ExpertBank(2, 1, 1, rng, hidden=())
        constant_expert(bank, 0, [1.0])
        constant_expert(bank, 1, [-1.0])
        weights = np.array([[0.9, 0.1]])
        out = select_and_integrate(weights, bank, np.zeros((1, 1)),
                                   np.zeros((1, 1)), 1)
        np.testing.assert_allclose(out.value, [[1.0]])

    def test_rows_routed_to_their_own_experts(self):
        rng = make_rng(6)
        bank = ExpertBank(2, 1, 1, rng, hidden=())
        constant_expert(bank, 0, [1.0])
        constant_expert(bank, 1, [-1.0])
        weights = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        out = select_and_integrate(weights, bank, np.zeros((3, 1)),
                                   np.zeros((3, 1)), 1)
        np.testing.assert_allclose(out.value, [[1.0], [-1.0], [1.0]])

    def test_gradient_reaches_only_selected_expert(self):
        rng = make_rng(7)
        bank = ExpertBank(2, 1, 1, rng, hidden=(4,))
        weights = np.array([[0.9, 0.1]])
        out = select_and_integrate(weights, bank, np.zeros((1, 1)),
                                   np.zeros((1, 1)), 1)
        grads = grad((out * out).sum(), bank.parameters())
        n0 = len(bank[0].parameters())
        assert any(np.any(g != 0) for g in grads[:n0])
        assert all(np.all(g == 0) for g in grads[n0:])

    def test_lowest_index_wins_ties(self):
        rng = make_rng(8)
        bank = ExpertBank(2, 1, 1, rng, hidden=())
        constant_expert(bank, 0, [1.0])
        constant_expert(bank, 1, [-1.0])
        out = select_and_integrate(np.array([[0.5, 0.5]]), bank,
                                   np.zeros((1, 1)), np.zeros((1, 1)), 1)
        np.testing.assert_allclose(out.value, [[1.0]])

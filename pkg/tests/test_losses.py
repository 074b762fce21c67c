import math

import numpy as np
import pytest

import semidistill.autodiff as ad
from semidistill.autodiff import Tape, Tensor
from semidistill.errors import ShapeError
from semidistill.losses import (TemperatureConfig, cross_entropy, kd_loss,
                                kd_loss_unlabeled)


class TestTemperatureConfig:
    def test_defaults(self):
        t = TemperatureConfig()
        assert (t.tau_c, t.tau_kd, t.tau_kd_u) == (1.0, 16.0, 6.0)
        assert t.effective_stage2_ce_tau == 16.0

    def test_stage2_override(self):
        t = TemperatureConfig(stage2_ce_tau=1.0)
        assert t.effective_stage2_ce_tau == 1.0

    @pytest.mark.parametrize("field", ["tau_c", "tau_kd", "tau_kd_u"])
    def test_nonpositive_rejected(self, field):
        with pytest.raises(ValueError):
            TemperatureConfig(**{field: 0.0})
        with pytest.raises(ValueError):
            TemperatureConfig(**{field: -3.0})


class TestCrossEntropy:
    def test_confident_correct_approaches_zero(self):
        logits = np.full((2, 5), -50.0)
        logits[0, 1] = 50.0
        logits[1, 3] = 50.0
        loss = cross_entropy(Tensor(logits), [1, 3], 1.0).item()
        assert loss < 1e-9

    def test_uniform_logits_equal_log_k(self):
        loss = cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 2], 1.0).item()
        assert abs(loss - math.log(4)) < 1e-9

    def test_large_tau_flattens_to_log_k(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(scale=5.0, size=(4, 6))
        loss = cross_entropy(Tensor(logits), [0, 1, 2, 3], 1e8).item()
        assert abs(loss - math.log(6)) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3], 1.0)
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((2, 3))), [-1, 0], 1.0)

    def test_gradient_descends_toward_label(self):
        logits = Tensor(np.zeros((1, 3)), requires_grad=True)
        with Tape():
            ad.backward(cross_entropy(logits, [2], 1.0))
        assert logits.grad[0, 2] < 0
        assert logits.grad[0, 0] > 0 and logits.grad[0, 1] > 0


class TestKDLoss:
    def test_identical_logits_zero(self):
        rng = np.random.default_rng(1)
        d = rng.normal(size=(4, 7))
        assert abs(kd_loss(Tensor(d), Tensor(d.copy()), 4.0).item()) < 1e-12

    def test_one_hot_limit_case(self):
        # teacher -> [1, 0] in the limit; student uniform -> KL = ln 2
        v = kd_loss(Tensor([800.0, 0.0]), Tensor([0.0, 0.0]), 1.0).item()
        assert abs(v - math.log(2)) < 1e-9

    def test_quarter_three_quarter_case(self):
        t = Tensor(np.log([0.75, 0.25]))
        s = Tensor(np.log([0.25, 0.75]))
        v = kd_loss(t, s, 1.0).item()
        assert abs(v - 0.5 * math.log(3)) < 1e-9

    def test_nonnegativity_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            t = rng.normal(scale=rng.uniform(0.1, 20.0), size=6)
            s = rng.normal(scale=rng.uniform(0.1, 20.0), size=6)
            tau = float(rng.uniform(0.25, 16.0))
            assert kd_loss(Tensor(t), Tensor(s), tau).item() >= -1e-9

    def test_temperature_identity(self):
        rng = np.random.default_rng(3)
        for tau in (2.0, 6.0, 16.0):
            t = rng.normal(scale=4.0, size=(3, 8))
            s = rng.normal(scale=4.0, size=(3, 8))
            a = kd_loss(Tensor(t), Tensor(s), tau).item()
            b = kd_loss(Tensor(t / tau), Tensor(s / tau), 1.0).item()
            assert abs(a - b) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kd_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 1.0)

    def test_teacher_side_is_constant(self):
        t = Tensor(np.array([[1.0, -1.0, 0.5]]), requires_grad=True)
        s = Tensor(np.array([[0.2, 0.1, -0.3]]), requires_grad=True)
        with Tape():
            ad.backward(kd_loss(t, s, 2.0))
        assert t.grad is None
        assert s.grad is not None and np.any(s.grad != 0)

    def test_mean_reduction_over_batch(self):
        t1, s1 = np.array([[3.0, 0.0]]), np.array([[0.0, 0.0]])
        t2, s2 = np.array([[0.0, 2.0]]), np.array([[1.0, 0.0]])
        single = (kd_loss(Tensor(t1), Tensor(s1), 1.0).item()
                  + kd_loss(Tensor(t2), Tensor(s2), 1.0).item()) / 2
        batched = kd_loss(Tensor(np.vstack([t1, t2])), Tensor(np.vstack([s1, s2])), 1.0).item()
        assert abs(single - batched) < 1e-12

    def test_tau_squared_rescale_toggle(self):
        rng = np.random.default_rng(4)
        t = rng.normal(size=(2, 5))
        s = rng.normal(size=(2, 5))
        plain = kd_loss(Tensor(t), Tensor(s), 4.0).item()
        scaled = kd_loss(Tensor(t), Tensor(s), 4.0, temperature_rescale=True).item()
        assert abs(scaled - 16.0 * plain) < 1e-12

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            kd_loss(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), 0.0)


class TestKDLossUnlabeled:
    def test_identical_logits_zero(self):
        d = np.random.default_rng(5).normal(size=(3, 6))
        assert abs(kd_loss_unlabeled(Tensor(d), Tensor(d.copy()), 6.0).item()) < 1e-12

    def test_equals_kd_loss_on_same_inputs(self):
        rng = np.random.default_rng(6)
        t = rng.normal(size=(4, 9))
        s = rng.normal(size=(4, 9))
        assert (kd_loss_unlabeled(Tensor(t), Tensor(s), 6.0).item()
                == kd_loss(Tensor(t), Tensor(s), 6.0).item())

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            kd_loss_unlabeled(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))), 6.0)

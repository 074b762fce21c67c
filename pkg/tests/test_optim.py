import numpy as np
import pytest

import semidistill.autodiff as ad
from semidistill.autodiff import Tape, Tensor
from semidistill.errors import ConfigError
from semidistill.optim import SGD, Adam, ScheduleConfig, lr_at, make_optimizer


class TestScheduleConfig:
    def test_defaults(self):
        s = ScheduleConfig()
        assert s.base_lr == 7e-4 and s.final_lr == 7e-7
        assert s.warmup_factor == 0.1
        assert s.total_epochs == 40

    def test_invariants(self):
        with pytest.raises(ConfigError):
            ScheduleConfig(base_lr=1e-4, final_lr=1e-3)
        with pytest.raises(ConfigError):
            ScheduleConfig(warmup_factor=0.0)
        with pytest.raises(ConfigError):
            ScheduleConfig(warmup_factor=1.5)
        with pytest.raises(ConfigError):
            ScheduleConfig(warmup_epochs=50, total_epochs=40)


class TestLrAt:
    def test_start_is_warmup_fraction_of_base(self):
        assert abs(lr_at(ScheduleConfig(), 0.0) - 7e-5) < 1e-18

    def test_end_is_final_lr(self):
        assert abs(lr_at(ScheduleConfig(), 1.0) - 7e-7) < 1e-18

    def test_peak_at_end_of_warmup(self):
        s = ScheduleConfig()
        assert abs(lr_at(s, s.warmup_epochs / s.total_epochs) - s.base_lr) < 1e-12

    def test_degenerate_constant_schedule(self):
        s = ScheduleConfig(base_lr=1e-3, final_lr=1e-3, warmup_factor=1.0)
        for t in np.linspace(0, 1, 17):
            assert abs(lr_at(s, float(t)) - 1e-3) < 1e-15

    def test_monotone_up_then_down(self):
        s = ScheduleConfig()
        span = s.warmup_epochs / s.total_epochs
        grid = np.linspace(0, 1, 401)
        values = [lr_at(s, float(t)) for t in grid]
        for t0, t1, v0, v1 in zip(grid, grid[1:], values, values[1:]):
            if t1 <= span:
                assert v1 >= v0 - 1e-15
            elif t0 >= span:
                assert v1 <= v0 + 1e-15

    def test_fraction_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(ScheduleConfig(), -0.1)
        with pytest.raises(ValueError):
            lr_at(ScheduleConfig(), 1.1)

    def test_no_warmup(self):
        s = ScheduleConfig(warmup_epochs=0)
        assert abs(lr_at(s, 0.0) - s.base_lr) < 1e-15


def quad_grad(w):
    with Tape():
        loss = ad.tsum(ad.mul(w, w))
        ad.backward(loss)


class TestOptimizers:
    def test_adam_descends_quadratic(self):
        w = Tensor([5.0, -3.0], requires_grad=True)
        opt = Adam([w])
        for _ in range(400):
            quad_grad(w)
            opt.step(0.05)
            w.grad = None
        assert np.all(np.abs(w.data) < 1e-2)

    def test_sgd_descends_quadratic(self):
        w = Tensor([5.0, -3.0], requires_grad=True)
        opt = SGD([w])
        for _ in range(200):
            quad_grad(w)
            opt.step(0.1)
            w.grad = None
        assert np.all(np.abs(w.data) < 1e-2)

    def test_frozen_param_untouched(self):
        w = Tensor([2.0], requires_grad=False)
        w.grad = np.array([1.0])
        before = w.data.copy()
        Adam([w]).step(0.1)
        SGD([w]).step(0.1)
        assert np.array_equal(w.data, before)

    def test_missing_grad_skipped(self):
        w = Tensor([2.0], requires_grad=True)
        before = w.data.copy()
        Adam([w]).step(0.1)
        assert np.array_equal(w.data, before)

    def test_make_optimizer(self):
        w = Tensor([1.0], requires_grad=True)
        assert isinstance(make_optimizer("adam", [w]), Adam)
        assert isinstance(make_optimizer("sgd", [w]), SGD)
        with pytest.raises(ConfigError):
            make_optimizer("rmsprop", [w])

    def test_adam_deterministic(self):
        def run():
            w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
            opt = Adam([w])
            for _ in range(50):
                quad_grad(w)
                opt.step(0.01)
                w.grad = None
            return w.data.copy()

        assert np.array_equal(run(), run())

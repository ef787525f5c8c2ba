import numpy as np
import pytest

from sparsett import Tensor
from sparsett.errors import ConfigError
from sparsett.optim import AdamW, MilestoneSchedule


def reference_adamw(p, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        p = p - lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdamW:
    def test_matches_reference(self, rng):
        grads = rng.normal(size=(5, 3))
        p = Tensor(np.array([1.0, -2.0, 0.5]))
        opt = AdamW([p], lr=1e-2, weight_decay=0.1)
        for g in grads:
            p.grad = g
            opt.step()
        np.testing.assert_allclose(p.data, reference_adamw(np.array([1.0, -2.0, 0.5]), grads, 1e-2, 0.1), rtol=1e-12)

    def test_first_step_magnitude_is_lr(self):
        p = Tensor(np.array([0.0]))
        p.grad = np.array([123.0])
        AdamW([p], lr=0.01, weight_decay=0.0).step()
        assert p.data[0] == pytest.approx(-0.01, rel=1e-6)

    def test_decay_is_decoupled_from_gradient(self):
        p = Tensor(np.array([2.0]))
        p.grad = np.array([0.0])
        AdamW([p], lr=0.1, weight_decay=0.5).step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))

    def test_params_without_grad_untouched(self):
        p = Tensor(np.array([1.0]))
        AdamW([p]).step()
        assert p.data[0] == 1.0

    def test_invalid_settings(self):
        with pytest.raises(ConfigError):
            AdamW([], lr=0.0)


class TestSchedule:
    def test_default_decays(self):
        s = MilestoneSchedule()
        lrs = [s.lr_at(e) for e in (0, 9, 10, 14, 15, 19)]
        assert lrs[:2] == [1e-4, 1e-4]
        assert lrs[2] == pytest.approx(1e-5) and lrs[3] == pytest.approx(1e-5)
        assert lrs[4] == pytest.approx(1e-6) and lrs[5] == pytest.approx(1e-6)

    def test_milestones_must_increase(self):
        with pytest.raises(ConfigError):
            MilestoneSchedule(milestones=(5, 3))

import numpy as np
import pytest

from refrec.optim import Adam
from refrec.tensor import Tensor, mul, reduce


def test_first_step_moves_by_lr():
    # Bias correction makes the first update exactly lr * sign(grad) (up to eps)
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    opt.zero_grad()
    reduce(mul(p, p), "sum").backward()
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)


def test_minimizes_quadratic():
    p = Tensor([3.0, -4.0], requires_grad=True)
    opt = Adam({"p": p}, lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        reduce(mul(p, p), "sum").backward()
        opt.step()
    assert np.all(np.abs(p.data) < 0.1)


def test_parameter_without_grad_is_skipped():
    p = Tensor([1.0], requires_grad=True)
    opt = Adam({"p": p})
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0])


def test_rejects_non_positive_lr():
    with pytest.raises(ValueError):
        Adam({}, lr=0.0)

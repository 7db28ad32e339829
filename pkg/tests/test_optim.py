"""Optimisers."""
import numpy as np
import pytest

from backbone_refine.model.network import ToyRefinerParams, parameter_shapes
from backbone_refine.model.optim import SGD, Adam, make_optimizer
from backbone_refine.utils import make_rng


@pytest.fixture
def params():
    return ToyRefinerParams.init(make_rng(1))


@pytest.fixture
def grads():
    rng = make_rng(2)
    return {k: rng.normal(size=s) for k, s in parameter_shapes().items()}


def test_sgd_step(params, grads):
    """Plain descent moves against the gradient."""
    out = SGD(lr=0.1).step(params, grads)
    assert np.allclose(out["head.weight"], params["head.weight"] - 0.1 * grads["head.weight"])


def test_adam_first_step(params, grads):
    """The first bias-corrected step has magnitude lr per entry."""
    out = Adam(lr=0.01).step(params, grads)
    moved = params["layer2.weight"] - out["layer2.weight"]
    g = grads["layer2.weight"]
    assert np.allclose(moved, 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-9, atol=1e-12)
    assert np.max(np.abs(moved)) <= 0.01 + 1e-12


def test_zero_learning_rate(params, grads):
    """lr = 0 leaves parameters bit-identical."""
    opt = make_optimizer("adam", 0.0)
    out = params
    for _ in range(3):
        out = opt.step(out, grads)
    assert all(np.array_equal(out[k], params[k]) for k in params.arrays)


def test_make_optimizer():
    """Optimisers by name."""
    assert isinstance(make_optimizer("sgd", 0.1), SGD)
    assert isinstance(make_optimizer("adam", 0.1), Adam)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)
    with pytest.raises(AssertionError):
        make_optimizer("adam", -1.0)

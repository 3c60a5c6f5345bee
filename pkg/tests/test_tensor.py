import numpy as np
import pytest

from advlab import ops
from advlab.tensor import Tape, TapeError, Tensor


def test_tensor_defaults_to_f32():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.dtype == np.float32
    assert t.shape == (2, 2)
    assert t.grad is None


def test_requires_grad_allocates_buffer():
    t = Tensor(np.ones(3), requires_grad=True)
    assert t.grad is not None
    assert t.grad.shape == (3,)
    assert np.all(t.grad == 0)


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 5)).astype(np.float32), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(x)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.ones((4, 5), dtype=np.float32))


def test_linear_functional_gradient_is_w():
    rng = np.random.default_rng(1)
    w = rng.normal(size=12).astype(np.float32)
    x = Tensor(rng.normal(size=12).astype(np.float32), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(ops.mul(x, Tensor(w)))
    tape.backward(loss)
    assert np.array_equal(x.grad, w)


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ops.relu(x)
    with pytest.raises(TapeError, match="scalar"):
        tape.backward(y)


def test_backward_rejects_detached_loss():
    x = Tensor(np.ones(4), requires_grad=True)
    with Tape() as tape:
        ops.reduce_sum(x)
    other = Tensor(np.asarray(1.0))
    with pytest.raises(TapeError, match="final node"):
        tape.backward(other)


def test_tape_single_use():
    x = Tensor(np.ones(4), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(x)
    tape.backward(loss)
    with pytest.raises(TapeError, match="consumed"):
        tape.backward(loss)


def test_backward_does_not_mutate_data():
    x = Tensor(np.linspace(-1, 1, 8, dtype=np.float32), requires_grad=True)
    snapshot = x.data.copy()
    with Tape() as tape:
        loss = ops.reduce_sum(ops.relu(x))
    tape.backward(loss)
    assert np.array_equal(x.data, snapshot)


def test_forward_deterministic_without_tape():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(3, 16)).astype(np.float32))
    w = Tensor(rng.normal(size=(16, 8)).astype(np.float32))
    a = ops.dense(x, w).data
    b = ops.dense(x, w).data
    assert np.array_equal(a, b)


def test_grad_accumulates_across_reuse():
    x = Tensor(np.array([2.0, 3.0], dtype=np.float32), requires_grad=True)
    with Tape() as tape:
        y = ops.add(x, x)  # dy/dx = 2
        loss = ops.reduce_sum(y)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.full(2, 2.0, dtype=np.float32))


def test_identity_graph_bit_exact():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
    y = ops.reshape(x, (2, 3, 4))
    assert np.array_equal(y.data, x.data)

import numpy as np
import pytest

from dple.errors import DimensionError, NumericError, UsageError
from dple.grad import Tape, Tensor, finite_diff_check, tensor

RNG = np.random.default_rng(1234)


def test_record_add():
    t = Tape()
    out = t.record("add", tensor([1.0, 2.0]), tensor([3.0, 4.0]))
    assert np.array_equal(out.data, [4.0, 6.0])


def test_record_matmul_zeros():
    t = Tape()
    out = t.record("matmul", tensor(np.zeros((2, 3))), tensor(RNG.normal(size=(3, 1))))
    assert out.shape == (2, 1)
    assert np.array_equal(out.data, np.zeros((2, 1)))


def test_record_concat_lengths():
    t = Tape()
    a, b = tensor([1.0, 2.0, 3.0]), tensor([4.0])
    out = t.record("concat", [a, b], axis=0)
    assert out.shape == (4,)


def test_record_unknown_tag():
    with pytest.raises(UsageError):
        Tape().record("conv2d", tensor([1.0]))


def test_add_shape_mismatch():
    with pytest.raises(DimensionError):
        Tape().add(tensor(np.ones((2, 3))), tensor(np.ones((4, 5))))


def test_backward_linear():
    # loss = sum(2 * x) with x = [1, 1]
    x = tensor([1.0, 1.0], requires_grad=True)
    t = Tape()
    loss = t.scale(t.mean_all(t.scale(x, 2.0)), x.size)
    t.backward(loss)
    assert np.allclose(x.grad, [2.0, 2.0])


def test_backward_square():
    # loss = sum(x^2) with x = [3] -> grad 6
    x = tensor([3.0], requires_grad=True)
    t = Tape()
    loss = t.scale(t.mean_all(t.mul(x, x)), x.size)
    t.backward(loss)
    assert np.allclose(x.grad, [6.0])


def test_backward_requires_scalar_loss():
    x = tensor([1.0, 2.0], requires_grad=True)
    t = Tape()
    y = t.scale(x, 2.0)
    with pytest.raises(UsageError):
        t.backward(y)


def test_frozen_inputs_get_no_grad():
    frozen = tensor(RNG.normal(size=(3, 3)), requires_grad=False)
    x = tensor(RNG.normal(size=(2, 3)), requires_grad=True)
    t = Tape()
    loss = t.mean_all(t.matmul(x, frozen))
    t.backward(loss)
    assert frozen.grad is None
    assert x.grad is not None


def test_backward_deterministic_bitwise():
    def grads():
        x = tensor(RNG.normal(size=(4, 4)), requires_grad=True)
        return x

    x1 = tensor(np.arange(16, dtype=float).reshape(4, 4) / 7.0, requires_grad=True)
    x2 = tensor(x1.data.copy(), requires_grad=True)
    outs = []
    for x in (x1, x2):
        t = Tape()
        h = t.tanh(t.matmul(x, x))
        loss = t.mean_all(t.mul(h, h))
        t.backward(loss)
        outs.append(x.grad.tobytes())
    assert outs[0] == outs[1]


def _composite_loss(params):
    a, b = params

    def fn(tape: Tape) -> Tensor:
        h = tape.tanh(tape.matmul(a, b))
        h = tape.l2_normalize(tape.add(h, tape.scale(b, 0.5)))
        top = tape.concat([h, tape.mul(h, h)], axis=0)
        sm = tape.softmax(top)
        return tape.mean_all(tape.sub(sm, tape.scale(top, 0.1)))

    return fn


def test_composite_graph_matches_finite_differences():
    a = tensor(RNG.normal(size=(3, 3)) + 0.1, requires_grad=True)
    b = tensor(RNG.normal(size=(3, 4)) + 0.1, requires_grad=True)
    err = finite_diff_check(_composite_loss([a, b]), [a, b], step=1e-5)
    assert err <= 1e-4


def test_finite_diff_linear_is_exact():
    x = tensor(RNG.normal(size=(5,)), requires_grad=True)

    def fn(tape: Tape) -> Tensor:
        return tape.mean_all(tape.scale(x, 3.0))

    assert finite_diff_check(fn, [x], step=1e-5) <= 1e-10


def test_finite_diff_rejects_zero_step():
    x = tensor([1.0], requires_grad=True)
    with pytest.raises(UsageError):
        finite_diff_check(lambda tape: tape.mean_all(x), [x], step=0.0)


def _primitive_cases():
    a = RNG.normal(size=(3, 4)) + 2.0   # keep relu well away from its kink
    b = RNG.normal(size=(3, 4)) + 2.0
    m = RNG.normal(size=(4, 5)) * 0.3
    return {
        "add": (lambda t, x, y: t.add(x, y), [a, b]),
        "sub": (lambda t, x, y: t.sub(x, y), [a, b]),
        "mul": (lambda t, x, y: t.mul(x, y), [a, b]),
        "matmul": (lambda t, x, y: t.matmul(x, y), [a, m]),
        "matmul_t": (lambda t, x, y: t.matmul(x, y, transpose_b=True), [a, b]),
        "concat": (lambda t, x, y: t.concat([x, y], axis=1), [a, b]),
        "slice": (lambda t, x: t.slice(x, 1, 3, axis=1), [a]),
        "mean_all": (lambda t, x: t.mean_all(x), [a]),
        "relu": (lambda t, x: t.relu(x), [a]),
        "tanh": (lambda t, x: t.tanh(x), [a]),
        "l2_normalize": (lambda t, x: t.l2_normalize(x), [a]),
        "scale": (lambda t, x: t.scale(x, -1.7), [a]),
        "softmax": (lambda t, x: t.softmax(x), [a * 0.3]),
        "reshape": (lambda t, x: t.reshape(x, (4, 3)), [a]),
        "softmax_ce": (lambda t, x: t.softmax_ce(t.scale(x, 0.5), [0, 2, 1]), [a]),
    }


@pytest.mark.parametrize("name", sorted(_primitive_cases()))
def test_primitive_gradients(name):
    build, arrays = _primitive_cases()[name]
    params = [tensor(arr, requires_grad=True) for arr in arrays]

    def fn(tape: Tape) -> Tensor:
        out = build(tape, *params)
        if out.data.shape == ():
            return out
        return tape.mean_all(tape.mul(out, out))

    assert finite_diff_check(fn, params, step=1e-6) <= 1e-6


def test_matmul_batched_against_loop():
    a = RNG.normal(size=(5, 3, 4))
    b = RNG.normal(size=(4, 2))
    t = Tape()
    out = t.matmul(tensor(a), tensor(b))
    expect = np.stack([a[i] @ b for i in range(5)])
    assert np.allclose(out.data, expect, atol=1e-14)


def test_batched_matmul_gradients():
    a = tensor(RNG.normal(size=(3, 2, 4)), requires_grad=True)
    b = tensor(RNG.normal(size=(4, 3)), requires_grad=True)
    c = tensor(RNG.normal(size=(3, 2, 3)), requires_grad=True)

    def fn(tape: Tape) -> Tensor:
        h = tape.matmul(a, b)
        s = tape.matmul(h, c, transpose_b=True)
        return tape.mean_all(tape.mul(s, s))

    assert finite_diff_check(fn, [a, b, c], step=1e-6) <= 1e-6


def test_broadcast_add_row_vector_gradients():
    x = tensor(RNG.normal(size=(4, 3)), requires_grad=True)
    row = tensor(RNG.normal(size=(3,)), requires_grad=True)

    def fn(tape: Tape) -> Tensor:
        h = tape.add(x, row)
        return tape.mean_all(tape.mul(h, h))

    assert finite_diff_check(fn, [x, row], step=1e-6) <= 1e-6


def test_softmax_ce_matches_manual_value():
    logits = np.array([[1.0, 0.0]])
    t = Tape()
    loss = t.softmax_ce(tensor(logits), [0])
    expect = -np.log(np.e / (np.e + 1.0))
    assert abs(float(loss.data) - expect) < 1e-12


def test_l2_normalize_zero_norm_raises():
    with pytest.raises(NumericError):
        Tape().l2_normalize(tensor(np.zeros((2, 3))))


def test_grad_accumulates_across_multiple_uses():
    x = tensor([2.0], requires_grad=True)
    t = Tape()
    # loss = x*x + 3x -> grad = 2x + 3 = 7
    loss = t.mean_all(t.add(t.mul(x, x), t.scale(x, 3.0)))
    t.backward(loss)
    assert np.allclose(x.grad, [7.0])

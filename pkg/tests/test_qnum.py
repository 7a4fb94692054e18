import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dple.errors import ConfigError, DimensionError
from dple.grad import Tensor
from dple.qnum import (QuaternionLinear, QuaternionTensor, Quaternion, block_matrix,
                       hamilton_product, init_quaternion_linear, norm,
                       quat_tensor, quat_to_real_matrix, quaternion_linear_forward,
                       split_activation)

RNG = np.random.default_rng(99)

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)
quat = st.tuples(finite, finite, finite, finite)


def scalar_quat(r, x, y, z):
    return quat_tensor(r, x, y, z)


def test_identity_quaternion_is_neutral():
    q = scalar_quat(0.3, -1.2, 2.0, 0.7)
    out = hamilton_product(scalar_quat(1, 0, 0, 0), q)
    assert np.allclose(out.components(), q.components())


def test_i_times_j_is_k():
    out = hamilton_product(scalar_quat(0, 1, 0, 0), scalar_quat(0, 0, 1, 0))
    assert np.allclose(out.components(), (0, 0, 0, 1))


def test_unit_squares_are_minus_one():
    units = {
        "i": scalar_quat(0, 1, 0, 0),
        "j": scalar_quat(0, 0, 1, 0),
        "k": scalar_quat(0, 0, 0, 1),
    }
    minus_one = (-1, 0, 0, 0)
    for u in units.values():
        assert np.allclose(hamilton_product(u, u).components(), minus_one)
    ijk = hamilton_product(hamilton_product(units["i"], units["j"]), units["k"])
    assert np.allclose(ijk.components(), minus_one)


def test_product_matches_matrix_oracle():
    for _ in range(50):
        a = Quaternion(*RNG.normal(size=4))
        b = RNG.normal(size=4)
        via_matrix = quat_to_real_matrix(a) @ b
        direct = hamilton_product(quat_tensor(a.r, a.x, a.y, a.z),
                                  quat_tensor(*b))
        assert np.allclose(np.array(direct.components()), via_matrix, atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(quat, quat)
def test_norm_multiplicativity(qa, qb):
    a, b = scalar_quat(*qa), scalar_quat(*qb)
    prod = hamilton_product(a, b)
    assert np.allclose(norm(prod), norm(a) * norm(b), rtol=1e-10, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(quat, quat, quat)
def test_associativity_and_distributivity(qa, qb, qc):
    a, b, c = (scalar_quat(*q) for q in (qa, qb, qc))
    left = hamilton_product(hamilton_product(a, b), c)
    right = hamilton_product(a, hamilton_product(b, c))
    assert np.allclose(np.array(left.components()), np.array(right.components()),
                       atol=1e-10)
    bc = QuaternionTensor(*(x + y for x, y in zip(b.components(), c.components())))
    dist_l = hamilton_product(a, bc)
    dist_r = QuaternionTensor(*(x + y for x, y in zip(
        hamilton_product(a, b).components(), hamilton_product(a, c).components())))
    assert np.allclose(np.array(dist_l.components()), np.array(dist_r.components()),
                       atol=1e-10)


def test_component_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        QuaternionTensor(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(4))


# -- real matrix form ---------------------------------------------------------

def test_matrix_of_identity():
    assert np.array_equal(quat_to_real_matrix(Quaternion(1, 0, 0, 0)), np.eye(4))


def test_matrix_of_i_unit():
    # substitute r=0, x=1, y=0, z=0 in the sign pattern
    expect = np.array([
        [0, -1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, -1],
        [0, 0, 1, 0],
    ], dtype=float)
    assert np.array_equal(quat_to_real_matrix(Quaternion(0, 1, 0, 0)), expect)


def test_matrix_first_column_reproduces_components():
    for _ in range(20):
        q = Quaternion(*RNG.normal(size=4))
        col = quat_to_real_matrix(q) @ np.array([1.0, 0, 0, 0])
        assert np.allclose(col, [q.r, q.x, q.y, q.z])


def test_quaternion_requires_finite_components():
    with pytest.raises(ValueError):
        Quaternion(np.inf, 0, 0, 0)


# -- quaternion linear layers -------------------------------------------------

def _random_layer(d_in, d_out, rng):
    return init_quaternion_linear(d_in, d_out, rng)


def _random_input(batch, d_in, rng):
    return QuaternionTensor(*(rng.normal(size=(batch, d_in)) for _ in range(4)))


def _block_oracle(layer, q_in):
    """Flatten components, multiply by the materialized block operator, refold."""
    big = block_matrix(layer)
    stacked = np.concatenate(q_in.components(), axis=-1)
    out = stacked @ big.T
    d = layer.d_out
    return QuaternionTensor(out[..., :d], out[..., d:2 * d],
                            out[..., 2 * d:3 * d], out[..., 3 * d:])


def test_zero_weights_zero_output():
    zero = QuaternionLinear(*(Tensor(np.zeros((3, 5))) for _ in range(4)))
    out = quaternion_linear_forward(zero, _random_input(2, 5, RNG))
    for c in out.components():
        assert np.array_equal(c, np.zeros((2, 3)))


def test_identity_real_weight_passes_input_through():
    eye = QuaternionLinear(Tensor(np.eye(4)), Tensor(np.zeros((4, 4))),
                           Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 4))))
    q = _random_input(3, 4, RNG)
    out = quaternion_linear_forward(eye, q)
    for got, want in zip(out.components(), q.components()):
        assert np.allclose(got, want)


def test_forward_matches_block_matrix_oracle_100_cases():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d_in = int(rng.integers(1, 9))
        d_out = int(rng.integers(1, 9))
        batch = int(rng.integers(1, 5))
        layer = _random_layer(d_in, d_out, rng)
        q = _random_input(batch, d_in, rng)
        got = quaternion_linear_forward(layer, q)
        want = _block_oracle(layer, q)
        for g, w in zip(got.components(), want.components()):
            assert np.max(np.abs(g - w)) <= 1e-12


def test_forward_matches_scalar_hamilton_accumulation():
    # third route: per-unit scalar Hamilton products, summed by hand
    rng = np.random.default_rng(21)
    d_in, d_out = 3, 2
    layer = _random_layer(d_in, d_out, rng)
    q = _random_input(1, d_in, rng)
    got = quaternion_linear_forward(layer, q)
    for o in range(d_out):
        acc = np.zeros(4)
        for i in range(d_in):
            w = quat_tensor(layer.w_r.data[o, i], layer.w_x.data[o, i],
                            layer.w_y.data[o, i], layer.w_z.data[o, i])
            v = quat_tensor(*(c[0, i] for c in q.components()))
            acc += np.array(hamilton_product(w, v).components())
        assert np.allclose([c[0, o] for c in got.components()], acc, atol=1e-12)


def test_dimension_mismatch_rejected():
    layer = _random_layer(4, 2, RNG)
    with pytest.raises(DimensionError):
        quaternion_linear_forward(layer, _random_input(1, 5, RNG))


def test_parameter_sharing_count():
    layer = _random_layer(6, 9, RNG)
    assert layer.weight_count() == 4 * 6 * 9
    # unconstrained real map on the same real widths would need 16x
    assert 16 * 6 * 9 == (4 * 6) * (4 * 9)


def test_bias_shapes_checked():
    with pytest.raises(DimensionError):
        QuaternionLinear(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))),
                         Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))))


# -- split activation ---------------------------------------------------------

def test_split_activation_identity():
    q = _random_input(2, 3, RNG)
    out = split_activation(q, "identity")
    for got, want in zip(out.components(), q.components()):
        assert np.array_equal(got, want)


def test_split_activation_relu_forced_values():
    q = quat_tensor(1.0, -1.0, 2.0, -2.0)
    out = split_activation(q, "relu")
    assert np.allclose(out.components(), (1.0, 0.0, 2.0, 0.0))


def test_split_activation_tanh_range():
    q = _random_input(4, 6, np.random.default_rng(3))
    out = split_activation(q, "tanh")
    for c in out.components():
        assert np.all(np.abs(c) < 1.0)


def test_split_activation_unknown_tag():
    with pytest.raises(ConfigError):
        split_activation(_random_input(1, 2, RNG), "gelu")

"""Quaternion algebra and quaternion linear layers.

A quaternion q = r + x i + y j + z k multiplies by the Hamilton rules
(i^2 = j^2 = k^2 = ijk = -1). Left-multiplication by q is the structured
real 4x4 matrix

    [[ r, -x, -y, -z],
     [ x,  r, -z,  y],
     [ y,  z,  r, -x],
     [ z, -y,  x,  r]]

and a quaternion linear layer is the corresponding block-structured real
operator: 4 weight matrices [d_out, d_in] arranged in that sign pattern
act on the stacked (r, x, y, z) components. The layer therefore holds
4*d_in*d_out scalars where an unconstrained real map of the same real
width would hold 16*d_in*d_out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .grad import Tensor

Array = np.ndarray

ACTIVATIONS = {
    "relu": lambda v: np.where(v > 0.0, v, 0.0),
    "identity": lambda v: v,
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class Quaternion:
    """A single quaternion; components must be finite."""

    r: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not np.isfinite([self.r, self.x, self.y, self.z]).all():
            raise ValueError("quaternion components must be finite")


@dataclass(frozen=True)
class QuaternionTensor:
    """Four aligned component arrays of identical shape [..., d_q].

    Components are numpy arrays for plain algebra; the adapter reuses the
    same container with tape tensors as components.
    """

    comp_r: Array
    comp_x: Array
    comp_y: Array
    comp_z: Array

    def __post_init__(self):
        s = self.comp_r.shape
        for c in (self.comp_x, self.comp_y, self.comp_z):
            if c.shape != s:
                raise DimensionError("quaternion components must share one shape")

    @property
    def shape(self):
        return self.comp_r.shape

    def components(self):
        return (self.comp_r, self.comp_x, self.comp_y, self.comp_z)


def quat_tensor(r, x, y, z) -> QuaternionTensor:
    return QuaternionTensor(*(np.asarray(c, dtype=np.float64) for c in (r, x, y, z)))


def norm(q: QuaternionTensor) -> Array:
    r, x, y, z = q.components()
    return np.sqrt(r * r + x * x + y * y + z * z)


def hamilton_product(a: QuaternionTensor, b: QuaternionTensor) -> QuaternionTensor:
    """Elementwise Hamilton product; operands broadcast along batch axes."""
    ar, ax, ay, az = a.components()
    br, bx, by, bz = b.components()
    try:
        return QuaternionTensor(
            ar * br - ax * bx - ay * by - az * bz,
            ar * bx + ax * br + ay * bz - az * by,
            ar * by - ax * bz + ay * br + az * bx,
            ar * bz + ax * by - ay * bx + az * br,
        )
    except ValueError as exc:
        raise DimensionError(f"hamilton_product: {a.shape} vs {b.shape}") from exc


def quat_to_real_matrix(q: Quaternion) -> Array:
    """The 4x4 real matrix of left-multiplication by q."""
    r, x, y, z = q.r, q.x, q.y, q.z
    return np.array([
        [r, -x, -y, -z],
        [x, r, -z, y],
        [y, z, r, -x],
        [z, -y, x, r],
    ], dtype=np.float64)


@dataclass
class QuaternionLinear:
    """Quaternion linear layer: 4 real weight matrices [d_out, d_in].

    Weights are tape tensors so the same object can be trained; the plain
    numpy forward below reads their current values.
    """

    w_r: Tensor
    w_x: Tensor
    w_y: Tensor
    w_z: Tensor
    bias: QuaternionTensor | None = None

    def __post_init__(self):
        s = self.w_r.shape
        for w in (self.w_x, self.w_y, self.w_z):
            if w.shape != s:
                raise DimensionError("quaternion weight matrices must share one shape")

    @property
    def d_out(self) -> int:
        return self.w_r.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_r.shape[1]

    def weight_count(self) -> int:
        return 4 * self.d_in * self.d_out

    def named_weights(self):
        return [("w_r", self.w_r), ("w_x", self.w_x), ("w_y", self.w_y), ("w_z", self.w_z)]


def init_quaternion_linear(d_in: int, d_out: int, rng: np.random.Generator,
                           bias: bool = False, trainable: bool = True) -> QuaternionLinear:
    """Uniform init in [-s, s] with s = 1/sqrt(4*d_in), one draw per component."""
    s = 1.0 / np.sqrt(4.0 * d_in)
    ws = [Tensor(rng.uniform(-s, s, size=(d_out, d_in)), requires_grad=trainable)
          for _ in range(4)]
    b = None
    if bias:
        b = QuaternionTensor(*(np.zeros(d_out) for _ in range(4)))
    return QuaternionLinear(*ws, bias=b)


def block_matrix(layer: QuaternionLinear) -> Array:
    """Materialize the 4*d_out x 4*d_in real operator of the layer."""
    wr, wx, wy, wz = (layer.w_r.data, layer.w_x.data, layer.w_y.data, layer.w_z.data)
    return np.block([
        [wr, -wx, -wy, -wz],
        [wx, wr, -wz, wy],
        [wy, wz, wr, -wx],
        [wz, -wy, wx, wr],
    ])


def quaternion_linear_forward(layer: QuaternionLinear,
                              q_in: QuaternionTensor) -> QuaternionTensor:
    """Apply the Hamilton-structured affine map to a quaternion tensor.

    q_in components have shape [..., d_in]; output components [..., d_out].
    """
    if q_in.shape[-1] != layer.d_in:
        raise DimensionError(
            f"layer expects d_in={layer.d_in}, got {q_in.shape[-1]}")
    qr, qx, qy, qz = q_in.components()
    wr, wx, wy, wz = (layer.w_r.data.T, layer.w_x.data.T,
                      layer.w_y.data.T, layer.w_z.data.T)
    # weight is the left Hamilton factor: out = W (x) q
    out = QuaternionTensor(
        qr @ wr - qx @ wx - qy @ wy - qz @ wz,
        qx @ wr + qr @ wx + qz @ wy - qy @ wz,
        qy @ wr - qz @ wx + qr @ wy + qx @ wz,
        qz @ wr + qy @ wx - qx @ wy + qr @ wz,
    )
    if layer.bias is not None:
        out = QuaternionTensor(*(c + b for c, b in zip(out.components(),
                                                       layer.bias.components())))
    return out


def split_activation(q: QuaternionTensor, f: str) -> QuaternionTensor:
    """Apply one scalar activation independently to all four components."""
    if f not in ACTIVATIONS:
        raise ConfigError(f"unknown activation tag {f!r}; expected one of "
                          f"{sorted(ACTIVATIONS)}")
    act = ACTIVATIONS[f]
    return QuaternionTensor(*(act(c) for c in q.components()))

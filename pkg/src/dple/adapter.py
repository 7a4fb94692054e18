"""Trainable prompt state and the quaternion cross-modal fusion.

The language fusion embeds the learnable context (plus optional Gaussian
noise) on the real axis and the projected domain features on the i axis
of a quaternion signal, pushes it through a quaternion layer with a relu
split activation, and keeps the real component as the domain-specific
context. Vision prompts repeat the construction per prompted layer with
the learnable language prompts on the real axis and never any noise
(outside the explicit vision-noise ablation).

Only the real output component is consumed downstream, so the tape path
materializes just that component; the j/k weight terms still participate
(against exactly-zero inputs), keeping parameter counts and gradient
slots intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .grad import Tape, Tensor, constant
from .qnum import QuaternionLinear, QuaternionTensor, init_quaternion_linear

Array = np.ndarray

QUAT_MODES = ("hamilton", "hadamard", "off")
NOISE_MODES = ("language", "off", "vision")


@dataclass
class DomainProjector:
    """Two trainable linear layers with a relu between, d_domain -> d_model."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_parameters(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


@dataclass
class QuaternionHadamard:
    """Elementwise quaternion weighting: one weight quaternion per unit."""

    w_r: Tensor
    w_x: Tensor
    w_y: Tensor
    w_z: Tensor

    def named_weights(self):
        return [("w_r", self.w_r), ("w_x", self.w_x), ("w_y", self.w_y), ("w_z", self.w_z)]


@dataclass
class RealFusion:
    """Quaternion-off substitute: plain linear on concat(r, i) components.

    Weight is [2d, 2d] so the parameter count matches the 4*d*d scalars of
    the quaternion layer it replaces; the first d output columns act as
    the real component.
    """

    w: Tensor

    def named_weights(self):
        return [("w", self.w)]


FusionLayer = QuaternionLinear | QuaternionHadamard | RealFusion


def init_domain_projector(d_domain: int, d_model: int,
                          rng: np.random.Generator) -> DomainProjector:
    hidden = d_model
    return DomainProjector(
        w1=Tensor(rng.standard_normal((d_domain, hidden)) / np.sqrt(d_domain),
                  requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(rng.standard_normal((hidden, d_model)) / np.sqrt(hidden),
                  requires_grad=True),
        b2=Tensor(np.zeros(d_model), requires_grad=True),
    )


def init_fusion_layer(quat_mode: str, d: int, rng: np.random.Generator) -> FusionLayer:
    if quat_mode == "hamilton":
        return init_quaternion_linear(d, d, rng)
    if quat_mode == "hadamard":
        s = 1.0 / np.sqrt(4.0)
        return QuaternionHadamard(*(Tensor(rng.uniform(-s, s, size=d), requires_grad=True)
                                    for _ in range(4)))
    if quat_mode == "off":
        return RealFusion(Tensor(rng.standard_normal((2 * d, 2 * d)) / np.sqrt(2 * d),
                                 requires_grad=True))
    raise ConfigError(f"quat_mode must be one of {QUAT_MODES}, got {quat_mode!r}")


def project_domain_features(tape: Tape, projector: DomainProjector, f_d) -> Tensor:
    """Mean-pool patch features, then the two-linear projection -> [d_model]."""
    f = f_d if isinstance(f_d, Tensor) else constant(np.asarray(f_d, dtype=np.float64))
    if f.data.ndim != 2 or f.data.shape[0] < 1:
        raise UsageError("domain features must be [n_patches, d_domain], n_patches >= 1")
    n = f.data.shape[0]
    pool = tape.matmul(constant(np.full((1, n), 1.0 / n)), f)
    h = tape.relu(tape.add(tape.matmul(pool, projector.w1), projector.b1))
    out = tape.add(tape.matmul(h, projector.w2), projector.b2)
    return tape.reshape(out, (projector.w2.shape[1],))


def sample_noise(tape: Tape, f_hat: Tensor, rng: np.random.Generator | None,
                 n_ctx: int, *, noise_mode: str = "language", training: bool = True,
                 scale: str = "scalar") -> Tensor:
    """Gaussian noise scaled by the mean of the projected domain features.

    Returns an exact zero tensor outside (training, noise_mode=language);
    the draw is fresh per call so each training step sees new noise.
    """
    d = f_hat.shape[-1]
    if noise_mode != "language" or not training or rng is None:
        return constant(np.zeros((n_ctx, d)))
    draw = constant(rng.standard_normal((n_ctx, d)))
    if scale == "scalar":
        return tape.mul(draw, tape.mean_all(f_hat))
    if scale == "per_dim":
        return tape.mul(draw, f_hat)
    raise ConfigError(f"noise scale must be 'scalar' or 'per_dim', got {scale!r}")


def _broadcast_rows(tape: Tape, vec: Tensor, n_rows: int) -> Tensor:
    """Repeat a [d] tensor across n_rows rows on the tape."""
    return tape.add(constant(np.zeros((n_rows, vec.shape[-1]))), vec)


def build_language_quaternion(tape: Tape, t_c: Tensor, f_hat: Tensor,
                              n_g: Tensor, *, eq9_literal: bool = False) -> QuaternionTensor:
    """Two-axis quaternion embedding of context and domain features.

    Default: real = t_c + noise, i = broadcast domain features, j = k = 0.
    eq9_literal collapses everything onto the real axis (r = f_hat + t_c
    + noise, i = 0) for comparison runs.
    """
    if t_c.shape[-1] != f_hat.shape[-1]:
        raise DimensionError(
            f"context width {t_c.shape[-1]} != domain width {f_hat.shape[-1]}")
    n_ctx = t_c.shape[0]
    zero = constant(np.zeros(t_c.shape))
    if eq9_literal:
        comp_r = tape.add(tape.add(t_c, n_g), _broadcast_rows(tape, f_hat, n_ctx))
        return QuaternionTensor(comp_r, zero, zero, zero)
    return QuaternionTensor(
        tape.add(t_c, n_g),
        _broadcast_rows(tape, f_hat, n_ctx),
        zero,
        zero,
    )


def fusion_real_output(tape: Tape, layer: FusionLayer, q: QuaternionTensor) -> Tensor:
    """Apply the fusion layer and relu split activation; return the real part.

    Downstream consumes only the real component, so the other output
    components are not materialized (they cannot influence it).
    """
    qr, qx, qy, qz = q.comp_r, q.comp_x, q.comp_y, q.comp_z
    if isinstance(layer, QuaternionLinear):
        out_r = tape.sub(
            tape.sub(
                tape.sub(tape.matmul(qr, layer.w_r, transpose_b=True),
                         tape.matmul(qx, layer.w_x, transpose_b=True)),
                tape.matmul(qy, layer.w_y, transpose_b=True)),
            tape.matmul(qz, layer.w_z, transpose_b=True))
        if layer.bias is not None:
            out_r = tape.add(out_r, constant(layer.bias.comp_r))
        return tape.relu(out_r)
    if isinstance(layer, QuaternionHadamard):
        out_r = tape.sub(
            tape.sub(tape.sub(tape.mul(qr, layer.w_r), tape.mul(qx, layer.w_x)),
                     tape.mul(qy, layer.w_y)),
            tape.mul(qz, layer.w_z))
        return tape.relu(out_r)
    if isinstance(layer, RealFusion):
        d = qr.shape[-1]
        h = tape.relu(tape.matmul(tape.concat([qr, qx], axis=-1), layer.w))
        return tape.slice(h, 0, d, axis=h.data.ndim - 1)
    raise ConfigError(f"unknown fusion layer type {type(layer).__name__}")


def domain_context(tape: Tape, q_t: FusionLayer, q_l: QuaternionTensor) -> Tensor:
    """Domain-specific context embedding [n_ctx, d_model]."""
    return fusion_real_output(tape, q_t, q_l)


def vision_prompt(tape: Tape, q_v_i: FusionLayer, p_l_i: Tensor, f_hat: Tensor, *,
                  eq9_literal: bool = False, noise: Tensor | None = None) -> Tensor:
    """One vision prompt set [n_p, d_model] from a language prompt set.

    noise is None outside the explicit vision-noise ablation; the default
    path is fully deterministic.
    """
    n_p = p_l_i.shape[0]
    r = p_l_i if noise is None else tape.add(p_l_i, noise)
    zero = constant(np.zeros((n_p, f_hat.shape[-1])))
    if eq9_literal:
        comp_r = tape.add(r, _broadcast_rows(tape, f_hat, n_p))
        q = QuaternionTensor(comp_r, zero, zero, zero)
    else:
        q = QuaternionTensor(r, _broadcast_rows(tape, f_hat, n_p), zero, zero)
    return fusion_real_output(tape, q_v_i, q)


@dataclass
class PromptState:
    """Every trainable parameter of the prompt-learning pipeline."""

    t_c: Tensor                 # [n_ctx, d_model] learnable context
    p_l: list[Tensor]           # k x [n_p, d_model] language prompts
    q_t: FusionLayer            # language fusion
    q_v: list[FusionLayer]      # k vision fusions
    projector: DomainProjector
    noise_mode: str = "language"

    def __post_init__(self):
        if len(self.p_l) != len(self.q_v):
            raise UsageError("need one vision fusion layer per language prompt set")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}")

    @property
    def k(self) -> int:
        return len(self.p_l)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params: list[tuple[str, Tensor]] = [("t_c", self.t_c)]
        for i, p in enumerate(self.p_l):
            params.append((f"p_l/{i}", p))
        for name, w in self.q_t.named_weights():
            params.append((f"q_t/{name}", w))
        for i, lay in enumerate(self.q_v):
            for name, w in lay.named_weights():
                params.append((f"q_v/{i}/{name}", w))
        for name, w in self.projector.named_parameters():
            params.append((f"projector/{name}", w))
        return params

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def init_prompt_state(*, n_ctx: int, n_p: int, d_model: int, d_domain: int,
                      k: int, quat_mode: str = "hamilton",
                      noise_mode: str = "language", seed: int = 0) -> PromptState:
    """Seeded init of all trainable parameters; context starts near zero."""
    if k < 1:
        raise ConfigError("prompt depth k must be >= 1")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    t_c = Tensor(rng.standard_normal((n_ctx, d_model)) * 0.02, requires_grad=True)
    p_l = [Tensor(rng.standard_normal((n_p, d_model)) * 0.02, requires_grad=True)
           for _ in range(k)]
    q_t = init_fusion_layer(quat_mode, d_model, rng)
    q_v = [init_fusion_layer(quat_mode, d_model, rng) for _ in range(k)]
    projector = init_domain_projector(d_domain, d_model, rng)
    return PromptState(t_c=t_c, p_l=p_l, q_t=q_t, q_v=q_v,
                       projector=projector, noise_mode=noise_mode)

"""Frozen toy encoder stacks for the vision and language branches.

Each branch is a stack of identical-width blocks (single-head scaled
dot-product attention + two-matrix relu MLP, both residual). Weights are
deterministic functions of (seed, dims), carry requires_grad=False, and
never change; prompt tokens appended to the input sequence are the only
trainable influence.

Deep prompting discipline: layers 1..k each consume a fresh learnable
prompt set (the previous layer's prompt outputs are dropped), layers
k+1..m propagate prompt outputs as inputs.

Class text embeddings are vocabulary-free: a category name is hashed to a
seed, the seed draws a low-rank semantic code, and the code maps through
a shared basis into token space. Shared template tokens stand in for the
fixed prompt wording.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .grad import Tape, Tensor, constant

Array = np.ndarray

BRANCHES = ("vision", "language")
ROLES = ("class_token", "patch", "text", "prompt")

# Width of the per-class semantic code shared by the text-embedding
# convention and the synthetic dataset generator. Must stay below the
# base-class count of the default protocol so base classes span it.
LATENT_DIM = 5

# Number of template token positions standing in for the fixed wording,
# followed by one category-specific token.
N_TEMPLATE_TOKENS = 3
N_TEXT_TOKENS = N_TEMPLATE_TOKENS + 1

# Residual branches are damped so a deep stack without layernorm keeps
# token norms O(1).
_RESIDUAL_SCALE = 0.3


def class_latent(name: str) -> Array:
    """Deterministic low-rank semantic code for a category name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(LATENT_DIM)


@dataclass(frozen=True)
class FrozenLayer:
    """One frozen block; all weights [in, out] oriented, requires_grad=False."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_m1: Tensor
    w_m2: Tensor

    def tensors(self):
        return (self.w_q, self.w_k, self.w_v, self.w_o, self.w_m1, self.w_m2)


@dataclass(frozen=True)
class TokenSequence:
    """Token matrix [..., n_tokens, d_model] plus per-token role tags."""

    tokens: Tensor
    roles: tuple[str, ...]

    def __post_init__(self):
        if self.tokens.shape[-2] != len(self.roles):
            raise DimensionError("roles length must equal token count")
        for r in self.roles:
            if r not in ROLES:
                raise UsageError(f"unknown token role {r!r}")

    @property
    def n_tokens(self) -> int:
        return len(self.roles)


@dataclass(frozen=True)
class FrozenEncoder:
    """Immutable toy encoder; identical (seed, dims) give identical weights."""

    branch: str
    m: int
    d_model: int
    d_joint: int
    seed: int
    layers: tuple[FrozenLayer, ...]
    w_out: Tensor                       # [d_model, d_joint] pooled projection
    # vision-only extras
    d_domain: int | None = None
    w_in: Tensor | None = None          # [d_domain, d_model] patch projection
    class_token: Tensor | None = None   # [1, d_model]
    # language-only extras
    template_tokens: Array | None = None        # [N_TEMPLATE_TOKENS, d_model]
    latent_basis: Array | None = None           # [LATENT_DIM, d_model]

    def frozen_tensors(self):
        out = []
        for layer in self.layers:
            out.extend(layer.tensors())
        out.append(self.w_out)
        if self.w_in is not None:
            out.append(self.w_in)
        if self.class_token is not None:
            out.append(self.class_token)
        return out


def _frozen(arr: Array) -> Tensor:
    return Tensor(arr, requires_grad=False)


def _draw_layer(rng: np.random.Generator, d: int) -> FrozenLayer:
    s = 1.0 / np.sqrt(d)
    return FrozenLayer(
        w_q=_frozen(rng.standard_normal((d, d)) * s),
        w_k=_frozen(rng.standard_normal((d, d)) * s),
        w_v=_frozen(rng.standard_normal((d, d)) * s),
        w_o=_frozen(rng.standard_normal((d, d)) * s * _RESIDUAL_SCALE),
        w_m1=_frozen(rng.standard_normal((d, 2 * d)) * s),
        w_m2=_frozen(rng.standard_normal((2 * d, d)) * (1.0 / np.sqrt(2 * d)) * _RESIDUAL_SCALE),
    )


def init_frozen_encoder(branch: str, m: int, d_model: int, seed: int, *,
                        d_joint: int = 32, d_domain: int | None = None,
                        identity_layers: bool = False) -> FrozenEncoder:
    """Build a frozen encoder; d_model must be a multiple of 4.

    identity_layers zeroes every block (the residual then makes each layer
    the identity) while keeping projections and tokens; used by trace
    tests and diagnostics.
    """
    if branch not in BRANCHES:
        raise ConfigError(f"branch must be one of {BRANCHES}, got {branch!r}")
    if m < 1:
        raise ConfigError("encoder needs at least one layer")
    if d_model < 4 or d_model % 4 != 0:
        raise ConfigError(f"d_model must be a positive multiple of 4, got {d_model}")
    if d_joint < 1:
        raise ConfigError("d_joint must be positive")
    if branch == "vision" and (d_domain is None or d_domain < 1):
        raise ConfigError("vision encoder requires d_domain >= 1")

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    layers = tuple(_draw_layer(rng, d_model) for _ in range(m))
    if identity_layers:
        layers = tuple(
            FrozenLayer(*(_frozen(np.zeros_like(t.data)) for t in lay.tensors()))
            for lay in layers)
    w_out = _frozen(rng.standard_normal((d_model, d_joint)) / np.sqrt(d_model))

    if branch == "vision":
        w_in = _frozen(rng.standard_normal((d_domain, d_model)) / np.sqrt(d_domain))
        cls = _frozen(rng.standard_normal((1, d_model)) / np.sqrt(d_model))
        return FrozenEncoder(branch, m, d_model, d_joint, int(seed), layers,
                             w_out, d_domain=d_domain, w_in=w_in, class_token=cls)

    template = rng.standard_normal((N_TEMPLATE_TOKENS, d_model)) / np.sqrt(d_model)
    basis = rng.standard_normal((LATENT_DIM, d_model)) / np.sqrt(LATENT_DIM)
    return FrozenEncoder(branch, m, d_model, d_joint, int(seed), layers,
                         w_out, template_tokens=template, latent_basis=basis)


def class_text_embedding(enc: FrozenEncoder, name: str) -> Array:
    """Fixed text embedding for one category: template tokens + class token."""
    if enc.branch != "language":
        raise UsageError("text embeddings come from the language encoder")
    z = class_latent(name)
    vec = z @ enc.latent_basis
    vec = vec / np.linalg.norm(vec)
    return np.concatenate([enc.template_tokens, vec[None, :]], axis=0)


def text_embedding_bank(enc: FrozenEncoder, names) -> Array:
    """[n_classes, N_TEXT_TOKENS, d_model] stack of class text embeddings."""
    return np.stack([class_text_embedding(enc, n) for n in names], axis=0)


def layer_forward(tape: Tape, layer: FrozenLayer, x: Tensor) -> Tensor:
    """Residual attention + residual MLP on tokens [..., n, d_model]."""
    d = x.shape[-1]
    q = tape.matmul(x, layer.w_q)
    k = tape.matmul(x, layer.w_k)
    v = tape.matmul(x, layer.w_v)
    scores = tape.scale(tape.matmul(q, k, transpose_b=True), 1.0 / np.sqrt(d))
    mixed = tape.matmul(tape.softmax(scores), v)
    x = tape.add(x, tape.matmul(mixed, layer.w_o))
    h = tape.relu(tape.matmul(x, layer.w_m1))
    return tape.add(x, tape.matmul(h, layer.w_m2))


def _tile_rows(tape: Tape, t: Tensor, lead: int) -> Tensor:
    """Broadcast a [n, d] tensor to [lead, n, d] on the tape."""
    return tape.add(constant(np.zeros((lead,) + t.shape)), t)


def _prompted_stack(tape: Tape, enc: FrozenEncoder, content: Tensor,
                    prompts, k: int) -> Tensor:
    """Run the stack with replace-then-propagate prompt bookkeeping.

    content: [..., n_content, d]; prompts: list of k tensors [n_p, d].
    Returns the content-token outputs of the last layer.
    """
    if k < 0 or k > enc.m:
        raise UsageError(f"prompt depth k={k} outside 1..m={enc.m}")
    if len(prompts) != k:
        raise UsageError(f"got {len(prompts)} prompt sets for depth k={k}")
    if k == 0:
        x = content
        for layer in enc.layers:
            x = layer_forward(tape, layer, x)
        return x

    n_content = content.shape[-2]
    batched = content.data.ndim == 3

    def lift(p: Tensor) -> Tensor:
        if batched and p.data.ndim == 2:
            return _tile_rows(tape, p, content.shape[0])
        return p

    x, p = content, lift(prompts[0])
    for i, layer in enumerate(enc.layers, start=1):
        full = tape.concat([x, p], axis=-2)
        out = layer_forward(tape, layer, full)
        x = tape.slice(out, 0, n_content, axis=out.data.ndim - 2)
        if i < k:
            # discard this layer's prompt outputs, swap in the next learnables
            p = lift(prompts[i])
        else:
            p = tape.slice(out, n_content, full.shape[-2], axis=out.data.ndim - 2)
    return x


def _pool_index(roles: tuple[str, ...], role: str) -> int:
    for i in range(len(roles) - 1, -1, -1):
        if roles[i] == role:
            return i
    raise UsageError(f"no token with role {role!r}")


def language_forward(tape: Tape, enc: FrozenEncoder, w1: TokenSequence,
                     prompts, k: int) -> Tensor:
    """Per-class pooled text embedding(s) in joint space.

    w1.tokens is [n, d_model] or [C, n, d_model] for C classes at once;
    pooling takes the last text-role token, then the frozen projection.
    """
    if enc.branch != "language":
        raise UsageError("language_forward needs the language branch")
    out = _prompted_stack(tape, enc, w1.tokens, prompts, k)
    idx = _pool_index(w1.roles, "text")
    pooled = tape.slice(out, idx, idx + 1, axis=out.data.ndim - 2)
    return tape.matmul(pooled, enc.w_out)


def make_vision_tokens(tape: Tape, enc: FrozenEncoder, patches: Array) -> TokenSequence:
    """Project raw patch features and append the class token."""
    if enc.branch != "vision":
        raise UsageError("make_vision_tokens needs the vision branch")
    p = np.asarray(patches, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise UsageError("patches must be [n_patches, d_domain] with n_patches >= 1")
    if p.shape[1] != enc.d_domain:
        raise DimensionError(f"patches width {p.shape[1]} != d_domain {enc.d_domain}")
    emb = tape.matmul(constant(p), enc.w_in)
    toks = tape.concat([emb, enc.class_token], axis=0)
    roles = ("patch",) * p.shape[0] + ("class_token",)
    return TokenSequence(toks, roles)


def vision_forward(tape: Tape, enc: FrozenEncoder, e1: TokenSequence,
                   vision_prompts, k: int) -> Tensor:
    """Final class-token embedding in joint space."""
    if enc.branch != "vision":
        raise UsageError("vision_forward needs the vision branch")
    out = _prompted_stack(tape, enc, e1.tokens, vision_prompts, k)
    idx = _pool_index(e1.roles, "class_token")
    pooled = tape.slice(out, idx, idx + 1, axis=out.data.ndim - 2)
    return tape.matmul(pooled, enc.w_out)


def frozen_checksum(*encoders: FrozenEncoder) -> str:
    """SHA-256 over every frozen weight buffer, in a fixed order."""
    h = hashlib.sha256()
    for enc in encoders:
        for t in enc.frozen_tensors():
            h.update(np.ascontiguousarray(t.data).tobytes())
        if enc.template_tokens is not None:
            h.update(np.ascontiguousarray(enc.template_tokens).tobytes())
        if enc.latent_basis is not None:
            h.update(np.ascontiguousarray(enc.latent_basis).tobytes())
    return h.hexdigest()

"""Forward orchestration: adapter fusion + both frozen branches -> logits.

The per-sample pass is image-conditional on both sides: the projected
domain features steer the language context (so every class embedding is
recomputed per sample) and generate the vision prompts. branch_mode
selects which branch receives deep prompts; the context/text concatenation
always feeds the language branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter, encoders
from .adapter import PromptState
from .encoders import FrozenEncoder, TokenSequence
from .errors import ConfigError, DimensionError
from .grad import Tape, Tensor, constant

Array = np.ndarray

BRANCH_MODES = ("PL", "PV", "PL+PV")


@dataclass
class Pipeline:
    """Frozen encoders plus the trainable prompt state."""

    lang: FrozenEncoder
    vis: FrozenEncoder
    prompts: PromptState
    tau: float = 0.01
    branch_mode: str = "PL+PV"
    eq9_literal: bool = False
    noise_scale: str = "scalar"

    def __post_init__(self):
        if self.branch_mode not in BRANCH_MODES:
            raise ConfigError(f"branch_mode must be one of {BRANCH_MODES}")
        if self.tau <= 0:
            raise ConfigError("temperature tau must be > 0")
        if self.lang.d_model != self.vis.d_model or self.lang.d_joint != self.vis.d_joint:
            raise DimensionError("branch widths disagree")

    @property
    def k(self) -> int:
        return self.prompts.k


@dataclass
class ForwardOut:
    logits: Tensor        # [1, C] cosine similarities / tau
    image_embedding: Tensor  # [1, d_joint]
    class_embeddings: Tensor  # [C, d_joint]


def language_tokens(tape: Tape, pipe: Pipeline, t_d: Tensor,
                    text_bank: Array) -> TokenSequence:
    """[C, n_ctx + n_text, d_model] sequences: shared context, per-class text."""
    n_classes = text_bank.shape[0]
    tiled = tape.add(constant(np.zeros((n_classes,) + t_d.shape)), t_d)
    toks = tape.concat([tiled, constant(text_bank)], axis=-2)
    roles = ("text",) * t_d.shape[0] + ("text",) * text_bank.shape[1]
    return TokenSequence(toks, roles)


def forward_sample(tape: Tape, pipe: Pipeline, patches: Array, text_bank: Array, *,
                   training: bool = False,
                   noise_rng: np.random.Generator | None = None) -> ForwardOut:
    """Score one image against every class in the bank."""
    st = pipe.prompts
    f_hat = adapter.project_domain_features(tape, st.projector, patches)
    n_g = adapter.sample_noise(tape, f_hat, noise_rng, st.t_c.shape[0],
                               noise_mode=st.noise_mode, training=training,
                               scale=pipe.noise_scale)
    q_l = adapter.build_language_quaternion(tape, st.t_c, f_hat, n_g,
                                            eq9_literal=pipe.eq9_literal)
    t_d = adapter.domain_context(tape, st.q_t, q_l)

    # language branch
    w1 = language_tokens(tape, pipe, t_d, text_bank)
    if "PL" in pipe.branch_mode:
        lang_prompts, k_lang = st.p_l, st.k
    else:
        lang_prompts, k_lang = [], 0
    w_m = encoders.language_forward(tape, pipe.lang, w1, lang_prompts, k_lang)
    w_m = tape.reshape(w_m, (text_bank.shape[0], pipe.lang.d_joint))

    # vision branch
    e1 = encoders.make_vision_tokens(tape, pipe.vis, patches)
    if "PV" in pipe.branch_mode:
        vision_noise_on = (st.noise_mode == "vision" and training
                           and noise_rng is not None)
        p_v = []
        for i in range(st.k):
            vb_noise = None
            if vision_noise_on:
                vb_noise = adapter.sample_noise(
                    tape, f_hat, noise_rng, st.p_l[i].shape[0],
                    noise_mode="language", training=True, scale=pipe.noise_scale)
            p_v.append(adapter.vision_prompt(tape, st.q_v[i], st.p_l[i], f_hat,
                                             eq9_literal=pipe.eq9_literal,
                                             noise=vb_noise))
        k_vis = st.k
    else:
        p_v, k_vis = [], 0
    e_m = encoders.vision_forward(tape, pipe.vis, e1, p_v, k_vis)
    e_m = tape.reshape(e_m, (1, pipe.vis.d_joint))

    # contrastive logits: cosine similarity / tau
    e_n = tape.l2_normalize(e_m)
    w_n = tape.l2_normalize(w_m)
    logits = tape.scale(tape.matmul(e_n, w_n, transpose_b=True), 1.0 / pipe.tau)
    return ForwardOut(logits=logits, image_embedding=e_m, class_embeddings=w_m)

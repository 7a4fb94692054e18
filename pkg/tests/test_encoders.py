import numpy as np
import pytest

import dple.encoders as enc
from dple.encoders import (FrozenEncoder, FrozenLayer, TokenSequence,
                           class_text_embedding, frozen_checksum,
                           init_frozen_encoder, language_forward, layer_forward,
                           make_vision_tokens, vision_forward)
from dple.errors import ConfigError, UsageError
from dple.grad import Tape, Tensor, constant, tensor

RNG = np.random.default_rng(5)


def test_init_is_deterministic_bitwise():
    a = init_frozen_encoder("language", 12, 64, 7)
    b = init_frozen_encoder("language", 12, 64, 7)
    for ta, tb in zip(a.frozen_tensors(), b.frozen_tensors()):
        assert ta.data.tobytes() == tb.data.tobytes()


def test_single_layer_encoder():
    e = init_frozen_encoder("language", 1, 8, 3)
    assert len(e.layers) == 1


def test_d_model_not_multiple_of_4_rejected():
    with pytest.raises(ConfigError):
        init_frozen_encoder("language", 2, 30, 0)


def test_vision_requires_d_domain():
    with pytest.raises(ConfigError):
        init_frozen_encoder("vision", 2, 8, 0)


def test_unknown_branch_rejected():
    with pytest.raises(ConfigError):
        init_frozen_encoder("audio", 2, 8, 0)


def test_layer_preserves_shape_for_any_token_count():
    e = init_frozen_encoder("language", 1, 8, 3)
    for n in (1, 2, 7):
        x = tensor(RNG.normal(size=(n, 8)))
        out = layer_forward(Tape(), e.layers[0], x)
        assert out.shape == (n, 8)


def test_frozen_weights_require_no_grad():
    e = init_frozen_encoder("vision", 2, 8, 1, d_domain=6)
    assert all(not t.requires_grad for t in e.frozen_tensors())


def _identity_language(m, d_model=8, d_joint=4, seed=0):
    return init_frozen_encoder("language", m, d_model, seed, d_joint=d_joint,
                               identity_layers=True)


def test_identity_layers_pass_tokens_through():
    e = _identity_language(3)
    x = tensor(RNG.normal(size=(5, 8)))
    out = layer_forward(Tape(), e.layers[0], x)
    assert np.allclose(out.data, x.data)


def test_language_forward_identity_k1_np0_pools_w1():
    e = _identity_language(4)
    w1_tokens = RNG.normal(size=(3, 8))
    w1 = TokenSequence(tensor(w1_tokens), ("text", "text", "text"))
    prompts = [constant(np.zeros((0, 8)))]
    out = language_forward(Tape(), e, w1, prompts, k=1)
    expect = w1_tokens[-1:] @ e.w_out.data
    assert np.allclose(out.data, expect, atol=1e-12)


def test_language_forward_prompt_count_must_match_k():
    e = _identity_language(4)
    w1 = TokenSequence(tensor(RNG.normal(size=(2, 8))), ("text", "text"))
    with pytest.raises(UsageError):
        language_forward(Tape(), e, w1, [constant(np.zeros((1, 8)))], k=2)


def _crafted_two_layer_encoder(boost=0.5):
    """Layer 1: x + boost*relu(x) (no attention). Layer 2: x + mean(tokens)."""
    d = 4
    zeros = lambda shape: Tensor(np.zeros(shape))
    w_m1 = np.zeros((d, 2 * d)); w_m1[:, :d] = np.eye(d)
    w_m2 = np.zeros((2 * d, d)); w_m2[:d, :] = boost * np.eye(d)
    layer1 = FrozenLayer(zeros((d, d)), zeros((d, d)), zeros((d, d)), zeros((d, d)),
                         Tensor(w_m1), Tensor(w_m2))
    layer2 = FrozenLayer(zeros((d, d)), zeros((d, d)), Tensor(np.eye(d)),
                         Tensor(np.eye(d)), zeros((d, 2 * d)), zeros((2 * d, d)))
    w_out = np.zeros((d, 2)); w_out[0, 0] = 1.0; w_out[1, 1] = 1.0
    return FrozenEncoder("language", 2, d, 2, 0, (layer1, layer2), Tensor(w_out),
                         template_tokens=np.zeros((3, d)),
                         latent_basis=np.zeros((enc.LATENT_DIM, d))), boost


def test_layer2_prompt_inputs_are_layer1_prompt_outputs():
    e, boost = _crafted_two_layer_encoder()
    content = np.abs(RNG.normal(size=(2, 4))) + 0.5
    prompt = np.ones((1, 4))
    w1 = TokenSequence(tensor(content), ("text", "text"))
    out = language_forward(Tape(), e, w1, [tensor(prompt)], k=1)

    # manual trace: layer 1 scales positives by (1+boost), including prompts;
    # layer 2 adds the token mean of [content', prompt'] to every token
    c1 = (1 + boost) * content
    p1 = (1 + boost) * prompt           # propagated output, not the learnable
    mean_tok = np.concatenate([c1, p1], axis=0).mean(axis=0, keepdims=True)
    pooled = (c1[-1:] + mean_tok) @ e.w_out.data
    assert np.allclose(out.data, pooled, atol=1e-12)

    # the wrong bookkeeping (re-feeding the learnable prompt) would differ
    wrong_mean = np.concatenate([c1, prompt], axis=0).mean(axis=0, keepdims=True)
    wrong = (c1[-1:] + wrong_mean) @ e.w_out.data
    assert not np.allclose(out.data, wrong)


def test_discarded_prompt_outputs_do_not_leak():
    # with k=2, layer 1 prompt outputs are dropped; layer 1 has no attention,
    # so varying the first learnable prompt set cannot move any output
    e, _ = _crafted_two_layer_encoder()
    content = np.abs(RNG.normal(size=(2, 4))) + 0.5
    w1 = TokenSequence(tensor(content), ("text", "text"))
    p2 = tensor(np.full((1, 4), 2.0))
    out_a = language_forward(Tape(), e, w1, [tensor(np.ones((1, 4))), p2], k=2)
    out_b = language_forward(Tape(), e, w1, [tensor(np.full((1, 4), 9.0)), p2], k=2)
    assert np.array_equal(out_a.data, out_b.data)


def test_prompt_depth_sensitivity():
    e = init_frozen_encoder("language", 3, 8, 11, d_joint=4)
    w1 = TokenSequence(tensor(RNG.normal(size=(3, 8))), ("text",) * 3)
    prompts = [tensor(RNG.normal(size=(2, 8))) for _ in range(3)]
    bumped = [prompts[0], tensor(prompts[1].data + 0.5), prompts[2]]

    deep_a = language_forward(Tape(), e, w1, prompts, k=3)
    deep_b = language_forward(Tape(), e, w1, bumped, k=3)
    assert not np.allclose(deep_a.data, deep_b.data)

    shallow_a = language_forward(Tape(), e, w1, prompts[:1], k=1)
    shallow_b = language_forward(Tape(), e, w1, bumped[:1], k=1)
    assert np.array_equal(shallow_a.data, shallow_b.data)


def test_token_count_constant_through_stack(monkeypatch):
    e = init_frozen_encoder("language", 4, 8, 2, d_joint=4)
    seen = []
    original = enc.layer_forward

    def spy(tape, layer, x):
        seen.append(x.shape[-2])
        return original(tape, layer, x)

    monkeypatch.setattr(enc, "layer_forward", spy)
    w1 = TokenSequence(tensor(RNG.normal(size=(3, 8))), ("text",) * 3)
    prompts = [tensor(RNG.normal(size=(2, 8))) for _ in range(2)]
    language_forward(Tape(), e, w1, prompts, k=2)
    assert seen == [5, 5, 5, 5]


def test_vision_identity_zero_prompts_projects_class_token():
    e = init_frozen_encoder("vision", 3, 8, 4, d_joint=4, d_domain=6,
                            identity_layers=True)
    patches = RNG.normal(size=(5, 6))
    t = Tape()
    e1 = make_vision_tokens(t, e, patches)
    out = vision_forward(t, e, e1, [], k=0)
    expect = e.class_token.data @ e.w_out.data
    assert np.allclose(out.data, expect, atol=1e-12)


def test_vision_forward_deterministic_bitwise():
    e = init_frozen_encoder("vision", 3, 8, 4, d_joint=4, d_domain=6)
    patches = RNG.normal(size=(4, 6))
    outs = []
    for _ in range(2):
        t = Tape()
        e1 = make_vision_tokens(t, e, patches)
        outs.append(vision_forward(t, e, e1, [], k=0).data.tobytes())
    assert outs[0] == outs[1]


def test_vision_patch_width_checked():
    e = init_frozen_encoder("vision", 2, 8, 4, d_joint=4, d_domain=6)
    with pytest.raises(Exception):
        make_vision_tokens(Tape(), e, RNG.normal(size=(4, 5)))


def test_class_text_embedding_deterministic_and_shaped():
    e = init_frozen_encoder("language", 2, 16, 9, d_joint=4)
    a = class_text_embedding(e, "runway")
    b = class_text_embedding(e, "runway")
    c = class_text_embedding(e, "beach")
    assert a.shape == (enc.N_TEXT_TOKENS, 16)
    assert np.array_equal(a, b)
    assert not np.allclose(a[-1], c[-1])
    assert np.array_equal(a[:-1], c[:-1])  # shared template tokens


def test_checksum_tracks_weight_changes():
    e = init_frozen_encoder("language", 2, 8, 4, d_joint=4)
    before = frozen_checksum(e)
    assert before == frozen_checksum(e)
    e.layers[0].w_q.data[0, 0] += 1.0
    assert frozen_checksum(e) != before
    e.layers[0].w_q.data[0, 0] -= 1.0
    assert frozen_checksum(e) == before


def test_roles_length_enforced():
    with pytest.raises(Exception):
        TokenSequence(tensor(RNG.normal(size=(3, 8))), ("text", "text"))

import dataclasses

import numpy as np
import pytest

from prodlm.model import (
    AllMasked, IndexOutOfRange, InvalidArguments, InvalidConfig,
    LengthMismatch, ModelConfig, Parameters, SequenceTooLong, backward,
    expand_embeddings, forward, grad_check, init_params, loss_and_grads,
    max_rel_error, numeric_grads, param_names, sft_loss,
)

TINY = ModelConfig(n_layers=2, n_heads=2, d_model=16, d_ff=24,
                   context_len=16, vocab_size=12, seed=0)


def _rand_batch(config, b, t, seed=0):
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, config.vocab_size, size=(b, t))
    targets = rng.integers(0, config.vocab_size, size=(b, t))
    mask = np.ones((b, t))
    return tokens, targets, mask


def test_config_validation():
    with pytest.raises(InvalidConfig):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(InvalidConfig):
        ModelConfig(vocab_size=4)
    with pytest.raises(InvalidConfig):
        ModelConfig(n_layers=0)


def test_param_count_closed_form():
    cfg = TINY
    params = init_params(cfg)
    d, f, L = cfg.d_model, cfg.d_ff, cfg.n_layers
    per_layer = 2 * d + 4 * d * d + 2 * d + d * f + f + f * d + d
    want = cfg.vocab_size * d + cfg.context_len * d + L * per_layer + 2 * d
    assert params.n_params() == want
    assert param_names(cfg) == list(params.tensors)


def test_init_deterministic_and_shaped():
    a = init_params(TINY)
    b = init_params(TINY)
    for name in a.tensors:
        assert np.array_equal(a[name], b[name])
    c = init_params(dataclasses.replace(TINY, seed=1))
    assert not np.array_equal(a["tok_emb"], c["tok_emb"])
    assert np.all(a["ln_f.g"] == 1.0)
    assert np.all(a["layers.0.ln1.b"] == 0.0)
    assert np.all(a["layers.0.ff.b1"] == 0.0)
    a.validate()


def test_validate_catches_corruption():
    params = init_params(TINY)
    params.tensors["tok_emb"][0, 0] = np.nan
    with pytest.raises(InvalidConfig):
        params.validate()


def test_expansion_rows_and_noise():
    params = init_params(TINY)
    grown = expand_embeddings(params, 3, 0.0, seed=9)
    assert grown.config.vocab_size == TINY.vocab_size + 3
    old = params["tok_emb"]
    assert np.array_equal(grown["tok_emb"][:TINY.vocab_size], old)
    mean = old.mean(axis=0)
    for r in range(3):  # zero noise: new rows are exactly the column mean
        assert np.array_equal(grown["tok_emb"][TINY.vocab_size + r], mean)
    noisy = expand_embeddings(params, 3, 0.02, seed=9)
    assert not np.array_equal(noisy["tok_emb"][TINY.vocab_size:],
                              grown["tok_emb"][TINY.vocab_size:])
    # input object untouched
    assert np.array_equal(params["tok_emb"], old)
    with pytest.raises(InvalidArguments):
        expand_embeddings(params, 0, 0.02, seed=9)
    with pytest.raises(InvalidArguments):
        expand_embeddings(params, 1, -0.1, seed=9)


def test_expansion_keeps_old_logits_bit_identical():
    params = init_params(TINY)
    grown = expand_embeddings(params, 4, 0.02, seed=3)
    tokens = [1, 5, 2, 7, 0]
    base = forward(params, TINY, tokens)
    wide = forward(grown, grown.config, tokens)
    assert wide.shape == (len(tokens), TINY.vocab_size + 4)
    assert np.array_equal(wide[:, :TINY.vocab_size], base)


def test_forward_shape_and_determinism():
    params = init_params(TINY)
    tokens = [1, 5, 2, 7]
    a = forward(params, TINY, tokens)
    b = forward(params, TINY, tokens)
    assert a.shape == (4, TINY.vocab_size)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_forward_is_causal():
    params = init_params(TINY)
    head = [1, 5, 2, 7]
    full = forward(params, TINY, head + [3, 4])
    prefix = forward(params, TINY, head)
    np.testing.assert_allclose(full[:4], prefix, rtol=0, atol=1e-12)


def test_forward_rejects_bad_input():
    params = init_params(TINY)
    with pytest.raises(SequenceTooLong):
        forward(params, TINY, list(range(2)) * TINY.context_len)
    with pytest.raises(SequenceTooLong):
        forward(params, TINY, [])
    with pytest.raises(IndexOutOfRange):
        forward(params, TINY, [0, TINY.vocab_size])


def test_uniform_logits_loss_is_log_vocab():
    v, t = 11, 6
    logits = np.ones((t, v)) * 3.7  # any constant row is a uniform softmax
    targets = np.zeros(t, dtype=int)
    mask = np.ones(t)
    assert sft_loss(logits, targets, mask) == pytest.approx(np.log(v), abs=1e-12)


def test_peaked_logits_loss_near_zero():
    v, t = 11, 4
    logits = np.full((t, v), -50.0)
    targets = np.arange(t) % v
    logits[np.arange(t), targets] = 50.0
    assert sft_loss(logits, targets, np.ones(t)) < 1e-12


def test_sft_loss_masking():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 9))
    targets = rng.integers(0, 9, size=6)
    mask = np.array([1, 1, 0, 0, 0, 0.0])
    # masked positions must not affect the loss
    crazy = logits.copy()
    crazy[2:] = 1e6
    assert sft_loss(logits, targets, mask) == \
        pytest.approx(sft_loss(crazy, targets, mask), rel=1e-12)
    with pytest.raises(AllMasked):
        sft_loss(logits, targets, np.zeros(6))
    with pytest.raises(LengthMismatch):
        sft_loss(logits, targets[:-1], mask[:-1])
    with pytest.raises(IndexOutOfRange):
        sft_loss(logits, targets + 9, mask)


def test_loss_duplication_invariant():
    params = init_params(TINY)
    tokens, targets, mask = _rand_batch(TINY, 2, 8, seed=4)
    mask[0, :3] = 0
    loss1, grads1 = loss_and_grads(params, TINY, tokens, targets, mask)
    dup = (np.concatenate([tokens, tokens]), np.concatenate([targets, targets]),
           np.concatenate([mask, mask]))
    loss2, grads2 = loss_and_grads(params, TINY, *dup)
    assert loss2 == pytest.approx(loss1, rel=1e-12)
    for name in grads1:
        np.testing.assert_allclose(grads2[name], grads1[name],
                                   rtol=1e-10, atol=1e-14)


def test_positional_grads_truncated_to_length():
    params = init_params(TINY)
    tokens = np.array([[1, 2, 3, 4]])
    targets = np.array([[2, 3, 4, 5]])
    mask = np.ones((1, 4))
    _, grads = loss_and_grads(params, TINY, tokens, targets, mask)
    assert np.all(grads["pos_emb"][4:] == 0.0)
    assert np.any(grads["pos_emb"][:4] != 0.0)


def test_trailing_masked_fill_is_inert():
    # what sits in trailing masked positions cannot change loss or grads:
    # causality keeps it out of earlier logits and the mask zeroes its own
    params = init_params(TINY)
    tokens = np.array([[1, 2, 3, 0, 0]])
    targets = np.array([[2, 3, 4, 0, 0]])
    mask = np.array([[1, 1, 1, 0, 0.0]])
    alt = tokens.copy()
    alt[0, 3:] = 9  # different trailing fill
    loss_a, grads_a = loss_and_grads(params, TINY, tokens, targets, mask)
    loss_b, grads_b = loss_and_grads(params, TINY, alt, targets, mask)
    assert loss_a == loss_b
    for name in grads_a:
        np.testing.assert_allclose(grads_a[name], grads_b[name],
                                   rtol=0, atol=1e-15)


def test_backward_single_sequence_wrapper():
    params = init_params(TINY)
    tokens, targets, mask = (np.array([1, 2, 3]), np.array([2, 3, 4]),
                             np.ones(3))
    grads = backward(params, TINY, tokens, targets, mask)
    _, batch_grads = loss_and_grads(params, TINY, tokens[None], targets[None],
                                    mask[None])
    for name in grads:
        np.testing.assert_array_equal(grads[name], batch_grads[name])


def test_max_rel_error():
    a = np.array([1.0, 0.0])
    assert max_rel_error(a, a) == 0.0
    assert max_rel_error(np.array([1.0]), np.array([1.1])) == \
        pytest.approx(0.1 / 1.1)
    # tiny absolute differences are damped by the 1e-8 floor
    assert max_rel_error(np.array([0.0]), np.array([1e-12])) == \
        pytest.approx(1e-4)


def test_numeric_grads_match_analytic_tiny():
    cfg = ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=12,
                      context_len=8, vocab_size=9, seed=2)
    params = init_params(cfg)
    rng = np.random.default_rng(1)
    tokens = rng.integers(0, cfg.vocab_size, size=(2, 5))
    targets = rng.integers(0, cfg.vocab_size, size=(2, 5))
    mask = np.ones((2, 5))
    mask[0, :2] = 0
    _, analytic = loss_and_grads(params, cfg, tokens, targets, mask)
    numeric = numeric_grads(params, cfg, tokens, targets, mask, epsilon=1e-5)
    worst = max(max_rel_error(analytic[n], numeric[n]) for n in analytic)
    assert worst < 1e-4


def test_numeric_grads_catch_a_planted_bug():
    # corrupting one analytic gradient entry must push the error above
    # threshold; guards the oracle itself against vacuous passes
    cfg = ModelConfig(n_layers=1, n_heads=1, d_model=6, d_ff=8,
                      context_len=6, vocab_size=7, seed=3)
    params = init_params(cfg)
    tokens = np.array([[1, 2, 3]])
    targets = np.array([[2, 3, 4]])
    mask = np.ones((1, 3))
    _, analytic = loss_and_grads(params, cfg, tokens, targets, mask)
    numeric = numeric_grads(params, cfg, tokens, targets, mask)
    analytic["layers.0.attn.wq"][0, 0] += 1e-2
    worst = max(max_rel_error(analytic[n], numeric[n]) for n in analytic)
    assert worst > 1e-4


def test_grad_check_both_epsilons():
    cfg = ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=12,
                      context_len=8, vocab_size=9, seed=0)
    assert grad_check(cfg, seed=0, epsilon=1e-5) < 1e-4
    assert grad_check(cfg, seed=0, epsilon=1e-4) < 1e-4

"""Bidirectional LSTM language model, layer mixing, and the binary
context-file container."""

import dataclasses

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import trolldet.autodiff as ad
from trolldet.context_embed import (
    BiLmTrainConfig,
    ContextFormatError,
    ContextualLayers,
    LayerMixWeights,
    LstmCellParams,
    corpus_perplexity,
    init_bilm,
    init_lstm,
    load_precomputed,
    lstm_step,
    mix_layers,
    pad_contextual,
    run_bilm,
    save_precomputed,
    train_bilm,
)
from trolldet.corpus import Document, build_vocabulary, encode_all


def zero_cell(d_in, hidden):
    zw = np.zeros((hidden, d_in))
    zu = np.zeros((hidden, hidden))
    zb = np.zeros(hidden)
    return LstmCellParams(
        w_i=zw.copy(), u_i=zu.copy(), b_i=zb.copy(),
        w_f=zw.copy(), u_f=zu.copy(), b_f=zb.copy(),
        w_o=zw.copy(), u_o=zu.copy(), b_o=zb.copy(),
        w_g=zw.copy(), u_g=zu.copy(), b_g=zb.copy(),
    )


def reference_lstm_step(cell, x, h, c):
    """Direct numpy transcription of the gate equations."""
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    i = sig(cell.w_i @ x + cell.u_i @ h + cell.b_i)
    f = sig(cell.w_f @ x + cell.u_f @ h + cell.b_f)
    o = sig(cell.w_o @ x + cell.u_o @ h + cell.b_o)
    g = np.tanh(cell.w_g @ x + cell.u_g @ h + cell.b_g)
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


# ------------------------------------------------------------- lstm step


def test_lstm_step_zero_weights_zero_state():
    cell = zero_cell(2, 3)
    h, c = lstm_step(cell, np.array([5.0, -1.0]), np.zeros(3), np.zeros(3))
    npt.assert_array_equal(ad.value(h), np.zeros(3))
    npt.assert_array_equal(ad.value(c), np.zeros(3))


def test_lstm_step_saturated_gates_pass_cell_through():
    cell = zero_cell(1, 1)
    cell.b_i[:] = 50.0
    cell.b_f[:] = 50.0
    cell.b_o[:] = 50.0
    h, c = lstm_step(cell, np.array([0.0]), np.zeros(1), np.ones(1))
    npt.assert_allclose(ad.value(c), [1.0], atol=1e-6)
    npt.assert_allclose(ad.value(h), [np.tanh(1.0)], atol=1e-6)


def test_lstm_step_closed_gates_erase_cell():
    cell = zero_cell(1, 1)
    cell.b_f[:] = -50.0
    cell.b_i[:] = -50.0
    _, c = lstm_step(cell, np.array([3.0]), np.zeros(1), np.array([7.0]))
    npt.assert_allclose(ad.value(c), [0.0], atol=1e-6)


def test_lstm_step_matches_reference_on_random_params():
    rng = np.random.default_rng(8)
    cell = init_lstm(3, 4, rng)
    x, h, c = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
    got_h, got_c = lstm_step(cell, x, h, c)
    want_h, want_c = reference_lstm_step(cell, x, h, c)
    npt.assert_allclose(ad.value(got_h), want_h, atol=1e-12)
    npt.assert_allclose(ad.value(got_c), want_c, atol=1e-12)


# --------------------------------------------------------------- run_bilm


def test_run_bilm_zero_valid_length_is_all_zero():
    rng = np.random.default_rng(0)
    params = init_bilm(6, 3, rng)
    out = run_bilm(params, np.zeros(4, dtype=np.intp), valid_length=0)
    npt.assert_array_equal(out.layers, np.zeros_like(out.layers))


def test_run_bilm_layer0_duplicates_embedding():
    rng = np.random.default_rng(1)
    params = init_bilm(6, 3, rng)
    ids = np.array([2, 4], dtype=np.intp)
    out = run_bilm(params, ids, valid_length=2)
    emb = params.embedding[ids]
    npt.assert_allclose(out.layers[0, :2, :3], emb, atol=1e-12)
    npt.assert_allclose(out.layers[0, :2, 3:], emb, atol=1e-12)


def test_run_bilm_zero_cells_give_zero_layer1():
    rng = np.random.default_rng(2)
    params = init_bilm(6, 2, rng)
    params = dataclasses.replace(params, forward_cell=zero_cell(2, 2), backward_cell=zero_cell(2, 2))
    out = run_bilm(params, np.array([3], dtype=np.intp), valid_length=1)
    npt.assert_array_equal(out.layers[1], np.zeros_like(out.layers[1]))


def test_run_bilm_hand_trace_three_tokens():
    rng = np.random.default_rng(3)
    params = init_bilm(8, 1, rng)
    ids = np.array([2, 5, 7], dtype=np.intp)
    out = run_bilm(params, ids, valid_length=3)

    emb = params.embedding[ids]
    h = np.zeros(1)
    c = np.zeros(1)
    fwd = []
    for t in range(3):
        h, c = reference_lstm_step(params.forward_cell, emb[t], h, c)
        fwd.append(h.copy())
    h = np.zeros(1)
    c = np.zeros(1)
    bwd = [None] * 3
    for t in (2, 1, 0):
        h, c = reference_lstm_step(params.backward_cell, emb[t], h, c)
        bwd[t] = h.copy()
    for t in range(3):
        npt.assert_allclose(out.layers[1, t, 0], fwd[t][0], atol=1e-12)
        npt.assert_allclose(out.layers[1, t, 1], bwd[t][0], atol=1e-12)


def test_run_bilm_padding_does_not_change_valid_positions():
    rng = np.random.default_rng(4)
    params = init_bilm(9, 3, rng)
    ids = np.array([2, 3, 4], dtype=np.intp)
    plain = run_bilm(params, ids, valid_length=3)
    padded = run_bilm(params, np.concatenate([ids, np.zeros(3, dtype=np.intp)]), valid_length=3)
    npt.assert_array_equal(padded.layers[:, :3, :], plain.layers)
    npt.assert_array_equal(padded.layers[:, 3:, :], np.zeros((2, 3, 6)))


def test_run_bilm_reversal_swaps_directions():
    rng = np.random.default_rng(5)
    dim = 3
    params = init_bilm(9, dim, rng)
    # make both directions share weights so the swap is exact
    params = dataclasses.replace(params, backward_cell=params.forward_cell)
    ids = np.array([2, 5, 3, 8], dtype=np.intp)
    fwd_run = run_bilm(params, ids, valid_length=4)
    rev_run = run_bilm(params, ids[::-1].copy(), valid_length=4)
    for t in range(4):
        npt.assert_allclose(
            fwd_run.layers[1, t, :dim], rev_run.layers[1, 3 - t, dim:], atol=1e-12
        )


def test_run_bilm_rejects_out_of_range_id():
    params = init_bilm(5, 2, np.random.default_rng(0))
    with pytest.raises((IndexError, ValueError)):
        run_bilm(params, np.array([17], dtype=np.intp), valid_length=1)


# ------------------------------------------------------------ mix_layers


def test_mix_layers_single_layer_identity():
    layers = np.arange(6.0).reshape(1, 3, 2)
    out = ad.value(mix_layers(ContextualLayers(layers=layers, valid_length=3), LayerMixWeights(s_raw=np.zeros(1), gamma=1.0)))
    npt.assert_array_equal(out, layers[0])


def test_mix_layers_equal_weights_gamma_two_sums_layers():
    layers = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])
    weights = LayerMixWeights(s_raw=np.array([0.7, 0.7]), gamma=2.0)
    out = ad.value(mix_layers(ContextualLayers(layers=layers, valid_length=2), weights))
    npt.assert_allclose(out, np.full((2, 2), 4.0), atol=1e-12)


def test_mix_layers_hand_softmax_case():
    layers = np.zeros((2, 1, 1))
    layers[0, 0, 0] = 4.0
    weights = LayerMixWeights(s_raw=np.array([np.log(3.0), 0.0]), gamma=1.0)
    out = ad.value(mix_layers(ContextualLayers(layers=layers, valid_length=1), weights))
    npt.assert_allclose(out[0, 0], 3.0, atol=1e-12)


def test_mix_layers_rejects_length_mismatch():
    layers = np.zeros((2, 1, 1))
    with pytest.raises(ValueError):
        mix_layers(ContextualLayers(layers=layers, valid_length=1), LayerMixWeights(s_raw=np.zeros(3), gamma=1.0))


@given(st.floats(-50, 50))
@settings(max_examples=80, deadline=None)
def test_mix_layers_softmax_shift_invariance(shift):
    rng = np.random.default_rng(6)
    layers = rng.normal(size=(3, 4, 2))
    ctx = ContextualLayers(layers=layers, valid_length=4)
    base = ad.value(mix_layers(ctx, LayerMixWeights(s_raw=np.array([0.1, -0.4, 0.8]), gamma=1.3)))
    shifted = ad.value(mix_layers(ctx, LayerMixWeights(s_raw=np.array([0.1, -0.4, 0.8]) + shift, gamma=1.3)))
    npt.assert_allclose(base, shifted, atol=1e-9)


def test_mix_layers_gamma_scales_linearly():
    rng = np.random.default_rng(7)
    layers = rng.normal(size=(2, 3, 2))
    ctx = ContextualLayers(layers=layers, valid_length=3)
    w1 = LayerMixWeights(s_raw=np.array([0.2, 0.5]), gamma=1.0)
    w3 = LayerMixWeights(s_raw=np.array([0.2, 0.5]), gamma=3.0)
    npt.assert_allclose(3.0 * ad.value(mix_layers(ctx, w1)), ad.value(mix_layers(ctx, w3)), atol=1e-12)


# ------------------------------------------------------------- container


def test_precomputed_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    docs = [
        ContextualLayers(layers=rng.normal(size=(2, 4, 6)).astype(np.float32).astype(np.float64), valid_length=4),
        ContextualLayers(layers=rng.normal(size=(2, 2, 6)).astype(np.float32).astype(np.float64), valid_length=2),
    ]
    p = tmp_path / "ctx.bin"
    save_precomputed(p, docs)
    loaded = load_precomputed(p)
    assert len(loaded) == 2
    for orig, got in zip(docs, loaded):
        npt.assert_array_equal(got.layers, orig.layers)
        assert got.valid_length == orig.valid_length


def test_precomputed_header_values(tmp_path):
    docs = [ContextualLayers(layers=np.array([[[1.0, 2.0], [3.0, 4.0]]]), valid_length=2)]
    p = tmp_path / "ctx.bin"
    save_precomputed(p, docs)
    raw = p.read_bytes()
    assert raw[:4] == b"CTX1"
    loaded = load_precomputed(p)
    npt.assert_allclose(loaded[0].layers, [[[1.0, 2.0], [3.0, 4.0]]], atol=1e-6)


def test_precomputed_truncated_file_errors(tmp_path):
    docs = [ContextualLayers(layers=np.ones((1, 3, 2)), valid_length=3)]
    p = tmp_path / "ctx.bin"
    save_precomputed(p, docs)
    clipped = tmp_path / "clipped.bin"
    clipped.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ContextFormatError):
        load_precomputed(clipped)


def test_precomputed_bad_magic_errors(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ContextFormatError):
        load_precomputed(p)


def test_precomputed_trailing_garbage_errors(tmp_path):
    docs = [ContextualLayers(layers=np.ones((1, 2, 2)), valid_length=2)]
    p = tmp_path / "ctx.bin"
    save_precomputed(p, docs)
    bloated = tmp_path / "bloated.bin"
    bloated.write_bytes(p.read_bytes() + b"\x99")
    with pytest.raises(ContextFormatError):
        load_precomputed(bloated)


def test_pad_contextual_extends_with_zeros():
    ctx = ContextualLayers(layers=np.ones((2, 2, 3)), valid_length=2)
    out = pad_contextual(ctx, t_total=5)
    assert out.layers.shape == (2, 5, 3)
    npt.assert_array_equal(out.layers[:, 2:, :], np.zeros((2, 3, 3)))
    npt.assert_array_equal(out.layers[:, :2, :], ctx.layers)


# --------------------------------------------------------------- trainer


def sentences(texts):
    return [Document(tuple(t.split()), 0) for t in texts]


def test_train_bilm_epochs_zero_keeps_initialization():
    docs = sentences(["a b a b", "b a b a"])
    vocab = build_vocabulary(docs, min_count=1)
    config = BiLmTrainConfig(dim=3, learning_rate=0.1, epochs=0, batch_size=2, seed=0)
    params, meta = train_bilm(docs, vocab, config)
    fresh = init_bilm(len(vocab), 3, np.random.default_rng(0))
    npt.assert_array_equal(params.embedding, fresh.embedding)
    assert meta["initial_perplexity"] == meta["final_perplexity"]


def test_train_bilm_perplexity_improves():
    rng = np.random.default_rng(12)
    vocab_tokens = ["a", "b", "c", "d"]
    texts = [" ".join(rng.choice(vocab_tokens, size=8)) for _ in range(60)]
    docs = sentences(texts)
    vocab = build_vocabulary(docs, min_count=1)
    config = BiLmTrainConfig(dim=4, learning_rate=0.1, epochs=2, batch_size=8, seed=1)
    _, meta = train_bilm(docs, vocab, config)
    assert meta["final_perplexity"] < meta["initial_perplexity"]


def test_train_bilm_learns_deterministic_bigram():
    # alternating corpus has zero conditional entropy, so the forward
    # model can drive "b after a" cross-entropy toward its floor
    docs = sentences(["a b a b a b a b"] * 30)
    vocab = build_vocabulary(docs, min_count=1)
    config = BiLmTrainConfig(dim=8, learning_rate=0.5, epochs=60, batch_size=8, seed=3)
    params, meta = train_bilm(docs, vocab, config)
    encoded = encode_all(docs[:1], vocab, max_len=8)
    ppl = corpus_perplexity(params, encoded)
    # perplexity near 1 means near-zero cross-entropy per token
    assert ppl < np.exp(0.1)


def test_train_bilm_is_seed_deterministic():
    docs = sentences(["a b c a", "c b a c"] * 5)
    vocab = build_vocabulary(docs, min_count=1)
    config = BiLmTrainConfig(dim=3, learning_rate=0.1, epochs=1, batch_size=4, seed=7)
    p1, m1 = train_bilm(docs, vocab, config)
    p2, m2 = train_bilm(docs, vocab, config)
    npt.assert_array_equal(p1.embedding, p2.embedding)
    npt.assert_array_equal(p1.proj_w, p2.proj_w)
    assert m1["final_perplexity"] == m2["final_perplexity"]


def test_lstm_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    cell = init_lstm(2, 3, rng)
    x = rng.normal(size=2)
    h0 = rng.normal(size=3)
    c0 = rng.normal(size=3)
    w = rng.normal(size=3)

    names = [f.name for f in dataclasses.fields(cell)]
    leaves = {n: ad.Var(getattr(cell, n)) for n in names}
    traced = LstmCellParams(**leaves)
    h_out, _ = lstm_step(traced, x, h0, c0)
    ad.sum(ad.mul(h_out, w)).backward()

    eps = 1e-5
    for name in names:
        arr = getattr(cell, name)
        flat = arr.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi_h, _ = lstm_step(cell, x, h0, c0)
            hi = float(np.sum(ad.value(hi_h) * w))
            flat[i] = orig - eps
            lo_h, _ = lstm_step(cell, x, h0, c0)
            lo = float(np.sum(ad.value(lo_h) * w))
            flat[i] = orig
            num[i] = (hi - lo) / (2 * eps)
        analytic = leaves[name].grad.reshape(-1)
        denom = np.maximum(np.abs(num), 1e-6)
        assert np.max(np.abs(analytic - num) / denom) < 1e-4, name

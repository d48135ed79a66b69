import numpy as np
import pytest
import torch

from tgrounding.encoder import (
    QueryEncoder, VideoEncoder, Vocabulary, draw_noise, fuse, load_word_vectors, masked_mean,
    pool_and_fuse, sample_variant,
)


def _np(t):
    return t.detach().double().numpy()


# -- video encoder ----------------------------------------------------------

def test_video_zero_in_zero_out():
    enc = VideoEncoder(6)
    assert torch.count_nonzero(enc(torch.zeros(2, 6, 5))) == 0


def test_video_identity_weights():
    enc = VideoEncoder(4)
    with torch.no_grad():
        enc.W1.weight.copy_(torch.eye(4))
        enc.W2.weight.copy_(torch.eye(4))
    x = torch.rand(3, 4, 7)
    assert torch.equal(enc(x), x)


def test_video_matches_matrix_oracle():
    torch.manual_seed(0)
    enc = VideoEncoder(5).double()
    x = torch.randn(2, 5, 6, dtype=torch.float64)
    W1, W2 = _np(enc.W1.weight), _np(enc.W2.weight)
    expect = np.stack([W2 @ np.maximum(W1 @ xb, 0.0) for xb in _np(x)])
    np.testing.assert_allclose(_np(enc(x)), expect, atol=1e-6)


def test_video_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        VideoEncoder(4)(torch.zeros(1, 3, 5))


# -- bidirectional recurrence -----------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_direction(xs, W_ih, W_hh, b, reverse):
    H = W_hh.shape[1]
    h, c = np.zeros(H), np.zeros(H)
    out = [None] * len(xs)
    steps = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in steps:
        z = W_ih @ xs[t] + W_hh @ h + b
        i, f, g, o = _sigmoid(z[:H]), _sigmoid(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), _sigmoid(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return np.stack(out)


def lstm_oracle(lstm, xs):
    """Step-by-step two-layer bidirectional recurrence, gate order (i, f, g, o)."""
    layer_in = xs
    for layer in range(lstm.num_layers):
        halves = []
        for suffix, reverse in (("", False), ("_reverse", True)):
            p = lambda n: _np(getattr(lstm, f"{n}_l{layer}{suffix}"))  # noqa: E731
            halves.append(_lstm_direction(layer_in, p("weight_ih"), p("weight_hh"),
                                          p("bias_ih") + p("bias_hh"), reverse))
        layer_in = np.concatenate(halves, axis=1)
    return layer_in


def test_recurrence_matches_unrolled_oracle():
    torch.manual_seed(3)
    enc = QueryEncoder(10, 5, 4).double()
    ids = torch.tensor([[2, 5, 7]])
    got = enc.encode_words(ids, torch.tensor([3]))[0]
    xs = _np(enc.embedding(ids))[0]
    np.testing.assert_allclose(_np(got), lstm_oracle(enc.birnn, xs), atol=1e-6)


def test_recurrence_respects_lengths():
    torch.manual_seed(4)
    enc = QueryEncoder(10, 5, 4).double()
    ids = torch.tensor([[2, 5, 7], [3, 4, 0]])
    got = enc.encode_words(ids, torch.tensor([3, 2]))
    short = _np(enc.embedding(ids[1:, :2]))[0]
    np.testing.assert_allclose(_np(got[1, :2]), lstm_oracle(enc.birnn, short), atol=1e-6)
    assert torch.count_nonzero(got[1, 2]) == 0


def test_recurrence_single_word():
    enc = QueryEncoder(10, 6, 8)
    out = enc.encode_words(torch.tensor([[4]]), torch.tensor([1]))
    assert out.shape == (1, 1, 8)
    xs = _np(enc.embedding(torch.tensor([[4]])))[0]
    np.testing.assert_allclose(_np(out[0]), lstm_oracle(enc.birnn, xs), atol=1e-6)


def test_recurrence_zero_everything():
    enc = QueryEncoder(10, 6, 8)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    out = enc.encode_words(torch.tensor([[2, 3, 4]]), torch.tensor([3]))
    assert torch.count_nonzero(out) == 0


def test_empty_query_rejected():
    enc = QueryEncoder(10, 6, 8)
    with pytest.raises(ValueError, match="empty query"):
        enc.encode_words(torch.zeros(1, 0, dtype=torch.long), torch.tensor([0]))


# -- pooling and affine heads -----------------------------------------------

def test_equal_word_features_pool_to_same_vector():
    enc = QueryEncoder(5, 4, 4)
    v = torch.randn(4)
    words = v.expand(1, 5, 4).clone()
    f_r, f_m, _ = pool_and_fuse(enc, words, torch.tensor([[1., 1, 0, 0, 0]]), torch.tensor([[0., 0, 1, 1, 1]]))
    torch.testing.assert_close(f_r[0], v)
    torch.testing.assert_close(f_m[0], v)


def test_empty_modified_set_gives_zero():
    enc = QueryEncoder(5, 4, 4).double()
    words = torch.randn(1, 3, 4, dtype=torch.float64)
    f_r, f_m, f_l = pool_and_fuse(enc, words, torch.ones(1, 3, dtype=torch.float64), torch.zeros(1, 3, dtype=torch.float64))
    assert torch.count_nonzero(f_m) == 0
    expect = _np(enc.W3.weight) @ np.concatenate([_np(f_r[0]), np.zeros(4)]) + _np(enc.W3.bias)
    np.testing.assert_allclose(_np(f_l[0]), expect, atol=1e-12)


def test_pooling_matches_affine_oracle():
    torch.manual_seed(5)
    enc = QueryEncoder(5, 4, 6).double()
    words = torch.randn(2, 4, 6, dtype=torch.float64)
    rel = torch.tensor([[1., 0, 1, 0], [0, 1, 0, 0]], dtype=torch.float64)
    mod = 1 - rel
    f_r, f_m, f_l = pool_and_fuse(enc, words, rel, mod)
    W = _np(enc.W3.weight)
    for b in range(2):
        w = _np(words[b])
        r = w[_np(rel[b]) == 1].mean(axis=0)
        m = w[_np(mod[b]) == 1].mean(axis=0)
        np.testing.assert_allclose(_np(f_r[b]), r, atol=1e-6)
        np.testing.assert_allclose(_np(f_l[b]), W @ np.concatenate([r, m]) + _np(enc.W3.bias), atol=1e-6)


def test_modifier_swap_leaves_relation_pool_unchanged():
    torch.manual_seed(6)
    enc = QueryEncoder(20, 6, 6)
    # the same relation words in the same slots, different modifiers
    ids = torch.tensor([[2, 10, 3, 11], [2, 12, 3, 13]])
    rel = torch.tensor([[1., 0, 1, 0], [1, 0, 1, 0]])
    words = enc.embedding(ids)  # pooling over position-independent features
    f_r, _, _ = pool_and_fuse(enc, words, rel, 1 - rel)
    assert torch.equal(f_r[0], f_r[1])


def test_masked_mean_all_zero_mask():
    assert torch.count_nonzero(masked_mean(torch.randn(2, 3, 4), torch.zeros(2, 3))) == 0


# -- variant sampling -------------------------------------------------------

def _pooled(seed=0, B=2, d=4):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(B, d, generator=g, dtype=torch.float64), torch.randn(B, d, generator=g, dtype=torch.float64)


def test_zero_noise_is_deterministic_w4_path():
    enc = QueryEncoder(5, 4, 4).double()
    f_r, f_m = _pooled()
    zero = torch.zeros(2, 3, 4, dtype=torch.float64)
    out = sample_variant(enc, f_r, f_m, 1.0, 3, noise=zero)
    assert torch.equal(out, sample_variant(enc, f_r, f_m, 1.0, 3, noise=zero))
    expect = enc.W4(torch.cat([f_r, f_m], dim=-1))
    torch.testing.assert_close(out, expect[:, None].expand_as(out), atol=1e-12, rtol=0)


def test_small_sigma_converges_to_w4_path():
    enc = QueryEncoder(5, 4, 4).double()
    f_r, f_m = _pooled()
    out = sample_variant(enc, f_r, f_m, 1e-8, 4, torch.Generator().manual_seed(1))
    expect = enc.W4(torch.cat([f_r, f_m], dim=-1))
    torch.testing.assert_close(out, expect[:, None].expand_as(out), atol=1e-6, rtol=0)


def test_seeded_draws_repeat():
    enc = QueryEncoder(5, 4, 4)
    f_r, f_m = (t.float() for t in _pooled())
    a = sample_variant(enc, f_r, f_m, 2.0, 5, torch.Generator().manual_seed(9))
    b = sample_variant(enc, f_r, f_m, 2.0, 5, torch.Generator().manual_seed(9))
    assert torch.equal(a, b)


@pytest.mark.parametrize("mode,noisy", [
    ("modified", {"modified"}), ("relation", {"relation"}), ("all", {"relation", "modified"}),
])
def test_noise_targets(mode, noisy):
    enc = QueryEncoder(5, 4, 4).double()
    with torch.no_grad():
        enc.W4.weight.copy_(torch.cat([torch.eye(4), torch.eye(4)], dim=1).double())
        enc.W4.bias.zero_()
    f_r, f_m = torch.zeros(1, 4, dtype=torch.float64), torch.zeros(1, 4, dtype=torch.float64)
    noise = {"relation": torch.ones(1, 1, 4, dtype=torch.float64), "modified": 10 * torch.ones(1, 1, 4, dtype=torch.float64)}
    out = sample_variant(enc, f_r, f_m, 1.0, 1, pos_mode=mode, noise=noise)
    expect = sum(1.0 if s == "relation" else 10.0 for s in noisy)
    assert torch.all(out == expect)


@pytest.mark.parametrize("sigma", [1.0, 2.0])
def test_noise_variance(sigma):
    eps = draw_noise((10_000, 8), sigma, torch.Generator().manual_seed(11), torch.float64)
    var = eps.var(dim=0)
    assert torch.all((var - sigma ** 2).abs() <= 0.1 * sigma ** 2)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        draw_noise((2,), 0.0)


# -- fusion -----------------------------------------------------------------

def test_fuse_basis_vector():
    e1 = torch.zeros(1, 3, 1)
    e1[0, 0, 0] = 1
    out = fuse(e1, torch.tensor([[1.0, 1.0, 1.0]]))
    assert torch.equal(out, e1)


def test_fuse_zero_column_stays_zero():
    v = torch.randn(1, 4, 3)
    v[:, :, 1] = 0
    out = fuse(v, torch.randn(1, 4))
    assert torch.count_nonzero(out[:, :, 1]) == 0


@pytest.mark.parametrize("q_shape", [(2, 6), (2, 3, 6)])
def test_fuse_unit_columns(q_shape):
    torch.manual_seed(12)
    v = torch.randn(2, 6, 5, dtype=torch.float64)
    out = fuse(v, torch.randn(*q_shape, dtype=torch.float64))
    norms = out.norm(dim=-2)
    assert torch.all((norms - 1).abs() < 1e-6)


def test_fuse_global_norm():
    v = torch.randn(2, 6, 5, dtype=torch.float64)
    out = fuse(v, torch.randn(2, 6, dtype=torch.float64), norm="global")
    torch.testing.assert_close(out.flatten(1).norm(dim=1), torch.ones(2, dtype=torch.float64))
    with pytest.raises(ValueError):
        fuse(v, torch.randn(2, 6), norm="nope")


# -- vocabulary and word vectors -------------------------------------------

def test_vocabulary_reserved_rows():
    vocab = Vocabulary(["b", "a", "a"])
    assert vocab.itos[:2] == ["<pad>", "<unk>"]
    assert vocab.encode(["a", "zzz"]) == [2, 1]


def test_word_vector_loader(tmp_path):
    vocab = Vocabulary(["cat", "dog"])
    p = tmp_path / "vec.txt"
    p.write_text("cat 1 2 3\nbird 4 5 6\n", encoding="utf-8")
    table = load_word_vectors(p, vocab, 3)
    assert table[vocab.stoi["cat"]].tolist() == [1.0, 2.0, 3.0]
    assert torch.count_nonzero(table[0]) == 0
    p.write_text("cat 1 2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="expected 3"):
        load_word_vectors(p, vocab, 3)

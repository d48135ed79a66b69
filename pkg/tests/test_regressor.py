import numpy as np
import pytest
import torch

from tgrounding.regressor import Branch, RegressionHead, TemporalBlock, sinusoid_positions, zero_residual_paths


def _np(t):
    return t.detach().double().numpy()


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_oracle(mha, x):
    """Multi-head scaled dot-product self-attention on one sequence ``x [T, d]``."""
    d = x.shape[1]
    H = mha.num_heads
    dh = d // H
    W, b = _np(mha.in_proj_weight), _np(mha.in_proj_bias)
    q, k, v = (x @ W[i * d:(i + 1) * d].T + b[i * d:(i + 1) * d] for i in range(3))
    heads = []
    for h in range(H):
        sl = slice(h * dh, (h + 1) * dh)
        a = _softmax(q[:, sl] @ k[:, sl].T / np.sqrt(dh))
        heads.append(a @ v[:, sl])
    return np.concatenate(heads, axis=1) @ _np(mha.out_proj.weight).T + _np(mha.out_proj.bias)


def conv_oracle(conv, x):
    W, b = _np(conv.weight), _np(conv.bias)
    d_out, d_in, k = W.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    T = x.shape[1]
    return np.stack([sum(W[:, :, j] @ xp[:, t + j] for j in range(k)) + b for t in range(T)], axis=1)


def bn_eval_oracle(bn, x):
    mean, var = _np(bn.running_mean), _np(bn.running_var)
    return (x - mean[:, None]) / np.sqrt(var[:, None] + bn.eps) * _np(bn.weight)[:, None] + _np(bn.bias)[:, None]


def _randomize_bn(block, g):
    with torch.no_grad():
        for bn in (block.bn1, block.bn2):
            bn.running_mean.copy_(torch.randn(bn.num_features, generator=g))
            bn.running_var.copy_(torch.rand(bn.num_features, generator=g) + 0.5)
            bn.weight.copy_(torch.randn(bn.num_features, generator=g))
            bn.bias.copy_(torch.randn(bn.num_features, generator=g))


def test_block_matches_explicit_oracle():
    torch.manual_seed(0)
    block = TemporalBlock(4, 3, 2).double()
    _randomize_bn(block, torch.Generator().manual_seed(1))
    block.eval()
    x = torch.randn(2, 4, 3, dtype=torch.float64)
    got = _np(block(x))
    for n in range(2):
        xn = _np(x[n])
        h = np.maximum(bn_eval_oracle(block.bn1, conv_oracle(block.conv1, xn)), 0.0)
        y = xn + bn_eval_oracle(block.bn2, conv_oracle(block.conv2, h))
        expect = y + attention_oracle(block.attention, y.T).T
        np.testing.assert_allclose(got[n], expect, atol=1e-6)


def test_zero_block_is_identity():
    block = TemporalBlock(8, 3, 4)
    zero_residual_paths(block)
    x = torch.randn(3, 8, 5)
    block.train()
    assert torch.equal(block(x), x)
    block.eval()
    assert torch.equal(block(x), x)


def test_single_clip_shape():
    block = TemporalBlock(8, 3, 4).eval()
    assert block(torch.randn(2, 8, 1)).shape == (2, 8, 1)


def test_block_argument_checks():
    with pytest.raises(ValueError):
        TemporalBlock(8, 2, 4)
    with pytest.raises(ValueError):
        TemporalBlock(8, 3, 3)


def test_eval_independent_of_batch_composition():
    torch.manual_seed(2)
    branch = Branch(8, 2, 3, 4).double()
    branch.train()
    branch(torch.randn(16, 8, 6, dtype=torch.float64))  # populate running stats
    branch.eval()
    x = torch.randn(5, 8, 6, dtype=torch.float64)
    alone = branch(x[:1]).span
    together = branch(x).span[:1]
    torch.testing.assert_close(alone, together, atol=1e-12, rtol=0)


def test_train_mode_uses_batch_statistics():
    block = TemporalBlock(4, 3, 2).double()
    block.train()
    x = torch.randn(6, 4, 5, dtype=torch.float64)
    conv1 = block.conv1(x)
    normed = block.bn1(conv1)
    mean = normed.mean(dim=(0, 2))
    torch.testing.assert_close(mean, torch.zeros(4, dtype=torch.float64), atol=1e-9, rtol=0)


# -- regression head ----------------------------------------------------------

def test_uniform_columns_give_uniform_attention():
    head = RegressionHead(6)
    F = torch.randn(2, 6, 1).expand(2, 6, 7)
    a = head(F).attention
    torch.testing.assert_close(a, torch.full((2, 7), 1 / 7))


def test_zero_affine_gives_midpoint():
    head = RegressionHead(6)
    with torch.no_grad():
        head.reg_se.weight.zero_()
        head.reg_se.bias.zero_()
    assert head(torch.randn(3, 6, 4)).span.tolist() == [[0.5, 0.5]] * 3


def test_head_matches_weighted_sum_oracle():
    torch.manual_seed(4)
    head = RegressionHead(6).double()
    F = torch.randn(2, 6, 5, dtype=torch.float64)
    out = head(F)
    for n in range(2):
        cols = _np(F[n]).T
        a = _softmax((np.tanh(cols @ _np(head.W5.weight).T) @ _np(head.W6.weight).T)[:, 0])
        pooled = a @ cols
        sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
        np.testing.assert_allclose(_np(out.attention[n]), a, atol=1e-6)
        np.testing.assert_allclose(a.sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(_np(out.span[n]), sig(_np(head.reg_se.weight) @ pooled + _np(head.reg_se.bias)), atol=1e-6)
        np.testing.assert_allclose(_np(out.centerwidth[n]), sig(_np(head.reg_cw.weight) @ pooled + _np(head.reg_cw.bias)), atol=1e-6)


def test_outputs_in_unit_square_for_extreme_inputs():
    head = RegressionHead(4)
    out = head(1e4 * torch.randn(8, 4, 3))
    for t in (out.span, out.centerwidth):
        assert torch.all((t >= 0) & (t <= 1))
    torch.testing.assert_close(out.attention.sum(-1), torch.ones(8))


# -- branch -------------------------------------------------------------------

def test_zero_blocks_reduce_to_head():
    branch = Branch(8, 3, 3, 4)
    for b in branch.blocks:
        zero_residual_paths(b)
    x = torch.randn(2, 8, 6)
    assert torch.equal(branch(x).span, branch.head(x).span)


def test_branch_eval_is_deterministic():
    branch = Branch(8, 2, 3, 4, positional=True).eval()
    x = torch.randn(3, 8, 6)
    a, b = branch(x), branch(x)
    assert torch.equal(a.span, b.span) and torch.equal(a.attention, b.attention)


def test_sinusoid_positions():
    pe = sinusoid_positions(4, 3, torch.float64)
    assert pe.shape == (4, 3)
    np.testing.assert_allclose(_np(pe[0]), np.sin([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(_np(pe[1]), np.cos([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(_np(pe[2]), np.sin(np.arange(3) / 100.0))

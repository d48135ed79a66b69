"""Temporal blocks and the attention-guided regression head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class BranchOutput:
    """Batched branch predictions.

    ``span`` and ``centerwidth`` are ``[..., 2]`` in (0, 1); ``attention`` is ``[..., T_m]``
    and sums to one along the last axis.
    """

    span: torch.Tensor
    centerwidth: torch.Tensor
    attention: torch.Tensor

    def reshape(self, *lead):
        return BranchOutput(
            self.span.reshape(*lead, 2),
            self.centerwidth.reshape(*lead, 2),
            self.attention.reshape(*lead, self.attention.shape[-1]),
        )


class TemporalBlock(nn.Module):
    """Residual conv sublayer followed by a residual self-attention sublayer."""

    def __init__(self, d_m: int, kernel: int = 3, heads: int = 4, dropout: float = 0.0):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("kernel width must be odd")
        if d_m % heads:
            raise ValueError("d_m must be divisible by the number of heads")
        pad = kernel // 2
        self.conv1 = nn.Conv1d(d_m, d_m, kernel, padding=pad)
        self.bn1 = nn.BatchNorm1d(d_m)
        self.conv2 = nn.Conv1d(d_m, d_m, kernel, padding=pad)
        self.bn2 = nn.BatchNorm1d(d_m)
        self.attention = nn.MultiheadAttention(d_m, heads, batch_first=True)
        self.drop = nn.Dropout(dropout) if dropout > 0 else nn.Identity()

    def conv(self, x):
        return self.bn2(self.conv2(torch.relu(self.bn1(self.conv1(x)))))

    def forward(self, x):  # [N, d_m, T_m]
        y = x + self.drop(self.conv(x))
        seq = y.transpose(1, 2)
        att, _ = self.attention(seq, seq, seq, need_weights=False)
        return y + self.drop(att.transpose(1, 2))


class RegressionHead(nn.Module):
    def __init__(self, d_m: int, d_h: int | None = None):
        super().__init__()
        d_h = d_h or max(1, d_m // 2)
        self.W5 = nn.Linear(d_m, d_h, bias=False)
        self.W6 = nn.Linear(d_h, 1, bias=False)
        self.reg_se = nn.Linear(d_m, 2)
        self.reg_cw = nn.Linear(d_m, 2)

    def forward(self, F_in) -> BranchOutput:
        cols = F_in.transpose(1, 2)  # [N, T, d]
        scores = self.W6(torch.tanh(self.W5(cols))).squeeze(-1)
        a = torch.softmax(scores, dim=-1)
        pooled = torch.einsum("nt,ntd->nd", a, cols)
        return BranchOutput(
            span=torch.sigmoid(self.reg_se(pooled)),
            centerwidth=torch.sigmoid(self.reg_cw(pooled)),
            attention=a,
        )


def sinusoid_positions(d_m: int, T_m: int, dtype=torch.float32):
    pos = torch.arange(T_m, dtype=dtype)[None, :]
    i = torch.arange(d_m, dtype=dtype)[:, None]
    angle = pos / torch.pow(10000.0, (2 * (i // 2)) / d_m)
    return torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))


class Branch(nn.Module):
    """A stack of temporal blocks followed by a regression head."""

    def __init__(self, d_m: int, blocks: int = 2, kernel: int = 3, heads: int = 4,
                 positional: bool = False, dropout: float = 0.0):
        super().__init__()
        if blocks < 1:
            raise ValueError("need at least one temporal block")
        self.blocks = nn.ModuleList(TemporalBlock(d_m, kernel, heads, dropout) for _ in range(blocks))
        self.head = RegressionHead(d_m)
        self.positional = positional

    def forward(self, F_in) -> BranchOutput:
        x = F_in
        if self.positional:
            x = x + sinusoid_positions(x.shape[1], x.shape[2], x.dtype)
        for block in self.blocks:
            x = block(x)
        return self.head(x)


def zero_residual_paths(block: TemporalBlock) -> None:
    """Make ``block`` the identity map (used by sanity checks)."""
    with torch.no_grad():
        for p in block.parameters():
            p.zero_()

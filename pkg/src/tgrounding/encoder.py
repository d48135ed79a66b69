"""Video and query encoders, query-variant sampling and multimodal fusion.

All tensors are channel-major: video features ``[B, d, T_m]``, pooled
query features ``[B, d]``, word features ``[B, S, d_l]``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

PAD, UNK = "<pad>", "<unk>"

# where the Gaussian perturbation goes, per pos_mode
NOISE_TARGETS = {
    "modified": ("modified",),
    "relation": ("relation",),
    "all": ("relation", "modified"),
    "none": ("relation",),
}


class Vocabulary:
    """Token <-> row mapping for the embedding table. Row 0 is padding, row 1 is UNK."""

    def __init__(self, words: Iterable[str]):
        self.itos = [PAD, UNK] + sorted(set(words) - {PAD, UNK})
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(w, 1) for w in tokens]


def load_word_vectors(path, vocab: Vocabulary, d_w: int, seed: int = 0) -> torch.Tensor:
    """Build an embedding matrix from a ``word v1 ... v_d`` text file.

    Words missing from the file keep a small random init; the padding row is zero.
    """
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 0.1, size=(len(vocab), d_w))
    table[0] = 0.0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != d_w:
                raise ValueError(f"{path}:{lineno}: expected {d_w} values, got {len(parts) - 1}")
            row = vocab.stoi.get(parts[0])
            if row is not None and row > 1:
                table[row] = [float(v) for v in parts[1:]]
    return torch.tensor(table)


class VideoEncoder(nn.Module):
    """Two bias-free fully connected layers with a ReLU between them."""

    def __init__(self, d_v: int):
        super().__init__()
        self.W1 = nn.Linear(d_v, d_v, bias=False)
        self.W2 = nn.Linear(d_v, d_v, bias=False)

    def forward(self, video):
        if video.shape[-2] != self.W1.in_features:
            raise ValueError(f"video has {video.shape[-2]} channels, encoder expects {self.W1.in_features}")
        x = video.transpose(-1, -2)
        return self.W2(torch.relu(self.W1(x))).transpose(-1, -2)


class QueryEncoder(nn.Module):
    """Word embedding, two bidirectional LSTM layers, PoS-split pooling and the two affine heads."""

    def __init__(self, vocab_size: int, d_w: int, d_l: int):
        super().__init__()
        if d_l % 2:
            raise ValueError("d_l must be even (forward and backward halves)")
        self.embedding = nn.Embedding(vocab_size, d_w, padding_idx=0)
        self.birnn = nn.LSTM(d_w, d_l // 2, num_layers=2, bidirectional=True, batch_first=True)
        self.W3 = nn.Linear(2 * d_l, d_l)
        self.W4 = nn.Linear(2 * d_l, d_l)

    def encode_words(self, token_ids, lengths):
        """``token_ids [B, S]`` -> word features ``[B, S, d_l]`` (zero past each length)."""
        if token_ids.shape[1] == 0 or (lengths < 1).any():
            raise ValueError("empty query")
        emb = self.embedding(token_ids)
        packed = nn.utils.rnn.pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.birnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=token_ids.shape[1])
        return out

    def query_embedding(self, f_r, f_m):
        return self.W3(torch.cat([f_r, f_m], dim=-1))

    def variant_embedding(self, f_r, f_m):
        return self.W4(torch.cat([f_r, f_m], dim=-1))


def masked_mean(word_features, mask):
    """Mean of the selected word columns; all-zero mask gives the zero vector."""
    mask = mask.to(word_features.dtype)
    total = (word_features * mask.unsqueeze(-1)).sum(dim=1)
    count = mask.sum(dim=1, keepdim=True)
    return total / count.clamp(min=1.0)


def pool_and_fuse(encoder: QueryEncoder, word_features, relation_mask, modified_mask):
    f_r = masked_mean(word_features, relation_mask)
    f_m = masked_mean(word_features, modified_mask)
    return f_r, f_m, encoder.query_embedding(f_r, f_m)


def draw_noise(shape, sigma: float, generator=None, dtype=torch.float32):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return sigma * torch.randn(shape, generator=generator, dtype=dtype)


def sample_variant(encoder: QueryEncoder, f_r, f_m, sigma: float, K: int = 1, generator=None,
                   pos_mode: str = "modified", noise=None):
    """Draw ``K`` perturbed query embeddings per sample, ``[B, K, d_l]``.

    ``noise`` overrides the random draw; it must be ``[B, K, d_l]`` per perturbed slot
    (or a dict keyed by ``"relation"``/``"modified"``).
    """
    targets = NOISE_TARGETS[pos_mode]
    B, d = f_r.shape
    r = f_r.unsqueeze(1).expand(B, K, d)
    m = f_m.unsqueeze(1).expand(B, K, d)
    slots = {"relation": r, "modified": m}
    for name in targets:
        if noise is None:
            eps = draw_noise((B, K, d), sigma, generator, f_r.dtype)
        elif isinstance(noise, dict):
            eps = noise[name]
        else:
            eps = noise
        slots[name] = slots[name] + eps
    return encoder.variant_embedding(slots["relation"], slots["modified"])


def fuse(video_embedding, query_embedding, norm: str = "column", eps: float = 1e-12):
    """Hadamard product of video and replicated query features, then l2 normalization.

    ``video_embedding [B, d, T]``; ``query_embedding [B, d]`` or ``[B, K, d]`` (then the
    result is ``[B, K, d, T]``).
    """
    if query_embedding.dim() == 3:
        prod = video_embedding.unsqueeze(1) * query_embedding.unsqueeze(-1)
    else:
        prod = video_embedding * query_embedding.unsqueeze(-1)
    if norm == "column":
        return F.normalize(prod, p=2, dim=-2, eps=eps)
    if norm == "global":
        total = prod.flatten(-2).norm(dim=-1).clamp(min=eps)
        return prod / total[..., None, None]
    raise ValueError(f"unknown fusion norm {norm!r}")

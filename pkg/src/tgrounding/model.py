"""Full two-branch grounding model and tensor preparation of samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import AblationConfig, ModelConfig
from .core import TemporalSpan, inside_mask, span_to_centerwidth, uniform_resample
from .encoder import QueryEncoder, VideoEncoder, Vocabulary, fuse, load_word_vectors, pool_and_fuse, sample_variant
from .posdecouple import partition
from .regressor import Branch, BranchOutput


@dataclass
class Prepared:
    """Stacked tensors for a list of samples (row ``i`` is ``samples[i]``)."""

    query_ids: list
    video: torch.Tensor          # [n, d_v, T_m]
    tokens: torch.Tensor         # [n, S_max]
    lengths: torch.Tensor        # [n]
    relation_mask: torch.Tensor  # [n, S_max]
    modified_mask: torch.Tensor  # [n, S_max]
    gt_span: torch.Tensor        # [n, 2]
    gt_cw: torch.Tensor          # [n, 2]
    inside: torch.Tensor         # [n, T_m]

    def __len__(self):
        return len(self.query_ids)

    def take(self, idx) -> "Prepared":
        idx = torch.as_tensor(idx, dtype=torch.long)
        sub = [self.query_ids[i] for i in idx.tolist()]
        lengths = self.lengths[idx]
        S = int(lengths.max())
        return Prepared(sub, self.video[idx], self.tokens[idx, :S], lengths,
                        self.relation_mask[idx, :S], self.modified_mask[idx, :S],
                        self.gt_span[idx], self.gt_cw[idx], self.inside[idx])


def prepare(samples, vocab: Vocabulary, T_m: int, labels=None, dtype=torch.float32,
            relation_tags=None) -> Prepared:
    """Resample clips, encode tokens and build training targets.

    ``labels`` overrides the training span per sample (default: each sample's
    primary annotation). ``relation_tags`` re-partitions every query from its
    stored tags instead of using the partition it was built with.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("no samples to prepare")
    labels = labels or [s.primary_span for s in samples]
    S = max(len(s.query.tokens) for s in samples)
    d_v = samples[0].clip_features.shape[0]
    video = np.zeros((n, d_v, T_m))
    tokens = np.zeros((n, S), dtype=np.int64)
    rel = np.zeros((n, S))
    mod = np.zeros((n, S))
    lengths = np.zeros(n, dtype=np.int64)
    gt = np.zeros((n, 2))
    cw = np.zeros((n, 2))
    inside = np.zeros((n, T_m))
    for i, (s, y) in enumerate(zip(samples, labels)):
        if s.clip_features.shape[0] != d_v:
            raise ValueError(f"{s.query_id}: feature dim {s.clip_features.shape[0]} != {d_v}")
        video[i] = uniform_resample(s.clip_features, T_m)
        ids = vocab.encode(s.query.tokens)
        lengths[i] = len(ids)
        tokens[i, : len(ids)] = ids
        if relation_tags is None:
            r_idx, m_idx = s.query.relation_indices, s.query.modified_indices
        else:
            r_idx, m_idx = partition(s.query.tags, frozenset(relation_tags))
        rel[i, list(r_idx)] = 1.0
        mod[i, list(m_idx)] = 1.0
        gt[i] = y.as_tuple()
        c = span_to_centerwidth(y)
        cw[i] = (c.center, c.width)
        inside[i] = inside_mask(y, T_m)
    t = lambda a: torch.tensor(a, dtype=dtype)  # noqa: E731
    return Prepared([s.query_id for s in samples], t(video), torch.tensor(tokens), torch.tensor(lengths),
                    t(rel), t(mod), t(gt), t(cw), t(inside))


class GroundingModel(nn.Module):
    """Video/query encoders plus a single-output and a multi-output branch."""

    def __init__(self, vocab: Vocabulary, cfg: ModelConfig | None = None, ablation: AblationConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        ablation = ablation or AblationConfig()
        cfg.check()
        ablation.check()
        self.cfg, self.ablation, self.vocab = cfg, ablation, vocab
        self.video_encoder = VideoEncoder(cfg.d_v)
        self.query_encoder = QueryEncoder(len(vocab), cfg.d_w, cfg.d_l)
        if cfg.word_vectors:
            with torch.no_grad():
                self.query_encoder.embedding.weight.copy_(load_word_vectors(cfg.word_vectors, vocab, cfg.d_w))
        self.single_branch = Branch(cfg.d_m, cfg.blocks, cfg.kernel, cfg.heads, cfg.positional, cfg.dropout)
        if ablation.single_branch_only == "on":
            self.multi_branch = self.single_branch
        else:
            self.multi_branch = Branch(cfg.d_m, cfg.blocks, cfg.kernel, cfg.heads, cfg.positional, cfg.dropout)

    def pooled_query(self, batch: Prepared):
        words = self.query_encoder.encode_words(batch.tokens, batch.lengths)
        rel, mod = batch.relation_mask, batch.modified_mask
        if self.ablation.pos_mode == "none":
            rel = rel + mod
            mod = torch.zeros_like(mod)
        return pool_and_fuse(self.query_encoder, words, rel, mod)

    def forward(self, batch: Prepared, K: int = 0, sigma: float = 1.0, generator=None, noise=None):
        """Return ``(single, multi)``; ``multi`` is ``None`` when ``K == 0``.

        ``single`` fields are ``[B, ...]``, ``multi`` fields ``[B, K, ...]``.
        """
        norm = self.ablation.fusion_norm
        video = self.video_encoder(batch.video)
        f_r, f_m, f_l = self.pooled_query(batch)
        single = self.single_branch(fuse(video, f_l, norm))
        if K == 0:
            return single, None
        variants = sample_variant(self.query_encoder, f_r, f_m, sigma, K, generator,
                                  self.ablation.pos_mode, noise)
        fused = fuse(video, variants, norm)  # [B, K, d, T]
        B, _, d, T = fused.shape
        multi = self.multi_branch(fused.reshape(B * K, d, T)).reshape(B, K)
        return single, multi

    def output_spans(self, out: BranchOutput) -> torch.Tensor:
        """Start-end predictions; the centerness-only ablation converts from center-width."""
        if self.ablation.reg_heads == "cw":
            c, w = out.centerwidth[..., 0], out.centerwidth[..., 1]
            return torch.stack([c - w / 2, c + w / 2], dim=-1)
        return out.span


def build_vocab(samples) -> Vocabulary:
    return Vocabulary(w for s in samples for w in s.query.tokens)


def span_tensor(spans, dtype=torch.float64):
    return torch.tensor([s.as_tuple() if isinstance(s, TemporalSpan) else tuple(s) for s in spans], dtype=dtype)

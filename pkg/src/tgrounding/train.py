"""Regression/attention losses, the min-loss objective and the optimization loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import torch

from .config import RunConfig
from .model import GroundingModel, Prepared
from .regressor import BranchOutput

log = logging.getLogger(__name__)

ATTENTION_FLOOR = 1e-12


def loss_reg(pred_span, pred_cw, gt_span, gt_cw, heads: str = "both"):
    """L1 distance on start-end plus L1 distance on center-width, per sample.

    ``heads`` drops one term for the boundary-only (``"se"``) and
    centerness-only (``"cw"``) ablations.
    """
    se = (pred_span - gt_span).abs().sum(-1)
    cw = (pred_cw - gt_cw).abs().sum(-1)
    if heads == "se":
        return se
    if heads == "cw":
        return cw
    return se + cw


def loss_att(attention, mask):
    """Negative mean log-attention over clips inside the ground truth."""
    logs = torch.log(attention.clamp(min=ATTENTION_FLOOR))
    return -(mask * logs).sum(-1) / mask.sum(-1)


def branch_loss(out: BranchOutput, gt_span, gt_cw, mask, heads="both"):
    return loss_reg(out.span, out.centerwidth, gt_span, gt_cw, heads) + loss_att(out.attention, mask)


@dataclass
class LossBreakdown:
    total: torch.Tensor      # [B]
    single: torch.Tensor     # [B]
    multi: torch.Tensor      # [B] (selected or averaged variant loss)
    selected: torch.Tensor   # [B] argmin index, -1 when no variants


def loss_all(single: BranchOutput, multi: BranchOutput | None, gt_span, gt_cw, mask,
             lam: float = 0.02, min_loss: bool = True, heads: str = "both") -> LossBreakdown:
    """``L_single + lam * min_k L_k`` per sample.

    ``single`` fields are ``[B, ...]``, ``multi`` fields ``[B, K, ...]``. Ties in
    the min go to the lowest index. With ``min_loss=False`` every variant is
    regressed to the label (mean over K).
    """
    l_single = branch_loss(single, gt_span, gt_cw, mask, heads)
    if multi is None:
        empty = torch.full_like(l_single, -1, dtype=torch.long)
        return LossBreakdown(l_single, l_single, torch.zeros_like(l_single), empty)
    l_var = branch_loss(multi, gt_span.unsqueeze(1), gt_cw.unsqueeze(1), mask.unsqueeze(1), heads)  # [B, K]
    selected = torch.argmin(l_var.detach(), dim=1)
    if min_loss:
        l_multi = l_var.gather(1, selected[:, None]).squeeze(1)
    else:
        l_multi = l_var.mean(dim=1)
    return LossBreakdown(l_single + lam * l_multi, l_single, l_multi, selected)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    single_loss: float
    selected_loss: float


class Trainer:
    """Owns one model, its Adam state and the seeded shuffle/noise streams.

    ``objective="single"`` trains the single-branch loss alone and never runs the
    multi-output branch.
    """

    def __init__(self, model: GroundingModel, cfg: RunConfig, objective: str = "all"):
        self.model = model
        self.cfg = cfg
        self.objective = objective
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.train.lr,
                                          weight_decay=cfg.train.weight_decay)
        seed = cfg.train.seed
        self.shuffle_gen = torch.Generator().manual_seed(seed)
        self.noise_gen = torch.Generator().manual_seed(seed + 1_000_003)
        self.epoch = 0

    def step_loss(self, batch: Prepared) -> LossBreakdown:
        cfg = self.cfg
        K = 0 if self.objective == "single" else cfg.sampler.K_train
        single, multi = self.model(batch, K, cfg.sampler.sigma_train, self.noise_gen)
        return loss_all(single, multi, batch.gt_span, batch.gt_cw, batch.inside, cfg.loss.lam,
                        cfg.ablation.min_loss == "on", cfg.ablation.reg_heads)

    def train_epoch(self, data: Prepared) -> EpochStats:
        if len(data) == 0:
            raise ValueError("empty training set")
        self.model.train()
        order = torch.randperm(len(data), generator=self.shuffle_gen)
        bs = self.cfg.train.batch_size
        tot = sing = sel = 0.0
        for lo in range(0, len(data), bs):
            batch = data.take(order[lo:lo + bs])
            parts = self.step_loss(batch)
            bad = ~torch.isfinite(parts.total)
            if bad.any():
                # batch norm spreads a bad input over the whole batch; blame the input if we can
                bad_input = ~torch.isfinite(batch.video.flatten(1)).all(1)
                culprit = bad_input if bad_input.any() else bad
                qid = batch.query_ids[int(culprit.nonzero()[0, 0])]
                raise FloatingPointError(f"non-finite loss on sample {qid!r} (epoch {self.epoch})")
            loss = parts.total.mean()
            self.optimizer.zero_grad()
            loss.backward()
            self.optimizer.step()
            tot += float(parts.total.detach().sum())
            sing += float(parts.single.detach().sum())
            sel += float(parts.multi.detach().sum())
        self.epoch += 1
        n = len(data)
        return EpochStats(self.epoch, tot / n, sing / n, sel / n)

    def fit(self, data: Prepared, epochs: int | None = None, callback=None) -> list[EpochStats]:
        epochs = self.cfg.train.epochs if epochs is None else epochs
        history = []
        for _ in range(epochs):
            stats = self.train_epoch(data)
            log.info("epoch %d loss %.4f single %.4f selected %.4f", stats.epoch, stats.loss,
                     stats.single_loss, stats.selected_loss)
            history.append(stats)
            if callback:
                callback(stats)
        return history


def save_checkpoint(path, trainer: Trainer) -> None:
    """Parameters, optimizer state, RNG states, config and vocabulary in one file."""
    model = trainer.model
    cfg = replace(trainer.cfg, model=model.cfg, ablation=model.ablation)
    torch.save({
        "format": "tgrounding-checkpoint/1",
        "config": cfg.to_dict(),
        "vocab": model.vocab.itos,
        "model": model.state_dict(),
        "optimizer": trainer.optimizer.state_dict(),
        "shuffle_rng": trainer.shuffle_gen.get_state(),
        "noise_rng": trainer.noise_gen.get_state(),
        "epoch": trainer.epoch,
        "objective": trainer.objective,
        "seed": trainer.cfg.train.seed,
        "dtype": str(next(model.parameters()).dtype),
    }, path)


def load_checkpoint(path) -> Trainer:
    from .encoder import Vocabulary

    blob = torch.load(path, weights_only=False)
    cfg = RunConfig.from_dict(blob["config"])
    vocab = Vocabulary([])
    vocab.itos = list(blob["vocab"])
    vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
    # parameters come from the state dict; skip re-reading any word-vector file
    model = GroundingModel(vocab, replace(cfg.model, word_vectors=None), cfg.ablation)
    if blob["dtype"] == "torch.float64":
        model = model.double()
    model.load_state_dict(blob["model"])
    trainer = Trainer(model, cfg, blob.get("objective", "all"))
    trainer.optimizer.load_state_dict(blob["optimizer"])
    trainer.shuffle_gen.set_state(blob["shuffle_rng"])
    trainer.noise_gen.set_state(blob["noise_rng"])
    trainer.epoch = blob["epoch"]
    return trainer

"""Named model variants and the robustness / ablation studies built on them."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import RunConfig
from .infer import predict
from .metrics import evaluate, perturb_annotation
from .model import GroundingModel, build_vocab, prepare
from .synthdata import annotations_rows
from .train import Trainer

log = logging.getLogger(__name__)

# variant name -> config overrides (section__key)
VARIANTS = {
    "full": {},
    "no_pos": {"ablation__pos_mode": "none"},
    "relation_dist": {"ablation__pos_mode": "relation"},
    "all_dist": {"ablation__pos_mode": "all"},
    "boundary_only": {"ablation__reg_heads": "se"},
    "centerness_only": {"ablation__reg_heads": "cw"},
    "single_branch": {"ablation__single_branch_only": "on"},
    "no_min_loss": {"ablation__min_loss": "off"},
}


@dataclass
class RunResult:
    variant: str
    seed: int
    metrics: dict
    history: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    seconds: float = 0.0


def variant_config(cfg: RunConfig, variant: str, seed: int | None = None, **extra) -> RunConfig:
    changes = dict(VARIANTS[variant])
    if seed is not None:
        changes["train__seed"] = seed
    changes.update(extra)
    return cfg.override(**changes) if changes else cfg


def build_model(cfg: RunConfig, vocab) -> GroundingModel:
    torch.manual_seed(cfg.train.seed)
    return GroundingModel(vocab, cfg.model, cfg.ablation)


def train_model(cfg: RunConfig, train_samples, labels=None, objective="all"):
    vocab = build_vocab(train_samples)
    model = build_model(cfg, vocab)
    data = prepare(train_samples, vocab, cfg.model.T_m, labels, relation_tags=cfg.ablation.relation_tags)
    trainer = Trainer(model, cfg, objective)
    history = trainer.fit(data)
    return trainer, history


def evaluate_model(cfg: RunConfig, model: GroundingModel, test_samples):
    data = prepare(test_samples, model.vocab, cfg.model.T_m, relation_tags=cfg.ablation.relation_tags)
    preds = predict(model, data, cfg.sampler.K_infer, cfg.sampler.sigma_infer, cfg.infer.N,
                    seed=cfg.train.seed, kmeans_seed=cfg.infer.kmeans_seed)
    e = cfg.eval
    results = evaluate(preds, annotations_rows(test_samples), e.alpha, e.beta, e.N, e.G,
                       cfg.ablation.quality_self == "include", seed=cfg.train.seed)
    return preds, results


def run_variant(cfg: RunConfig, train_samples, test_samples, variant="full", seed=None,
                labels=None, **extra) -> RunResult:
    vcfg = variant_config(cfg, variant, seed, **extra)
    t0 = time.perf_counter()
    trainer, history = train_model(vcfg, train_samples, labels)
    preds, results = evaluate_model(vcfg, trainer.model, test_samples)
    metrics = {k: r.value for k, r in results.items()}
    dt = time.perf_counter() - t0
    log.info("%s seed=%s %s (%.1fs)", variant, vcfg.train.seed, metrics, dt)
    return RunResult(variant, vcfg.train.seed, metrics, history, preds, dt)


def perturbed_labels(samples, seed: int):
    rng = np.random.default_rng([seed, 7])
    return [perturb_annotation(s.primary_span, rng) for s in samples]


def robustness_study(cfg: RunConfig, train_samples, test_samples) -> list[dict]:
    """Per variant and seed: clean vs label-noise training, plus paraphrase consistency."""
    rows = []
    for seed in cfg.robustness.seeds:
        noisy = perturbed_labels(train_samples, seed) if cfg.robustness.label_noise else None
        for variant in cfg.robustness.variants:
            clean = run_variant(cfg, train_samples, test_samples, variant, seed)
            row = {
                "variant": variant, "seed": seed,
                "d_var": clean.metrics.get("d_var", float("nan")),
                "recall_at_1": clean.metrics["recall_at_1"],
                "recall_multi": clean.metrics["recall_multi"],
                "recall_multi_beta_clean": clean.metrics["recall_multi_beta"],
            }
            if noisy is not None:
                pert = run_variant(cfg, train_samples, test_samples, variant, seed, labels=noisy)
                row["recall_multi_beta_noisy"] = pert.metrics["recall_multi_beta"]
                row["recall_multi_beta_drop"] = row["recall_multi_beta_clean"] - row["recall_multi_beta_noisy"]
            rows.append(row)
    return rows


def ablation_study(cfg: RunConfig, train_samples, test_samples) -> list[dict]:
    """One row per named variant, then one row per block depth of the full model."""
    rows = []
    keys = ["recall_at_1", f"recall_at_{cfg.eval.N}", "recall_multi", "recall_multi_beta"]
    for variant in cfg.ablate.variants:
        r = run_variant(cfg, train_samples, test_samples, variant)
        rows.append({"variant": variant, "blocks": cfg.model.blocks, **{k: r.metrics[k] for k in keys}})
    for depth in cfg.ablate.depths:
        r = run_variant(cfg, train_samples, test_samples, "full", model__blocks=int(depth))
        rows.append({"variant": f"depth_{depth}", "blocks": int(depth), **{k: r.metrics[k] for k in keys}})
    return rows

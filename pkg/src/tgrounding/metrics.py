"""Single- and multi-label recall metrics, paraphrase consistency and label perturbation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AnnotationSet, TemporalSpan, sanitize_span, temporal_iou

# threshold comparisons absorb float rounding so that exact ties count as matches
TIE_EPS = 1e-9


def _reaches(value: float, threshold: float) -> bool:
    return value >= threshold - TIE_EPS


def recall_at_n(ranked: Sequence[TemporalSpan], gt: TemporalSpan, alpha: float, N: int) -> float:
    """1.0 if any of the top-``N`` predictions has IoU >= ``alpha`` with ``gt``."""
    return float(any(_reaches(temporal_iou(p, gt), alpha) for p in ranked[:N]))


def matched_annotations(ranked, annotations, alpha: float, N: int) -> list[bool]:
    top = ranked[:N]
    return [any(_reaches(temporal_iou(p, a), alpha) for p in top) for a in annotations]


def recall_multi(ranked, annotations, alpha: float, N: int) -> float:
    """Fraction of annotations matched by at least one top-``N`` prediction."""
    hits = matched_annotations(ranked, annotations, alpha, N)
    return sum(hits) / len(hits)


def annotation_quality(annotations, include_self: bool = True) -> list[float]:
    """Mean IoU of each annotation against the set (optionally excluding itself)."""
    spans = list(annotations)
    G = len(spans)
    out = []
    for j, a in enumerate(spans):
        ious = [temporal_iou(a, b) for k, b in enumerate(spans) if include_self or k != j]
        out.append(math.fsum(ious) / len(ious) if ious else 1.0)
    return out if G else []


def recall_multi_beta(ranked, annotations, alpha: float, beta: float, N: int,
                      include_self: bool = True) -> float | None:
    """``recall_multi`` over annotations with quality >= ``beta``; ``None`` when none survive."""
    quality = annotation_quality(annotations, include_self)
    kept = [a for a, q in zip(annotations, quality) if _reaches(q, beta)]
    if not kept:
        return None
    return recall_multi(ranked, kept, alpha, N)


def d_var(pairs) -> float:
    """Mean ``1 - IoU`` between the top-1 predictions of paraphrase pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("d_var needs at least one pair")
    return math.fsum(1.0 - temporal_iou(a, b) for a, b in pairs) / len(pairs)


def perturb_annotation(gt: TemporalSpan, rng=None, eps=None) -> TemporalSpan:
    """Move each boundary by ``U(-0.5, 0.5)`` times the span width, then sanitize.

    ``eps`` fixes ``(eps_start, eps_end)`` instead of drawing from ``rng``.
    """
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng()
        eps = rng.uniform(-0.5, 0.5, size=2)
    width = gt.end - gt.start
    return sanitize_span(gt.start + eps[0] * width, gt.end + eps[1] * width)


# -- dataset-level evaluation -------------------------------------------------

@dataclass
class EvalResult:
    name: str
    value: float
    per_query: dict = field(default_factory=dict)
    evaluated: int = 0
    skipped: int = 0
    params: dict = field(default_factory=dict)


def _aggregate(name, per_query, params):
    vals = [v for v in per_query.values() if v is not None]
    value = math.fsum(vals) / len(vals) if vals else float("nan")
    return EvalResult(name, value, per_query, len(vals), len(per_query) - len(vals), params)


def paraphrase_pairs(groups: dict, top1: dict, seed: int = 0):
    """Two randomly chosen members per paraphrase group -> list of top-1 span pairs."""
    rng = np.random.default_rng(seed)
    pairs = []
    for g in sorted(groups):
        members = [q for q in sorted(groups[g]) if q in top1]
        if len(members) < 2:
            continue
        a, b = rng.choice(len(members), size=2, replace=False)
        pairs.append((top1[members[a]], top1[members[b]]))
    return pairs


def evaluate(predictions, annotation_rows, alpha=0.5, beta=0.5, N=5, G=5,
             include_self=True, seed=0) -> dict[str, EvalResult]:
    """Score ranked predictions against multi-annotator labels.

    ``predictions`` is a list of objects with ``query_id`` and ``ranked``;
    ``annotation_rows`` are dicts with ``query_id``, ``spans`` and optionally
    ``primary`` and ``paraphrase_group``.
    """
    ann = {}
    groups: dict[str, list] = {}
    for row in annotation_rows:
        spans = [sanitize_span(s, e) for s, e in row["spans"]]
        ann[row["query_id"]] = (AnnotationSet(tuple(spans[:G])), spans[int(row.get("primary") or 0)])
        if row.get("paraphrase_group") is not None:
            groups.setdefault(row["paraphrase_group"], []).append(row["query_id"])
    per = {k: {} for k in ("r1", "rn", "rm1", "rm", "rmb")}
    top1 = {}
    for p in predictions:
        if p.query_id not in ann:
            continue
        annotations, primary = ann[p.query_id]
        ranked = list(p.ranked)
        top1[p.query_id] = ranked[0]
        per["r1"][p.query_id] = recall_at_n(ranked, primary, alpha, 1)
        per["rn"][p.query_id] = recall_at_n(ranked, primary, alpha, N)
        per["rm1"][p.query_id] = recall_multi(ranked, annotations, alpha, 1)
        per["rm"][p.query_id] = recall_multi(ranked, annotations, alpha, N)
        per["rmb"][p.query_id] = recall_multi_beta(ranked, annotations, alpha, beta, N, include_self)
    out = {
        "recall_at_1": _aggregate("recall_at_1", per["r1"], {"alpha": alpha, "N": 1, "G": 1}),
        f"recall_at_{N}": _aggregate(f"recall_at_{N}", per["rn"], {"alpha": alpha, "N": N, "G": 1}),
        "recall_multi_at_1": _aggregate("recall_multi_at_1", per["rm1"], {"alpha": alpha, "N": 1, "G": G}),
        "recall_multi": _aggregate("recall_multi", per["rm"], {"alpha": alpha, "N": N, "G": G}),
        "recall_multi_beta": _aggregate("recall_multi_beta", per["rmb"],
                                        {"alpha": alpha, "beta": beta, "N": N, "G": G}),
    }
    pairs = paraphrase_pairs(groups, top1, seed)
    if pairs:
        out["d_var"] = EvalResult("d_var", d_var(pairs), evaluated=len(pairs), params={"pairs": len(pairs)})
    return out


def results_json(results: dict[str, EvalResult]) -> dict:
    out = {}
    for name, r in results.items():
        entry = dict(r.params)
        entry["value"] = r.value
        entry["evaluated"] = r.evaluated
        entry["skipped"] = r.skipped
        out[name] = entry
    return out


def write_results(results: dict[str, EvalResult], json_path, csv_path) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(results_json(results), fh, indent=2, sort_keys=True)
        fh.write("\n")
    names = [n for n, r in results.items() if r.per_query]
    qids = sorted({q for n in names for q in results[n].per_query})
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id"] + names)
        for q in qids:
            row = [q]
            for n in names:
                v = results[n].per_query.get(q)
                row.append("" if v is None else repr(v))
            w.writerow(row)

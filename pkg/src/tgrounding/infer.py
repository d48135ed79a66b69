"""De-bias inference: sample many query variants, cluster their spans, rank by the single prediction."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .core import TemporalSpan, sanitize_span
from .model import GroundingModel, Prepared


@dataclass
class PredictionSet:
    query_id: str
    single: TemporalSpan
    ranked: list

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "single": list(self.single.as_tuple()),
                "ranked": [list(s.as_tuple()) for s in self.ranked]}

    @classmethod
    def from_json(cls, row: dict) -> "PredictionSet":
        return cls(row["query_id"], sanitize_span(*row["single"]),
                   [sanitize_span(s, e) for s, e in row["ranked"]])


def sanitize_array(spans: np.ndarray) -> np.ndarray:
    """Vectorized clamp-and-swap on ``[..., 2]`` arrays."""
    x = np.clip(spans, 0.0, 1.0)
    return np.stack([x.min(axis=-1), x.max(axis=-1)], axis=-1)


@torch.no_grad()
def collect_predictions(model: GroundingModel, batch: Prepared, K_infer: int, sigma_infer: float,
                        generator=None, chunk: int = 8):
    """Single-branch spans ``[B, 2]`` and ``K_infer`` variant spans ``[B, K, 2]``, both sanitized."""
    model.eval()
    singles, variants = [], []
    for lo in range(0, len(batch), chunk):
        sub = batch.take(range(lo, min(lo + chunk, len(batch))))
        single, multi = model(sub, K_infer, sigma_infer, generator)
        singles.append(model.output_spans(single).double().numpy())
        variants.append(model.output_spans(multi).double().numpy())
    return sanitize_array(np.concatenate(singles)), sanitize_array(np.concatenate(variants))


@dataclass
class KMeansResult:
    centroids: np.ndarray   # [N, 2]
    labels: np.ndarray      # [M] cluster of each (sorted) input point
    sse: list               # within-cluster SSE after each update step
    iterations: int


def _sse(points, centroids, labels):
    return float(((points - centroids[labels]) ** 2).sum())


def _centroid(members):
    # shifted mean: exact when all members coincide
    return members[0] + (members - members[0]).mean(axis=0)


def _seed_centroids(points, k, rng):
    """k-means++ seeding (D^2 sampling)."""
    centroids = [points[rng.integers(len(points))]]
    for _ in range(1, k):
        d2 = ((points[:, None, :] - np.asarray(centroids)[None]) ** 2).sum(-1).min(axis=1)
        total = d2.sum()
        if total <= 0:
            break
        centroids.append(points[rng.choice(len(points), p=d2 / total)])
    return np.array(centroids)


def lloyd(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm on a canonically sorted copy of ``points``.

    An emptied cluster takes the point farthest from its current centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    pts = pts[np.lexsort(pts.T[::-1])]
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(pts, k, rng)
    k = len(centroids)
    labels = np.zeros(len(pts), dtype=int)
    sse = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((pts[:, None, :] - centroids[None]) ** 2).sum(-1)
        labels = d2.argmin(axis=1)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = d2[np.arange(len(pts)), labels]
            # only steal from clusters that keep at least one point
            movable = counts[labels] > 1
            far = int(np.argmax(np.where(movable, own, -1.0)))
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
        new = np.array([_centroid(pts[labels == j]) for j in range(k)])
        sse.append(_sse(pts, new, labels))
        shift = np.sqrt(((new - centroids) ** 2).sum(-1)).max()
        centroids = new
        if shift < tol:
            break
    return KMeansResult(centroids, labels, sse, it)


def kmeans_spans(spans, N: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> list[TemporalSpan]:
    """Cluster ``M`` span points into exactly ``N`` sanitized centroid spans.

    With fewer than ``N`` distinct points the centroids of the largest clusters
    are duplicated to fill the set.
    """
    pts = np.array([s.as_tuple() if isinstance(s, TemporalSpan) else s for s in spans], dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 1:
        raise ValueError("need at least one span to cluster")
    if N < 1:
        raise ValueError("N must be positive")
    pts = sanitize_array(pts)
    distinct = len(np.unique(pts, axis=0))
    res = lloyd(pts, min(N, distinct), seed, max_iter, tol)
    centroids = list(res.centroids)
    sizes = np.bincount(res.labels, minlength=len(centroids))
    by_size = sorted(range(len(centroids)), key=lambda j: (-sizes[j], j))
    i = 0
    while len(centroids) < N:
        centroids.append(res.centroids[by_size[i % len(by_size)]])
        i += 1
    return [sanitize_span(*c) for c in centroids]


def rank_by_single(centroids, single: TemporalSpan) -> list[TemporalSpan]:
    """Ascending Euclidean distance to ``single`` in (start, end); ties by start."""
    if not centroids:
        raise ValueError("nothing to rank")

    def key(c):
        return ((c.start - single.start) ** 2 + (c.end - single.end) ** 2, c.start, c.end)

    return sorted(centroids, key=key)


def predict(model: GroundingModel, data: Prepared, K_infer: int = 200, sigma_infer: float = 2.0,
            N: int = 5, seed: int = 0, kmeans_seed: int = 0) -> list[PredictionSet]:
    gen = torch.Generator().manual_seed(seed)
    singles, variants = collect_predictions(model, data, K_infer, sigma_infer, gen)
    out = []
    for qid, s, v in zip(data.query_ids, singles, variants):
        single = sanitize_span(*s)
        centroids = kmeans_spans(v, N, kmeans_seed)
        out.append(PredictionSet(qid, single, rank_by_single(centroids, single)))
    return out


def write_predictions(preds, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_json()) + "\n")


def read_predictions(path) -> list[PredictionSet]:
    with open(path, encoding="utf-8") as fh:
        return [PredictionSet.from_json(json.loads(line)) for line in fh if line.strip()]

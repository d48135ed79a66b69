"""Span arithmetic, temporal IoU and the shared sample types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class TemporalSpan:
    """Normalized ``[start, end]`` interval on the video time axis."""

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= self.end <= 1.0):
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    @property
    def width(self) -> float:
        return self.end - self.start

    def as_tuple(self) -> tuple[float, float]:
        return (self.start, self.end)


@dataclass(frozen=True)
class CenterWidth:
    center: float
    width: float


@dataclass(frozen=True)
class AnnotationSet:
    spans: tuple[TemporalSpan, ...]

    def __post_init__(self):
        if len(self.spans) < 1:
            raise ValueError("annotation set needs at least one span")

    def __len__(self):
        return len(self.spans)

    def __getitem__(self, i):
        return self.spans[i]

    def __iter__(self):
        return iter(self.spans)


@dataclass
class GroundingSample:
    """One training/evaluation record.

    ``clip_features`` is channel-major ``[d_v, T]``. ``query`` is a
    :class:`tgrounding.posdecouple.Query`.
    """

    query_id: str
    clip_features: np.ndarray
    query: object
    annotations: AnnotationSet
    primary_annotation_index: int = 0
    paraphrase_group: str | None = None
    event: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clip_features.ndim != 2 or self.clip_features.shape[1] < 1:
            raise ValueError(f"{self.query_id}: clip features must be [d_v, T] with T >= 1")
        if not 0 <= self.primary_annotation_index < len(self.annotations):
            raise ValueError(f"{self.query_id}: primary_annotation_index out of range")

    @property
    def primary_span(self) -> TemporalSpan:
        return self.annotations[self.primary_annotation_index]


def span_to_centerwidth(s: TemporalSpan) -> CenterWidth:
    return CenterWidth((s.start + s.end) / 2.0, s.end - s.start)


def centerwidth_to_span(cw: CenterWidth) -> TemporalSpan:
    half = cw.width / 2.0
    return sanitize_span(cw.center - half, cw.center + half)


def sanitize_span(start: float, end: float) -> TemporalSpan:
    """Clamp both coordinates to [0, 1] and swap them if inverted."""
    s = min(max(float(start), 0.0), 1.0)
    e = min(max(float(end), 0.0), 1.0)
    if s > e:
        s, e = e, s
    return TemporalSpan(s, e)


def temporal_iou(a: TemporalSpan, b: TemporalSpan) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def inside_mask(gt: TemporalSpan, T_m: int) -> np.ndarray:
    """Binary clip-membership mask using clip centers ``(i + 0.5) / T_m``."""
    if T_m < 1:
        raise ValueError("T_m must be >= 1")
    centers = (np.arange(T_m) + 0.5) / T_m
    mask = ((centers >= gt.start) & (centers <= gt.end)).astype(np.float64)
    if not mask.any():
        mid = (gt.start + gt.end) / 2.0
        mask[int(np.argmin(np.abs(centers - mid)))] = 1.0
    return mask


def uniform_resample(features: np.ndarray, T_m: int) -> np.ndarray:
    """Select ``T_m`` evenly spaced columns, or zero-pad when ``T < T_m``."""
    d_v, T = features.shape
    if T < 1:
        raise ValueError("need at least one clip")
    if T >= T_m:
        if T_m == 1:
            idx = np.zeros(1, dtype=int)
        else:
            # integer round-half-up of j * (T - 1) / (T_m - 1)
            j = np.arange(T_m)
            idx = (2 * j * (T - 1) + (T_m - 1)) // (2 * (T_m - 1))
        return features[:, idx]
    out = np.zeros((d_v, T_m), dtype=features.dtype)
    out[:, :T] = features
    return out


def as_spans(pairs: Sequence[Sequence[float]]) -> list[TemporalSpan]:
    return [TemporalSpan(float(s), float(e)) for s, e in pairs]

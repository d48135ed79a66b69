"""Synthetic grounding data with query and label uncertainty, plus on-disk I/O.

Disk layout: a JSON-lines dataset file (``query_id``, ``tokens``, ``spans``,
``paraphrase_group``, ``feature_ref``, ``primary``) next to a directory of
feature blobs. Each blob is little-endian float32 in time-major ``[T, d_v]``
order with a JSON sidecar ``<blob>.json`` holding ``{"shape": [T, d_v]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import AnnotationSet, GroundingSample, TemporalSpan, sanitize_span, temporal_iou
from .posdecouple import TagLexicon, make_query

NOUNS = ("door", "dishes", "laptop", "window", "book", "towel", "shoes", "blanket", "cup", "phone",
         "refrigerator", "broom", "sandwich", "picture", "mirror", "camera", "bottle", "guitar",
         "pillow", "jacket")
VERBS = ("opening", "washing", "holding", "closing", "reading", "throwing", "putting", "fixing",
         "drinking", "taking", "cleaning", "sweeping", "eating", "watching", "turning", "pouring",
         "playing", "looking", "tidying", "grasping")
DETS = ("a", "the", "this", "some")
AUXES = ("is", "was", "are", "were")
MODIFIERS = ("quickly", "slowly", "carefully", "then", "again", "quietly", "gently", "suddenly",
             "there", "here", "away", "back", "in", "on", "at", "with", "near", "behind", "their",
             "his", "her", "red", "small", "old", "new", "dirty", "happy", "very", "also", "still")


@dataclass
class GeneratorConfig:
    n_samples: int = 600
    T: int = 64
    d_v: int = 32
    n_events: int = 8
    signature_scale: float = 1.0
    noise_scale: float = 0.3
    annotators: int = 5
    jitter: float = 0.15
    bimodal_prob: float = 0.3
    paraphrase_prob: float = 0.0
    distractors: int = 1
    min_width: float = 0.15
    max_width: float = 0.45
    max_modifiers: int = 3
    seed: int = 0

    def validate(self):
        for name in ("n_samples", "T", "d_v", "n_events", "annotators", "max_modifiers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("bimodal_prob", "paraphrase_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.jitter < 0 or self.noise_scale < 0 or self.distractors < 0:
            raise ValueError("jitter, noise_scale and distractors must be non-negative")
        if not 0.0 < self.min_width <= self.max_width <= 1.0:
            raise ValueError("need 0 < min_width <= max_width <= 1")
        if self.n_events > min(len(NOUNS), len(VERBS)):
            raise ValueError(f"vocabulary too small for {self.n_events} distinct events "
                             f"(at most {min(len(NOUNS), len(VERBS))})")
        if self.distractors >= self.n_events:
            raise ValueError("need more events than distractors per video")


@dataclass
class SyntheticWorld:
    """Token signatures and the event list shared by every generated sample."""

    events: list[tuple[str, str]]
    token_signatures: dict[str, np.ndarray]

    def event_signature(self, event: int) -> np.ndarray:
        noun, verb = self.events[event]
        return self.token_signatures[noun] + self.token_signatures[verb]

    def signature_matrix(self) -> np.ndarray:
        return np.stack([self.event_signature(e) for e in range(len(self.events))])


def build_world(cfg: GeneratorConfig) -> SyntheticWorld:
    rng = np.random.default_rng([cfg.seed, 0])
    events = list(zip(NOUNS[: cfg.n_events], VERBS[: cfg.n_events]))
    sigs = {}
    for noun, verb in events:
        for tok in (noun, verb):
            sigs[tok] = (cfg.signature_scale * rng.standard_normal(cfg.d_v) / np.sqrt(cfg.d_v)).astype(np.float32)
    world = SyntheticWorld(events, sigs)
    rank = np.linalg.matrix_rank(world.signature_matrix().astype(np.float64))
    if rank != cfg.n_events:
        raise ValueError(f"event signatures are rank {rank} < {cfg.n_events}; increase d_v")
    return world


def _query_tokens(rng, noun, verb, max_modifiers):
    n_mod = int(rng.integers(1, max_modifiers + 1))
    mods = [MODIFIERS[i] for i in rng.integers(0, len(MODIFIERS), size=n_mod)]
    return [DETS[rng.integers(len(DETS))], noun, AUXES[rng.integers(len(AUXES))], verb] + mods


def _place_spans(rng, cfg, n):
    """Draw ``n`` disjoint spans (first one is the target)."""
    for _ in range(1000):
        spans = []
        for _ in range(n):
            w = rng.uniform(cfg.min_width, cfg.max_width)
            s = rng.uniform(0.0, 1.0 - w)
            spans.append((s, s + w))
        ok = all(b[0] >= a[1] or a[0] >= b[1] for i, a in enumerate(spans) for b in spans[i + 1:])
        if ok:
            return spans
    raise ValueError("could not place disjoint distractor spans; lower max_width or distractors")


def _annotate(rng, cfg, start, end):
    width = end - start
    out = []
    for _ in range(cfg.annotators):
        s = start + rng.uniform(-cfg.jitter, cfg.jitter) * width
        e = end + rng.uniform(-cfg.jitter, cfg.jitter) * width
        if rng.random() < cfg.bimodal_prob:
            s -= 0.5 * width
        out.append(sanitize_span(s, e))
    return AnnotationSet(tuple(out))


def _clip_inside(T, start, end):
    centers = (np.arange(T) + 0.5) / T
    return (centers >= start) & (centers <= end)


def generate(cfg: GeneratorConfig, lexicon: TagLexicon | None = None) -> list[GroundingSample]:
    """Generate ``cfg.n_samples`` moments; paraphrase twins are appended right after their source."""
    cfg.validate()
    lexicon = lexicon or TagLexicon.default_english()
    world = build_world(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    samples = []
    for n in range(cfg.n_samples):
        event = int(rng.integers(cfg.n_events))
        others = [e for e in range(cfg.n_events) if e != event]
        distract = [others[i] for i in rng.choice(len(others), size=cfg.distractors, replace=False)]
        spans = _place_spans(rng, cfg, 1 + cfg.distractors)
        feats = (cfg.noise_scale * rng.standard_normal((cfg.d_v, cfg.T))).astype(np.float32)
        for ev, (s, e) in zip([event] + distract, spans):
            feats[:, _clip_inside(cfg.T, s, e)] += world.event_signature(ev)[:, None]
        true = TemporalSpan(*spans[0])
        annotations = _annotate(rng, cfg, true.start, true.end)
        primary = int(rng.integers(cfg.annotators))
        noun, verb = world.events[event]
        qid = f"q{n:05d}"
        group = None
        twin_tokens = None
        if rng.random() < cfg.paraphrase_prob:
            group = f"g{n:05d}"
            twin_tokens = _query_tokens(rng, noun, verb, cfg.max_modifiers)
        tokens = _query_tokens(rng, noun, verb, cfg.max_modifiers)
        meta = {"true_span": list(true.as_tuple()), "video_id": f"v{n:05d}"}
        samples.append(GroundingSample(qid, feats, make_query(tokens, lexicon), annotations, primary,
                                       group, event, dict(meta)))
        if twin_tokens is not None:
            samples.append(GroundingSample(qid + "p", feats, make_query(twin_tokens, lexicon), annotations,
                                           primary, group, event, dict(meta)))
    return samples


def oracle_localize(sample: GroundingSample, world: SyntheticWorld) -> TemporalSpan:
    """Localize by projecting each clip on the queried event's signature.

    The span is the contiguous clip run maximizing the summed excess of the
    projection over half the signature norm.
    """
    sig = world.event_signature(sample.event).astype(np.float64)
    norm = np.linalg.norm(sig)
    score = sig @ sample.clip_features.astype(np.float64) / norm - 0.5 * norm
    T = score.size
    best, best_span = -np.inf, (0, T)
    run, run_start = 0.0, 0
    for i in range(T):
        if run <= 0.0:
            run, run_start = 0.0, i
        run += score[i]
        if run > best:
            best, best_span = run, (run_start, i + 1)
    return TemporalSpan(best_span[0] / T, best_span[1] / T)


def oracle_recall(samples, world, alpha=0.5) -> float:
    hits = [temporal_iou(oracle_localize(s, world), s.primary_span) >= alpha for s in samples]
    return float(np.mean(hits))


def split(dataset, train_fraction: float, seed: int = 0):
    """Shuffle and split, keeping each paraphrase group on one side."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    groups: dict[str, list] = {}
    for s in dataset:
        groups.setdefault(s.paraphrase_group or f"__{s.query_id}", []).append(s)
    keys = list(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    target = round(train_fraction * len(dataset))
    train, test = [], []
    for i in order:
        members = groups[keys[i]]
        if len(train) + len(members) <= target:
            train.extend(members)
        else:
            test.extend(members)
    return train, test


# -- disk I/O ---------------------------------------------------------------

def write_features(features: np.ndarray, path) -> None:
    """Write channel-major ``[d_v, T]`` features as a time-major float32 blob plus sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tm = np.ascontiguousarray(features.T, dtype="<f4")
    path.write_bytes(tm.tobytes())
    path.with_name(path.name + ".json").write_text(json.dumps({"shape": list(tm.shape)}))


def read_features(path) -> np.ndarray:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not path.exists():
        raise FileNotFoundError(f"missing feature blob: {path}")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing feature sidecar: {sidecar}")
    shape = json.loads(sidecar.read_text())["shape"]
    if len(shape) != 2:
        raise ValueError(f"{sidecar}: shape must be [T, d_v], got {shape}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: sidecar shape {shape} needs {shape[0] * shape[1]} values, blob has {raw.size}")
    return raw.reshape(shape).T.astype(np.float32)


def write_dataset(samples, directory, name="dataset.jsonl") -> Path:
    """Write a dataset file plus feature blobs; paraphrase twins share one blob."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    path = directory / name
    written = {}
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            video = s.meta.get("video_id", s.query_id)
            ref = f"features/{video}.f32"
            if ref not in written:
                write_features(s.clip_features, directory / ref)
                written[ref] = True
            row = {
                "query_id": s.query_id,
                "tokens": list(s.query.tokens),
                "spans": [list(sp.as_tuple()) for sp in s.annotations],
                "paraphrase_group": s.paraphrase_group,
                "feature_ref": ref,
                "primary": s.primary_annotation_index,
            }
            if s.event is not None:
                row["event"] = s.event
            if s.meta:
                row["meta"] = s.meta
            fh.write(json.dumps(row) + "\n")
    return path


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None


def ingest_external(features_manifest, annotations_file, lexicon: TagLexicon | None = None):
    """Join a features manifest and an annotations file by ``query_id``.

    Manifest rows carry ``query_id``, ``feature_ref`` (relative to the manifest)
    and ``tokens`` (optionally ``tags`` from an external tagger). Annotation rows
    carry ``query_id``, ``spans`` and optionally ``paraphrase_group``/``primary``.
    """
    lexicon = lexicon or TagLexicon.default_english()
    base = Path(features_manifest).parent
    ann = {}
    for row in read_jsonl(annotations_file):
        qid = row["query_id"]
        if qid in ann:
            raise ValueError(f"duplicate query_id {qid!r} in {annotations_file}")
        ann[qid] = row
    seen = set()
    samples = []
    cache = {}
    for row in read_jsonl(features_manifest):
        qid = row["query_id"]
        if qid in seen:
            raise ValueError(f"duplicate query_id {qid!r} in {features_manifest}")
        seen.add(qid)
        if qid not in ann:
            raise ValueError(f"query_id {qid!r} has no annotations in {annotations_file}")
        a = ann[qid]
        ref = row["feature_ref"]
        if ref not in cache:
            cache[ref] = read_features(base / ref)
        spans = AnnotationSet(tuple(sanitize_span(s, e) for s, e in a["spans"]))
        query = make_query(row["tokens"], lexicon, tags=row.get("tags"))
        samples.append(GroundingSample(
            qid, cache[ref], query, spans, int(a.get("primary", 0)),
            a.get("paraphrase_group"), row.get("event"), row.get("meta") or {},
        ))
    return samples


def load_dataset(path, lexicon: TagLexicon | None = None):
    """Read a dataset file written by :func:`write_dataset`."""
    return ingest_external(path, path, lexicon)


def annotations_rows(samples):
    return [{"query_id": s.query_id, "spans": [list(sp.as_tuple()) for sp in s.annotations],
             "paraphrase_group": s.paraphrase_group, "primary": s.primary_annotation_index}
            for s in samples]

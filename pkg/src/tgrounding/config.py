"""Run configuration: one JSON document, one dataclass per section.

Unknown keys are rejected with a :class:`ConfigError` naming the dotted key.
Defaults are desk-scale; :func:`full_scale` returns the full-size model.
"""

from __future__ import annotations

import copy
import json
from dataclasses import MISSING, asdict, dataclass, field, fields, replace

from .posdecouple import TAGS
from .synthdata import GeneratorConfig


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ModelConfig:
    d_v: int = 32
    d_l: int = 32
    d_m: int = 32
    d_w: int = 32
    T_m: int = 32
    blocks: int = 2
    heads: int = 4
    kernel: int = 3
    positional: bool = True
    dropout: float = 0.0
    word_vectors: str | None = None

    def check(self):
        if not self.d_v == self.d_l == self.d_m:
            raise ConfigError("model.d_m", "d_v, d_l and d_m must be equal")
        if self.d_m % self.heads:
            raise ConfigError("model.heads", "must divide d_m")
        if self.kernel % 2 == 0:
            raise ConfigError("model.kernel", "must be odd")
        if self.d_l % 2:
            raise ConfigError("model.d_l", "must be even")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout", "must lie in [0, 1)")
        for name in ("T_m", "blocks", "heads", "d_w"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}", "must be positive")


@dataclass
class SamplerConfig:
    sigma_train: float = 1.0
    sigma_infer: float = 2.0
    K_train: int = 5
    K_infer: int = 200

    def check(self):
        for name in ("sigma_train", "sigma_infer", "K_train", "K_infer"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"sampler.{name}", "must be positive")


@dataclass
class LossConfig:
    lam: float = 0.02

    def check(self):
        if not (self.lam >= 0 and self.lam != float("inf")):
            raise ConfigError("loss.lambda", "must be finite and non-negative")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 30
    seed: int = 0
    weight_decay: float = 0.0

    def check(self):
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be positive")
        if self.lr < 0 or self.epochs < 0 or self.weight_decay < 0:
            raise ConfigError("train", "lr, epochs and weight_decay must be non-negative")


@dataclass
class InferConfig:
    N: int = 5
    kmeans_seed: int = 0

    def check(self):
        if self.N < 1:
            raise ConfigError("infer.N", "must be positive")


@dataclass
class EvalConfig:
    alpha: float = 0.5
    beta: float = 0.5
    N: int = 5
    G: int = 5

    def check(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError("eval.alpha", "must lie in (0, 1]")
        if not 0 <= self.beta < 1:
            raise ConfigError("eval.beta", "must lie in [0, 1)")
        if self.N < 1 or self.G < 1:
            raise ConfigError("eval.N", "N and G must be positive")


_CHOICES = {
    "pos_mode": ("modified", "relation", "all", "none"),
    "fusion_norm": ("column", "global"),
    "min_loss": ("on", "off"),
    "single_branch_only": ("on", "off"),
    "quality_self": ("include", "exclude"),
    "reg_heads": ("both", "se", "cw"),
}


@dataclass
class AblationConfig:
    pos_mode: str = "modified"
    fusion_norm: str = "column"
    min_loss: str = "on"
    single_branch_only: str = "off"
    quality_self: str = "include"
    reg_heads: str = "both"
    relation_tags: list = field(default_factory=lambda: ["NOUN", "VERB"])

    def check(self):
        for name, allowed in _CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"ablation.{name}", f"must be one of {allowed}")
        if not self.relation_tags or any(t not in TAGS for t in self.relation_tags):
            raise ConfigError("ablation.relation_tags", f"must be a non-empty subset of {TAGS}")


@dataclass
class DataConfig(GeneratorConfig):
    train_fraction: float = 5 / 6

    def check(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigError("data.train_fraction", "must lie in (0, 1)")
        try:
            self.validate()
        except ValueError as exc:
            raise ConfigError("data", str(exc)) from None

    def generator(self) -> GeneratorConfig:
        d = asdict(self)
        d.pop("train_fraction")
        return GeneratorConfig(**d)


@dataclass
class AblateConfig:
    variants: list = field(default_factory=lambda: [
        "full", "no_pos", "relation_dist", "all_dist",
        "boundary_only", "centerness_only", "single_branch", "no_min_loss",
    ])
    depths: list = field(default_factory=lambda: [1, 2, 3, 4])

    def check(self):
        from .experiments import VARIANTS

        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError("ablate.variants", f"unknown variant {v!r}")
        if any(int(d) < 1 for d in self.depths):
            raise ConfigError("ablate.depths", "depths must be positive")


@dataclass
class RobustnessConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    variants: list = field(default_factory=lambda: ["full", "single_branch", "no_pos"])
    label_noise: bool = True

    def check(self):
        from .experiments import VARIANTS

        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError("robustness.variants", f"unknown variant {v!r}")


SECTIONS = {
    "model": ModelConfig,
    "sampler": SamplerConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "infer": InferConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
    "data": DataConfig,
    "ablate": AblateConfig,
    "robustness": RobustnessConfig,
}
_ALIASES = {("loss", "lambda"): "lam"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)

    def check(self):
        for name in SECTIONS:
            getattr(self, name).check()
        return self

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            for (sec, key), attr in _ALIASES.items():
                if sec == name:
                    d[key] = d.pop(attr)
            out[name] = d
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        kwargs = {}
        for name, value in doc.items():
            if name not in SECTIONS:
                raise ConfigError(name, "unknown config section")
            if not isinstance(value, dict):
                raise ConfigError(name, "section must be a JSON object")
            sec_cls = SECTIONS[name]
            known = {f.name: f for f in fields(sec_cls)}
            args = {}
            for key, v in value.items():
                attr = _ALIASES.get((name, key))
                if attr is None:
                    hidden = any(sec == name and a == key for (sec, _), a in _ALIASES.items())
                    if key not in known or hidden:
                        raise ConfigError(f"{name}.{key}", "unknown config key")
                    attr = key
                args[attr] = _coerce(f"{name}.{key}", known[attr], v)
            kwargs[name] = sec_cls(**args)
        return cls(**kwargs).check()

    def override(self, **changes) -> "RunConfig":
        """Return a copy with ``section__key=value`` changes applied."""
        cfg = copy.deepcopy(self)
        for dotted, value in changes.items():
            sec, key = dotted.split("__", 1)
            setattr(cfg, sec, replace(getattr(cfg, sec), **{key: value}))
        return cfg.check()


def _coerce(key, f, value):
    default = None if f.default is MISSING else f.default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "expected a number")
        return float(value)
    return value


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().check()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return RunConfig.from_dict(doc)


def full_scale() -> RunConfig:
    """Full-size model: T_m=128, d=512, three blocks."""
    return RunConfig(model=ModelConfig(d_v=512, d_l=512, d_m=512, d_w=300, T_m=128, blocks=3)).check()

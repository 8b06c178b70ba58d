"""Run configuration: model, episode protocol and training schedule."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml


@dataclass
class ModelConfig:
    image_size: int = 32
    stem_norm: bool = True  # standardize each stem channel per image before the projection heads
    use_amff: bool = True
    use_acasff: bool = True
    head: str = "ridge"  # "ridge" or "proto"
    dwt_levels: int = 3
    gate_hidden_width: int = 16
    descriptor_pool: str = "mean"  # "mean" or "abs_mean"
    c_proj: int = 8
    d_model: int = 64
    depth: int = 4
    heads: int = 4
    patch_size: int = 8
    insertion_layer: int | None = None  # None: depth - 1
    dropout_rate: float = 0.0
    fusion_mlp_hidden: int = 16
    fuse_cls: bool = False
    tau_init: float = 15.0
    gamma: float = 10.0
    eps: float = 0.01

    @property
    def resolved_insertion(self) -> int:
        return self.depth - 1 if self.insertion_layer is None else self.insertion_layer


@dataclass
class EpisodeConfig:
    n_way: int = 4
    k_shot: int = 5
    n_query: int = 15
    eval_shot: int | None = None  # None: same as k_shot
    eval_query: int | None = None  # None: same as n_query
    episodes_eval: int = 10_000
    split_ratios: tuple = (5, 3, 2)
    seed: int = 0


@dataclass
class TrainConfig:
    lr: float = 2e-5
    weight_decay: float = 5e-5
    episodes: int = 8000  # one "epoch" is one episode
    milestones: tuple = (1500, 2500, 3500, 4500, 5500)
    decay: float = 0.5
    warmup: int = 300
    val_every: int = 500
    val_episodes: int = 100
    val_split: object = "val"
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")
        if ms and ms[-1] >= self.episodes and self.episodes > 0:
            raise ValueError("milestones must lie below the episode count")
        if self.warmup > self.episodes:
            raise ValueError("warm-up longer than training")

    @classmethod
    def desk(cls, episodes: int = 2000, **kw):
        """The 8000-episode schedule scaled to ``episodes`` (milestones and warm-up proportional)."""
        base = dict(episodes=episodes, **scaled_schedule(episodes))
        base.update(kw)
        return cls(**base)


def scaled_schedule(episodes: int) -> dict:
    """Milestones, warm-up and validation interval of the 8000-episode schedule scaled to ``episodes``."""
    scale = episodes / 8000
    return dict(
        milestones=tuple(round(m * scale) for m in (1500, 2500, 3500, 4500, 5500)),
        warmup=round(300 * scale),
        val_every=round(500 * scale),
    )


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        unknown = set(d) - {"model", "episodes", "train"}
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        return cls(
            model=_build(ModelConfig, d.get("model", {})),
            episodes=_build(EpisodeConfig, d.get("episodes", {})),
            train=_build(TrainConfig, d.get("train", {})),
        )

    @classmethod
    def load(cls, path):
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            yaml.safe_dump(json.loads(json.dumps(self.to_dict())), fh, sort_keys=False)

    def override(self, assignments) -> "RunConfig":
        """Apply ``section.key=value`` strings; values are parsed as YAML scalars.

        Changing ``train.episodes`` rescales warm-up, milestones and the validation
        interval as :meth:`TrainConfig.desk` does, unless they are set too.
        """
        d = self.to_dict()
        touched = set()
        for a in assignments:
            key, _, raw = a.partition("=")
            section, _, name = key.strip().partition(".")
            if section not in d or name not in d[section]:
                raise ValueError(f"unknown config key {key!r}")
            d[section][name] = yaml.safe_load(raw)
            touched.add(name if section == "train" else None)
        if "episodes" in touched:
            for key, value in scaled_schedule(d["train"]["episodes"]).items():
                if key not in touched:
                    d["train"][key] = value
        return RunConfig.from_dict(d)


def _build(cls, values):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) and k in ("milestones", "split_ratios") else v for k, v in values.items()}
    return cls(**values)


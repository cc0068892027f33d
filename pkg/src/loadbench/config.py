"""Experiment configuration: one JSON document, command-line flags on top."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .models import ModelConfig, ModelKind
from .trainer import TrainConfig

ALL_KINDS = [k.value for k in ModelKind]


class ConfigError(ValueError):
    pass


def _build(cls, section: str, raw: dict | None):
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


@dataclass
class DatasetSection:
    years: list[int] = field(default_factory=lambda: [1, 5])
    seed: int = 0
    network_seed: int = 0
    noise_std: float | None = None
    path: str | None = None

    def __post_init__(self):
        if isinstance(self.years, int):
            self.years = [self.years]
        for y in self.years:
            if y not in (1, 5):
                raise ValueError(f"years must be 1 or 5, got {y}")


@dataclass
class ModelSection:
    kinds: list[str] = field(default_factory=lambda: list(ALL_KINDS))
    hidden_dim: int = 64
    hidden_sizes: dict[str, int] = field(default_factory=dict)
    lookback: int = 24
    horizon: int = 1
    gcn_out: int = 8
    attention_dim: int = 32

    def __post_init__(self):
        if isinstance(self.kinds, str):
            self.kinds = [self.kinds]
        self.kinds = [ModelKind.parse(k).value for k in self.kinds]
        self.hidden_sizes = {ModelKind.parse(k).value: int(v) for k, v in self.hidden_sizes.items()}

    def model_config(self, kind: str, edges=()) -> ModelConfig:
        kind = ModelKind.parse(kind)
        return ModelConfig(
            kind,
            hidden_dim=self.hidden_sizes.get(kind.value, self.hidden_dim),
            lookback=self.lookback,
            horizon=self.horizon,
            gcn_out=self.gcn_out,
            attention_dim=self.attention_dim,
            edges=tuple(edges) if kind is ModelKind.A3TGCN else (),
        )


@dataclass
class EvalSection:
    tolerances: list[float] = field(default_factory=lambda: [0.10, 0.15, 0.20])
    trace_bus: int = 14
    trace_span: list[int] = field(default_factory=lambda: [0, 168])


@dataclass
class RunSection:
    name: str = "benchmark"
    output_dir: str = "runs/benchmark"


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        sections = {"dataset": DatasetSection, "model": ModelSection, "train": TrainConfig, "eval": EvalSection, "run": RunSection}
        unknown = sorted(set(doc) - set(sections))
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
        cfg = cls(**{name: _build(kind, name, doc.get(name)) for name, kind in sections.items()})
        # tolerances live in [eval]; training records the same set per epoch
        cfg.train = dataclasses.replace(cfg.train, eval_tolerances=tuple(cfg.eval.tolerances))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self, *, portable: bool = False) -> dict:
        """Resolved config. ``portable`` drops output locations, which are
        where a run lands rather than what it computes."""
        doc = {
            "dataset": dataclasses.asdict(self.dataset),
            "model": dataclasses.asdict(self.model),
            "train": self.train.to_dict(),
            "eval": dataclasses.asdict(self.eval),
            "run": dataclasses.asdict(self.run),
        }
        if portable:
            doc["run"].pop("output_dir")
            doc["dataset"].pop("path")
        return doc

    def dumps(self, *, portable: bool = True) -> str:
        return json.dumps(self.to_dict(portable=portable), indent=2, sort_keys=True) + "\n"

    def override(self, **flags) -> "ExperimentConfig":
        """Apply non-None command-line values."""
        cfg = ExperimentConfig.from_dict(self.to_dict())
        if flags.get("seed") is not None:
            cfg.dataset.seed = flags["seed"]
            cfg.train = dataclasses.replace(cfg.train, seed=flags["seed"])
        if flags.get("years") is not None:
            cfg.dataset = DatasetSection(**{**dataclasses.asdict(cfg.dataset), "years": flags["years"]})
        if flags.get("model") is not None:
            cfg.model = ModelSection(**{**dataclasses.asdict(cfg.model), "kinds": flags["model"]})
        if flags.get("epochs") is not None:
            cfg.train = dataclasses.replace(cfg.train, epochs=flags["epochs"])
        if flags.get("out") is not None:
            cfg.run.output_dir = str(flags["out"])
        if flags.get("data") is not None:
            cfg.dataset.path = str(flags["data"])
        return cfg

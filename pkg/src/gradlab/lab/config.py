"""JSON experiment configuration, parsed into typed objects with field-path errors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..exceptions import ConfigError, DomainError
from ..layers import ModelSpec
from ..stonewton import NeumannConfig
from ..trainkit import EarlyStopConfig, TrainConfig

KINDS = (
    "gradcheck",
    "commute",
    "neumann_mc",
    "revlearn_equiv",
    "hyperopt",
    "depth_diag",
    "earlystop_demo",
    "newton_vs_sgd",
)
GENERATORS = ("gaussian_blobs", "linear_teacher", "noisy_poly")

# sub-configs each kind cannot run without
REQUIRED = {
    "gradcheck": ("model", "dataset"),
    "commute": ("model", "dataset"),
    "neumann_mc": ("neumann",),
    "revlearn_equiv": ("model", "dataset", "train"),
    "hyperopt": ("train",),
    "depth_diag": (),
    "earlystop_demo": ("model", "dataset", "train"),
    "newton_vs_sgd": ("dataset", "train", "neumann"),
}


@dataclass(frozen=True)
class DatasetSpec:
    generator: str
    n_train: int
    n_val: int
    noise_sigma: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise DomainError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.n_train < 1 or self.n_val < 1:
            raise DomainError("n_train and n_val must be >= 1")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")
        if self.dim < 1:
            raise DomainError("dim must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    spec: ModelSpec
    loss: str = "squared"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output: str | None = None
    model: ModelConfig | None = None
    train: TrainConfig | None = None
    neumann: NeumannConfig | None = None
    dataset: DatasetSpec | None = None
    options: dict = field(default_factory=dict)


def _section(raw, key, path, build):
    if key not in raw or raw[key] is None:
        return None
    value = raw[key]
    if not isinstance(value, dict):
        raise ConfigError(f"{path}{key}", "expected an object")
    try:
        return build(value)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(f"{path}{key}", str(exc)) from None
    except (DomainError, ValueError) as exc:
        raise ConfigError(f"{path}{key}", str(exc)) from None


def _model(d):
    d = dict(d)
    loss = d.pop("loss", "squared")
    if "dropout_prob" in d and isinstance(d["dropout_prob"], list):
        d["dropout_prob"] = tuple(d["dropout_prob"])
    if "layer_dims" not in d:
        raise ConfigError("model.layer_dims", "required")
    return ModelConfig(ModelSpec(**d), loss)


def _train(d, seed):
    d = dict(d)
    es = d.pop("early_stop", None)
    if es is not None:
        try:
            d["early_stop"] = EarlyStopConfig(**es)
        except (TypeError, DomainError) as exc:
            raise ConfigError("train.early_stop", str(exc)) from None
    d.setdefault("seed", seed)
    for key in ("eta", "batch_size", "max_epochs"):
        if key not in d:
            raise ConfigError(f"train.{key}", "required")
    return TrainConfig(**d)


def parse_config(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    seed = raw.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "a non-negative integer seed is mandatory")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "expected a path string")
    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options", "expected an object")
    known = {"kind", "seed", "output", "model", "train", "neumann", "dataset", "options"}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(extra[0], "unknown field")
    cfg = ExperimentConfig(
        kind=kind,
        seed=seed,
        output=output,
        model=_section(raw, "model", "", _model),
        train=_section(raw, "train", "", lambda d: _train(d, seed)),
        neumann=_section(raw, "neumann", "", lambda d: NeumannConfig(**d)),
        dataset=_section(raw, "dataset", "", lambda d: DatasetSpec(**d)),
        options=options,
    )
    for key in REQUIRED[kind]:
        if getattr(cfg, key) is None:
            raise ConfigError(key, f"required for kind {kind!r}")
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(raw)

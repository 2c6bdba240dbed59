"""Run configuration: dataclasses, JSON schema, validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import jsonschema

from .errors import ConfigurationError
from .experts import EXPERT_NAMES, MASK_STRATEGIES

LAMBDA_GRID = (0.01, 0.05, 0.1, 0.2, 0.5, 1.0)

DEFAULT_LAMBDAS = {"uni_i": 0.2, "uni_t": 0.05, "syn": 0.2, "rdn": 0.5}


@dataclass
class DataConfig:
    interactions: str = ""
    image_embeddings: str = ""
    text_embeddings: str = ""
    five_core: bool = False
    max_len: int = 50


@dataclass
class ModelConfig:
    backbone: str = "attention"  # or "mean-pool"
    dim: int = 64
    blocks: int = 2
    heads: int = 2
    dropout: float = 0.2
    expert_hidden: int = 64
    reweight_hidden: int = 64
    rec_loss: str = "bce"  # or "bpr"


@dataclass
class PrismConfig:
    enabled: bool = True
    lambdas: dict = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    margin: float = 1.0
    mask_strategy: str = "random"
    drop_uni_i: bool = False
    drop_uni_t: bool = False
    drop_syn: bool = False
    drop_rdn: bool = False
    drop_afl: bool = False
    staged_updates: bool = False
    # epochs with fusion weights pinned uniform before the reweighting net
    # takes over; prevents the gate collapsing onto one expert before the
    # experts have differentiated
    afl_warmup_epochs: int = 0

    def active_experts(self):
        dropped = {
            "uni_i": self.drop_uni_i,
            "uni_t": self.drop_uni_t,
            "syn": self.drop_syn,
            "rdn": self.drop_rdn,
        }
        return tuple(n for n in EXPERT_NAMES if not dropped[n])


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 50
    patience: int = 10
    seeds: list = field(default_factory=lambda: [0])


@dataclass
class EvalConfig:
    ks: list = field(default_factory=lambda: [10, 20])
    exclude_seen: bool = False


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    prism: PrismConfig = field(default_factory=PrismConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        return asdict(self)


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["data"],
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["interactions"],
            "properties": {
                "interactions": {"type": "string"},
                "image_embeddings": {"type": "string"},
                "text_embeddings": {"type": "string"},
                "five_core": {"type": "boolean"},
                "max_len": {"type": "integer", "minimum": 2},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "backbone": {"enum": ["attention", "mean-pool"]},
                "dim": {"type": "integer", "minimum": 1},
                "blocks": {"type": "integer", "minimum": 1},
                "heads": {"type": "integer", "minimum": 1},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "expert_hidden": {"type": "integer", "minimum": 1},
                "reweight_hidden": {"type": "integer", "minimum": 1},
                "rec_loss": {"enum": ["bce", "bpr"]},
            },
        },
        "prism": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "lambdas": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        name: {"type": "number", "minimum": 0, "maximum": 1}
                        for name in EXPERT_NAMES
                    },
                },
                "margin": {"type": "number", "exclusiveMinimum": 0},
                "mask_strategy": {"enum": list(MASK_STRATEGIES)},
                "drop_uni_i": {"type": "boolean"},
                "drop_uni_t": {"type": "boolean"},
                "drop_syn": {"type": "boolean"},
                "drop_rdn": {"type": "boolean"},
                "drop_afl": {"type": "boolean"},
                "staged_updates": {"type": "boolean"},
                "afl_warmup_epochs": {"type": "integer", "minimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "patience": {"type": "integer", "minimum": 1},
                "seeds": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 1,
                },
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ks": {"type": "array", "items": {"type": "integer", "minimum": 1},
                       "minItems": 1},
                "exclude_seen": {"type": "boolean"},
            },
        },
    },
}


def config_from_dict(raw):
    """Validate a raw JSON object against the schema and build a RunConfig."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigurationError(f"config field {path}: {exc.message}") from exc
    cfg = RunConfig(
        data=DataConfig(**raw.get("data", {})),
        model=ModelConfig(**raw.get("model", {})),
        prism=PrismConfig(**{**raw.get("prism", {}),
                             "lambdas": {**DEFAULT_LAMBDAS,
                                         **raw.get("prism", {}).get("lambdas", {})}}),
        train=TrainConfig(**raw.get("train", {})),
        eval=EvalConfig(**raw.get("eval", {})),
    )
    if len(cfg.prism.active_experts()) < 1:
        raise ConfigurationError("at most 3 of the 4 experts may be dropped")
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)

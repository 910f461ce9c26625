"""Run configuration: JSON schema, defaults and path-qualified validation.

A config is a JSON object; every key is optional. Defaults reproduce the
reference hyperparameters (L=3, K=5, alpha=0.5, batch 128) with the batch
scaled by ``desk_scale``::

    {
      "task": "mod_add",                    # mod_add | reverse | sort
      "dataset": {"path": null, "size": 512, "seed": 0},
      "eval_size": 128,
      "mode": "lorr",                       # base | iter_n | lorr
      "loss": {"kind": "dpo", "beta": null, "gamma": null},
      "L": 3, "K": 5, "N": 7,
      "batch_size": null,                   # null -> round(128 * desk_scale)
      "desk_scale": 0.25,
      "alpha": 0.5, "reset_groups": "output", "reset_optimizer_state": false,
      "eps_init": 1.0, "lambda_init": 0.0,
      "schedule": "linear",                 # linear | constant
      "eps_schedule": null, "lambda_schedule": null,   # per-ratio override
      "gate_mode": "as_written",            # as_written | prob_rollout
      "ref_refresh": "per_replay",          # per_replay | per_iteration
      "initial_source": "auto",             # auto | dataset_rejected | init_rollout
      "drop_degenerate": false,
      "partial_credit": true,
      "temperature": 1.0,
      "iter_rounds": 3,
      "optimizer": {"lr": 0.01, "warmup_frac": 0.1, "weight_decay": 0.01},
      "model": {"d": 16, "d_h": 32, "n": null},   # n null -> task minimum window
      "pretrain": {"steps": 100, "lr": 0.03, "batch_size": 32},  # SFT warm start
      "seed": 1, "seeds": [1, 2, 3, 4, 5],
      "output_dir": "runs/default"
    }
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .losses import PREFERENCE_KINDS, LossSpec
from .reset import SELECTORS
from .tasks import TASK_KINDS

MODES = ("base", "iter_n", "lorr")
SCHEDULE_KINDS = ("linear", "constant")
GATE_MODES = ("as_written", "prob_rollout")
REF_REFRESH = ("per_replay", "per_iteration")
INITIAL_SOURCES = ("auto", "dataset_rejected", "init_rollout")
REFERENCE_BATCH = 128


@dataclass
class DatasetSpec:
    path: str | None = None
    size: int = 512
    seed: int = 0


@dataclass
class LossConfig:
    kind: str = "dpo"
    beta: float | None = None
    gamma: float | None = None


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    warmup_frac: float = 0.1
    weight_decay: float = 0.01


@dataclass
class PretrainConfig:
    steps: int = 100
    lr: float = 0.03
    batch_size: int = 32


@dataclass
class ModelConfig:
    d: int = 16
    d_h: int = 32
    n: int | None = None


@dataclass
class RunConfig:
    task: str = "mod_add"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    eval_size: int = 128
    mode: str = "lorr"
    loss: LossConfig = field(default_factory=LossConfig)
    L: int = 3
    K: int = 5
    N: int = 7
    batch_size: int | None = None
    desk_scale: float = 0.25
    alpha: float = 0.5
    reset_groups: str = "output"
    reset_optimizer_state: bool = False
    eps_init: float = 1.0
    lambda_init: float = 0.0
    schedule: str = "linear"
    eps_schedule: str | None = None
    lambda_schedule: str | None = None
    gate_mode: str = "as_written"
    ref_refresh: str = "per_replay"
    initial_source: str = "auto"
    drop_degenerate: bool = False
    partial_credit: bool = True
    temperature: float = 1.0
    iter_rounds: int = 3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    seed: int = 1
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    output_dir: str = "runs/default"

    def __post_init__(self):
        validate(self)

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return max(1, round(REFERENCE_BATCH * self.desk_scale))

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec(kind="hybrid", inner=self.loss.kind,
                        beta=self.loss.beta, gamma=self.loss.gamma)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        for key, value in changes.items():
            if "." in key:
                outer, inner = key.split(".", 1)
                d[outer][inner] = value
            else:
                d[key] = value
        return RunConfig.from_dict(d)

    @classmethod
    def from_dict(cls, obj) -> "RunConfig":
        return _build(cls, obj, "")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


_NESTED = {"dataset": DatasetSpec, "loss": LossConfig, "optimizer": OptimizerConfig,
           "model": ModelConfig, "pretrain": PretrainConfig}


def _build(cls, obj, prefix):
    if not isinstance(obj, dict):
        raise ConfigError("expected a JSON object", prefix.rstrip(".") or "<root>")
    names = {f.name: f for f in fields(cls)}
    for key in obj:
        if key not in names:
            raise ConfigError("unknown field", f"{prefix}{key}")
    kwargs = {}
    for key, value in obj.items():
        if cls is RunConfig and key in _NESTED:
            value = _build(_NESTED[key], value, f"{key}.")
        else:
            value = copy.deepcopy(value)
        kwargs[key] = value
    if cls is RunConfig:
        return cls(**kwargs)
    inst = cls(**kwargs)
    _check_types(inst, prefix)
    return inst


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _require(cond, message, path):
    if not cond:
        raise ConfigError(message, path)


def _check_types(inst, prefix):
    if isinstance(inst, DatasetSpec):
        _require(inst.path is None or isinstance(inst.path, str), "must be a string or null",
                 prefix + "path")
        _require(_is_int(inst.size) and inst.size >= 1, "must be an integer >= 1",
                 prefix + "size")
        _require(_is_int(inst.seed), "must be an integer", prefix + "seed")
    elif isinstance(inst, LossConfig):
        _require(inst.kind in PREFERENCE_KINDS, f"must be one of {PREFERENCE_KINDS}",
                 prefix + "kind")
        for name in ("beta", "gamma"):
            v = getattr(inst, name)
            _require(v is None or (_is_real(v) and v > 0), "must be a positive number or null",
                     prefix + name)
    elif isinstance(inst, OptimizerConfig):
        _require(_is_real(inst.lr) and inst.lr >= 0, "must be a number >= 0", prefix + "lr")
        _require(_is_real(inst.warmup_frac) and 0 <= inst.warmup_frac < 1,
                 "must lie in [0, 1)", prefix + "warmup_frac")
        _require(_is_real(inst.weight_decay) and inst.weight_decay >= 0,
                 "must be a number >= 0", prefix + "weight_decay")
    elif isinstance(inst, ModelConfig):
        for name in ("d", "d_h"):
            _require(_is_int(getattr(inst, name)) and getattr(inst, name) >= 1,
                     "must be an integer >= 1", prefix + name)
        _require(inst.n is None or (_is_int(inst.n) and inst.n >= 1),
                 "must be an integer >= 1 or null", prefix + "n")
    elif isinstance(inst, PretrainConfig):
        _require(_is_int(inst.steps) and inst.steps >= 0, "must be an integer >= 0",
                 prefix + "steps")
        _require(_is_real(inst.lr) and inst.lr > 0, "must be a positive number", prefix + "lr")
        _require(_is_int(inst.batch_size) and inst.batch_size >= 1, "must be an integer >= 1",
                 prefix + "batch_size")


def validate(cfg: RunConfig) -> None:
    for name, kind in _NESTED.items():
        _require(isinstance(getattr(cfg, name), kind), "expected a JSON object", name)
        _check_types(getattr(cfg, name), f"{name}.")
    _require(cfg.task in TASK_KINDS, f"must be one of {TASK_KINDS}", "task")
    _require(cfg.mode in MODES, f"must be one of {MODES}", "mode")
    for name, lo in (("L", 1), ("K", 2), ("N", 0), ("eval_size", 1), ("iter_rounds", 1),
                     ("seed", 0)):
        _require(_is_int(getattr(cfg, name)) and getattr(cfg, name) >= lo,
                 f"must be an integer >= {lo}", name)
    _require(cfg.batch_size is None or (_is_int(cfg.batch_size) and cfg.batch_size >= 1),
             "must be an integer >= 1 or null", "batch_size")
    _require(_is_real(cfg.desk_scale) and cfg.desk_scale > 0, "must be a positive number",
             "desk_scale")
    _require(_is_real(cfg.alpha) and 0 <= cfg.alpha <= 1, "must lie in [0, 1]", "alpha")
    _require(cfg.reset_groups in SELECTORS, f"must be one of {sorted(SELECTORS)}",
             "reset_groups")
    _require(_is_real(cfg.eps_init) and 0 <= cfg.eps_init <= 1, "must lie in [0, 1]",
             "eps_init")
    _require(_is_real(cfg.lambda_init) and 0 <= cfg.lambda_init <= 1, "must lie in [0, 1]",
             "lambda_init")
    _require(cfg.schedule in SCHEDULE_KINDS, f"must be one of {SCHEDULE_KINDS}", "schedule")
    for name in ("eps_schedule", "lambda_schedule"):
        v = getattr(cfg, name)
        _require(v is None or v in SCHEDULE_KINDS, f"must be one of {SCHEDULE_KINDS} or null",
                 name)
    _require(cfg.gate_mode in GATE_MODES, f"must be one of {GATE_MODES}", "gate_mode")
    _require(cfg.ref_refresh in REF_REFRESH, f"must be one of {REF_REFRESH}", "ref_refresh")
    _require(cfg.initial_source in INITIAL_SOURCES, f"must be one of {INITIAL_SOURCES}",
             "initial_source")
    for name in ("reset_optimizer_state", "drop_degenerate", "partial_credit"):
        _require(isinstance(getattr(cfg, name), bool), "must be a boolean", name)
    _require(_is_real(cfg.temperature) and cfg.temperature > 0, "must be a positive number",
             "temperature")
    _require(isinstance(cfg.seeds, list) and cfg.seeds and all(_is_int(s) and s >= 0
                                                                 for s in cfg.seeds),
             "must be a non-empty list of integers >= 0", "seeds")
    _require(isinstance(cfg.output_dir, str) and cfg.output_dir, "must be a non-empty string",
             "output_dir")
    try:
        cfg.loss_spec
    except ValueError as exc:
        raise ConfigError(str(exc), "loss") from None

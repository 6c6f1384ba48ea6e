"""Strict JSON experiment configuration.

The schema is versioned and closed: unknown keys anywhere are hard errors,
so a typo in a hyperparameter name cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .datagen import RealDatasetSpec, SimConfig
from .dro import MethodSpec, TrainConfig, method_from_dict
from .errors import ConfigError

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version",
    "benchmark",
    "model",
    "graph",
    "methods",
    "train",
    "seeds",
    "output_dir",
    "sensitivity",
}
_SIM_KEYS = {
    "kind", "n_major", "n_minor", "r_major", "r_minor", "test_rs", "noise_level",
    "theta_s", "label_noise_std_mode", "seed", "target_noise_std",
    "laplace_scale_mode", "test_size",
}
_CSV_KEYS = {
    "kind", "csv_path", "target_column", "feature_columns", "group_rule",
    "standardize", "train_groups",
}
_MODEL_KEYS = {"kind", "hidden", "activation"}
_GRAPH_KEYS = {"k", "scheme"}
_TRAIN_KEYS = {"epochs", "lr", "record_every", "warm_start_flow"}
_SENS_KEYS = {"i", "delta", "alphas", "beta", "j"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "linear"
    hidden: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ConfigError(f"model.kind must be 'linear' or 'mlp', got {self.kind!r}")


@dataclass(frozen=True)
class GraphConfig:
    k: int = 10
    scheme: str = "gaussian"


@dataclass(frozen=True)
class SensitivityConfig:
    i: int = 0
    delta: float = 1.0
    alphas: tuple = (0.1, 0.5, 1.0, 5.0, 10.0)
    beta: float = 1.0
    j: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: object  # SimConfig | RealDatasetSpec
    model: ModelConfig
    graph: GraphConfig
    methods: tuple
    train: TrainConfig
    seeds: tuple
    output_dir: str | None
    sensitivity: SensitivityConfig
    raw: dict
    sha256: str

    @property
    def is_simulation(self) -> bool:
        return isinstance(self.benchmark, SimConfig)


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")

    bench_raw = raw.get("benchmark")
    if not isinstance(bench_raw, dict) or "kind" not in bench_raw:
        raise ConfigError("benchmark: required object with a 'kind' key")
    kind = bench_raw["kind"]
    if kind == "simulation":
        _check_keys(bench_raw, _SIM_KEYS, "benchmark")
        kw = {k: v for k, v in bench_raw.items() if k != "kind"}
        if "test_rs" in kw:
            kw["test_rs"] = tuple(kw["test_rs"])
        if "theta_s" in kw:
            kw["theta_s"] = tuple(kw["theta_s"])
        benchmark = SimConfig(**kw)
    elif kind == "csv":
        _check_keys(bench_raw, _CSV_KEYS, "benchmark")
        kw = {k: v for k, v in bench_raw.items() if k != "kind"}
        if isinstance(kw.get("group_rule"), list):
            kw["group_rule"] = (kw["group_rule"][0], tuple(kw["group_rule"][1]))
        if kw.get("train_groups") is not None:
            kw["train_groups"] = tuple(kw["train_groups"])
        kw["feature_columns"] = tuple(kw.get("feature_columns", ()))
        benchmark = RealDatasetSpec(**kw)
    else:
        raise ConfigError(f"benchmark.kind must be 'simulation' or 'csv', got {kind!r}")

    model_raw = raw.get("model", {"kind": "linear"})
    _check_keys(model_raw, _MODEL_KEYS, "model")
    model = ModelConfig(**model_raw)

    graph_raw = raw.get("graph", {})
    _check_keys(graph_raw, _GRAPH_KEYS, "graph")
    graph = GraphConfig(**graph_raw)

    methods_raw = raw.get("methods")
    if not methods_raw:
        raise ConfigError("methods: nonempty list required")
    try:
        methods = tuple(method_from_dict(m) for m in methods_raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"methods: {exc}") from exc

    train_raw = raw.get("train", {})
    _check_keys(train_raw, _TRAIN_KEYS, "train")
    try:
        train = TrainConfig(**train_raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    seeds = raw.get("seeds")
    if not seeds:
        raise ConfigError("seeds: nonempty list required")
    seeds = tuple(int(s) for s in seeds)

    sens_raw = raw.get("sensitivity", {})
    _check_keys(sens_raw, _SENS_KEYS, "sensitivity")
    if "alphas" in sens_raw:
        sens_raw = dict(sens_raw, alphas=tuple(sens_raw["alphas"]))
    sens = SensitivityConfig(**sens_raw)

    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return ExperimentConfig(
        benchmark=benchmark,
        model=model,
        graph=graph,
        methods=methods,
        train=train,
        seeds=seeds,
        output_dir=raw.get("output_dir"),
        sensitivity=sens,
        raw=raw,
        sha256=hashlib.sha256(canonical).hexdigest(),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        return parse_config(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

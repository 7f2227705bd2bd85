# core/config.py
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.errors import ConfigurationError


class Settings(BaseSettings):
    # Entorno (CAUSALX_*) o .env; los YAML de corrida van en RunConfig
    LOG_LEVEL: str = "info"
    OUT_DIR: str = "runs"
    DATA_DIR: str = "data"
    NUM_THREADS: int = 0

    model_config = SettingsConfigDict(
        env_prefix="CAUSALX_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


def get_settings() -> Settings:
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Section):
    name: str = "mnist_3v8"
    format: Literal["idx", "cifar"] = "idx"
    # idx
    train_images: Optional[str] = "mnist/train-images-idx3-ubyte.gz"
    train_labels: Optional[str] = "mnist/train-labels-idx1-ubyte.gz"
    test_images: Optional[str] = "mnist/t10k-images-idx3-ubyte.gz"
    test_labels: Optional[str] = "mnist/t10k-labels-idx1-ubyte.gz"
    # cifar
    train_files: List[str] = Field(default_factory=list)
    test_files: List[str] = Field(default_factory=list)
    class_names: Optional[List[str]] = None
    keep: List[int] = Field(default_factory=lambda: [3, 8])
    val_fraction: float = 0.1
    split_seed: int = 0

    @field_validator("val_fraction")
    @classmethod
    def _fraction(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        return v

    @field_validator("keep")
    @classmethod
    def _keep(cls, v: List[int]) -> List[int]:
        if len(set(v)) < 2:
            raise ValueError("keep needs at least 2 distinct class ids")
        return v


class PatchConfig(_Section):
    shape: Tuple[int, int] = (4, 4)

    @field_validator("shape")
    @classmethod
    def _positive(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if min(v) <= 0:
            raise ValueError("patch shape must be positive")
        return v


class TrainConfig(_Section):
    """Caja negra de referencia: Adam + entropía cruzada."""
    conv_channels: List[int] = Field(default_factory=lambda: [16, 32])
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 5
    seed: int = 0

    @field_validator("learning_rate", "batch_size", "epochs")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("conv_channels")
    @classmethod
    def _channels(cls, v: List[int]) -> List[int]:
        if not v or min(v) <= 0:
            raise ValueError("conv_channels must be a nonempty list of positive ints")
        return v


class SamplerConfig(_Section):
    temperature: float = 0.5
    m: int = 1

    @field_validator("temperature")
    @classmethod
    def _tau(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("temperature must be > 0")
        return v

    @field_validator("m")
    @classmethod
    def _m(cls, v: int) -> int:
        if v < 1:
            raise ValueError("m must be >= 1")
        return v


class SelectorTrainConfig(_Section):
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    temperature: float = 0.5
    seed: int = 0
    log_clamp_epsilon: float = 1e-8
    hidden_channels: int = 16
    # recocido exponencial; apagado por defecto
    anneal_rate: float = 0.0
    min_temperature: float = 0.1

    @field_validator("epochs", "batch_size", "learning_rate", "temperature", "hidden_channels", "min_temperature")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("log_clamp_epsilon")
    @classmethod
    def _eps(cls, v: float) -> float:
        if not 0.0 < v <= 1e-3:
            raise ValueError("log_clamp_epsilon must lie in (0, 1e-3]")
        return v

    @field_validator("anneal_rate")
    @classmethod
    def _rate(cls, v: float) -> float:
        if v < 0:
            raise ValueError("anneal_rate must be >= 0")
        return v

    def temperature_at(self, step: int) -> float:
        if self.anneal_rate == 0.0:
            return self.temperature
        return max(self.min_temperature, self.temperature * math.exp(-self.anneal_rate * step))


class EvaluationConfig(_Section):
    methods: List[Literal["causal", "random", "saliency"]] = Field(
        default_factory=lambda: ["causal", "random", "saliency"]
    )
    repeats: int = 4
    max_instances: Optional[int] = None
    batch_size: int = 256

    @field_validator("repeats", "batch_size")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v


class OverlayConfig(_Section):
    n_examples: int = 8
    scale: int = 8
    seed: int = 0


class OracleConfig(_Section):
    joints: int = 20
    d: int = 5
    k: int = 2
    arity: int = 2
    num_classes: int = 2
    seed: int = 0
    selector_steps: int = 300
    selector_batch_size: int = 64
    selector_learning_rate: float = 0.05
    temperature: float = 0.5

    @model_validator(mode="after")
    def _sizes(self) -> "OracleConfig":
        if not 1 <= self.k < self.d <= 8:
            raise ValueError("oracle needs 1 <= k < d <= 8")
        if not 2 <= self.arity <= 4:
            raise ValueError("oracle arity must lie in [2, 4]")
        return self


class RunConfig(_Section):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    patch: PatchConfig = Field(default_factory=PatchConfig)
    blackbox: TrainConfig = Field(default_factory=TrainConfig)
    selector: SelectorTrainConfig = Field(default_factory=SelectorTrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    overlays: OverlayConfig = Field(default_factory=OverlayConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    k: List[int] = Field(default_factory=lambda: [4, 6, 8])
    # alternativa a k: fracción de píxeles (k = round(f·d)), como en las tablas de CIFAR
    pixel_fractions: Optional[List[float]] = None
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs"

    @field_validator("k")
    @classmethod
    def _k(cls, v: List[int]) -> List[int]:
        if not v or min(v) < 1:
            raise ValueError("k values must be >= 1")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seeds must be nonempty")
        return v

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _coerce(raw: str) -> Any:
    # "2" -> 2, "[4,6]" -> [4, 6], "true" -> True; YAML hace el trabajo
    return yaml.safe_load(raw)


def apply_override(tree: dict, dotted: str) -> dict:
    if "=" not in dotted:
        raise ConfigurationError(f"override must look like key=value: {dotted!r}")
    key, raw = dotted.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigurationError(f"empty override key: {dotted!r}")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {key!r} crosses a non-section value")
    node[parts[-1]] = _coerce(raw)
    return tree


def load_run_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    *,
    out_dir: str | None = None,
    seed: int | None = None,
    k: list[int] | None = None,
) -> RunConfig:
    """
    Resuelve la configuración: defaults -> YAML -> --set -> flags comunes.
    """
    tree: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{p}: top level must be a mapping")
        tree = loaded
    for ov in overrides or []:
        apply_override(tree, ov)
    if out_dir is not None:
        tree["out_dir"] = out_dir
    if seed is not None:
        tree["seeds"] = [seed]
    if k is not None:
        tree["k"] = list(k)
        tree["pixel_fractions"] = None
    return RunConfig.model_validate(tree)

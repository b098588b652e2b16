"""Experiment configuration: strict JSON schema, loaders, and builders.

Unknown keys are rejected and every error names the offending field path
(``optimizer.rho: must be > 0``).  All numeric ranges are checked before
any computation starts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .clbench import TaskStream, load_csv_stream, make_gaussian_stream
from .objectives import (
    Objective,
    mlp_objective,
    quadratic_objective,
    softmax_linear_objective,
)
from .optim import MODES, OptimizerConfig

import numpy as np


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class _Section:
    """Pop-style reader over one config dict that flags leftovers."""

    def __init__(self, raw: dict, path: str):
        if not isinstance(raw, dict):
            raise ConfigError(path, "must be an object")
        self.raw = dict(raw)
        self.path = path

    def _key(self, name):
        return f"{self.path}.{name}" if self.path else name

    def take(self, name, kind, default=..., check=None, why=""):
        if name not in self.raw:
            if default is ...:
                raise ConfigError(self._key(name), "required key is missing")
            return default
        value = self.raw.pop(name)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            raise ConfigError(self._key(name), "must be an integer")
        if not isinstance(value, kind):
            raise ConfigError(self._key(name), f"must be of type {kind.__name__}")
        if check is not None and not check(value):
            raise ConfigError(self._key(name), why or "invalid value")
        return value

    def finish(self):
        if self.raw:
            key = sorted(self.raw)[0]
            raise ConfigError(self._key(key), "unknown key")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    base_classes: int
    increment: int
    dim: int = 0
    classes: int = 0
    samples_per_class: int = 0
    mean_scale: float = 6.0
    noise_scale: float = 1.0
    test_per_class: int | None = None
    path: str = ""
    seed_override: int | None = None


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hidden: tuple[int, ...] = ()
    diag: tuple[float, ...] = ()
    linear: tuple[float, ...] = ()


@dataclass(frozen=True)
class ProtocolSpec:
    epochs: int = 10
    batch_size: int = 16
    seed: int = 1993
    replay_per_class: int = 0


@dataclass(frozen=True)
class DiagnosticsSpec:
    enabled: bool = False
    window: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    model: ModelSpec
    optimizer_kwargs: dict = field(default_factory=dict)
    protocol: ProtocolSpec = ProtocolSpec()
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)


def _parse_dataset(raw) -> DatasetSpec:
    sec = _Section(raw, "dataset")
    kind = sec.take(
        "kind", str, check=lambda v: v in ("gaussian", "csv"),
        why="must be 'gaussian' or 'csv'",
    )
    pos_int = lambda v: v >= 1
    if kind == "gaussian":
        spec = DatasetSpec(
            kind=kind,
            dim=sec.take("dim", int, check=lambda v: v >= 2, why="must be >= 2"),
            classes=sec.take("classes", int, check=pos_int, why="must be >= 1"),
            base_classes=sec.take("base_classes", int, check=pos_int, why="must be >= 1"),
            increment=sec.take("increment", int, check=pos_int, why="must be >= 1"),
            samples_per_class=sec.take(
                "samples_per_class", int, check=pos_int, why="must be >= 1"
            ),
            mean_scale=sec.take(
                "mean_scale", float, 6.0, check=lambda v: v > 0, why="must be > 0"
            ),
            noise_scale=sec.take(
                "noise_scale", float, 1.0, check=lambda v: v > 0, why="must be > 0"
            ),
            test_per_class=sec.take(
                "test_per_class", int, None, check=pos_int, why="must be >= 1"
            ),
            seed_override=sec.take("seed", int, None),
        )
        if (spec.classes - spec.base_classes) % spec.increment != 0 or (
            spec.classes < spec.base_classes
        ):
            raise ConfigError(
                "dataset.classes",
                f"{spec.classes} is not base_classes plus whole increments",
            )
    else:
        spec = DatasetSpec(
            kind=kind,
            path=sec.take("path", str),
            base_classes=sec.take("base_classes", int, check=pos_int, why="must be >= 1"),
            increment=sec.take("increment", int, check=pos_int, why="must be >= 1"),
            seed_override=sec.take("seed", int, None),
        )
    sec.finish()
    return spec


def _parse_model(raw) -> ModelSpec:
    sec = _Section(raw, "model")
    kind = sec.take(
        "kind", str,
        check=lambda v: v in ("softmax_linear", "mlp", "quadratic"),
        why="must be 'softmax_linear', 'mlp', or 'quadratic'",
    )
    hidden: tuple[int, ...] = ()
    diag: tuple[float, ...] = ()
    linear: tuple[float, ...] = ()
    if kind == "mlp":
        widths = sec.take(
            "hidden", list,
            check=lambda v: all(isinstance(w, int) and w >= 1 for w in v),
            why="must be a list of integers >= 1",
        )
        hidden = tuple(widths)
    elif kind == "quadratic":
        diag_raw = sec.take(
            "diag", list,
            check=lambda v: len(v) >= 1
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v),
            why="must be a non-empty list of numbers",
        )
        diag = tuple(float(x) for x in diag_raw)
        lin_raw = sec.take(
            "linear", list, [],
            check=lambda v: all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
            ),
            why="must be a list of numbers",
        )
        linear = tuple(float(x) for x in lin_raw)
        if linear and len(linear) != len(diag):
            raise ConfigError("model.linear", "length must match model.diag")
    sec.finish()
    return ModelSpec(kind=kind, hidden=hidden, diag=diag, linear=linear)


def _parse_optimizer(raw) -> dict:
    sec = _Section(raw, "optimizer")
    kwargs = {
        "mode": sec.take(
            "mode", str, "turbo",
            check=lambda v: v in MODES, why=f"must be one of {MODES}",
        ),
        "lr": sec.take("lr", float, 0.05, check=lambda v: v > 0, why="must be > 0"),
        "rho": sec.take("rho", float, 0.05, check=lambda v: v > 0, why="must be > 0"),
        "flat_weight": sec.take(
            "flat_weight", float, 0.2, check=lambda v: v >= 0, why="must be >= 0"
        ),
        "surrogate_scale": sec.take(
            "surrogate_scale", float, 0.8, check=lambda v: v >= 0, why="must be >= 0"
        ),
        "ema_decay": sec.take(
            "ema_decay", float, 0.9,
            check=lambda v: 0 < v < 1, why="must be in (0, 1)",
        ),
        "k0": sec.take("k0", int, 5, check=lambda v: v >= 1, why="must be >= 1"),
        "sched_slope": sec.take(
            "sched_slope", float, 10.0, check=lambda v: v >= 0, why="must be >= 0"
        ),
        "trigger_mult": sec.take(
            "trigger_mult", float, 1.0,
            check=lambda v: v >= 0 or math.isinf(v), why="must be >= 0",
        ),
        "use_scheduler": sec.take("scheduler", bool, True),
        "use_trigger": sec.take("trigger", bool, True),
        "proxy_when_untriggered": sec.take("proxy_when_untriggered", bool, True),
    }
    rho_fd = sec.take(
        "rho_fd", (int, float), None,
        check=lambda v: float(v) > 0, why="must be > 0",
    )
    if rho_fd is not None:
        kwargs["rho_fd"] = float(rho_fd)
    sec.finish()
    return kwargs


def _parse_protocol(raw) -> ProtocolSpec:
    sec = _Section(raw, "protocol")
    spec = ProtocolSpec(
        epochs=sec.take("epochs", int, 10, check=lambda v: v >= 0, why="must be >= 0"),
        batch_size=sec.take(
            "batch_size", int, 16, check=lambda v: v >= 1, why="must be >= 1"
        ),
        seed=sec.take("seed", int, 1993),
        replay_per_class=sec.take(
            "replay_per_class", int, 0, check=lambda v: v >= 0, why="must be >= 0"
        ),
    )
    sec.finish()
    return spec


def _parse_diagnostics(raw) -> DiagnosticsSpec:
    sec = _Section(raw, "diagnostics")
    spec = DiagnosticsSpec(
        enabled=sec.take("enabled", bool, False),
        window=sec.take("window", int, 5, check=lambda v: v >= 1, why="must be >= 1"),
    )
    sec.finish()
    return spec


def parse_config(raw: dict) -> ExperimentConfig:
    top = _Section(raw, "")
    dataset_raw = top.take("dataset", dict)
    model_raw = top.take("model", dict, {"kind": "softmax_linear"})
    optimizer_raw = top.take("optimizer", dict, {})
    protocol_raw = top.take("protocol", dict, {})
    diagnostics_raw = top.take("diagnostics", dict, {})
    output_dir = top.take("output_dir", str, None)
    top.finish()
    return ExperimentConfig(
        dataset=_parse_dataset(dataset_raw),
        model=_parse_model(model_raw),
        optimizer_kwargs=_parse_optimizer(optimizer_raw),
        protocol=_parse_protocol(protocol_raw),
        diagnostics=_parse_diagnostics(diagnostics_raw),
        output_dir=output_dir,
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a JSON object")
    return parse_config(raw)


def build_stream(cfg: ExperimentConfig) -> TaskStream:
    ds = cfg.dataset
    seed = ds.seed_override if ds.seed_override is not None else cfg.protocol.seed
    if ds.kind == "gaussian":
        return make_gaussian_stream(
            ds.dim,
            ds.classes,
            ds.base_classes,
            ds.increment,
            ds.samples_per_class,
            seed,
            mean_scale=ds.mean_scale,
            noise_scale=ds.noise_scale,
            test_per_class=ds.test_per_class,
        )
    return load_csv_stream(ds.path, ds.base_classes, ds.increment, seed)


def build_objective(cfg: ExperimentConfig, stream: TaskStream) -> Objective:
    model = cfg.model
    if model.kind == "softmax_linear":
        return softmax_linear_objective(stream.feature_dim, stream.total_classes)
    if model.kind == "mlp":
        dims = (stream.feature_dim, *model.hidden, stream.total_classes)
        return mlp_objective(dims)
    lin = np.array(model.linear) if model.linear else np.zeros(len(model.diag))
    return quadratic_objective(np.diag(model.diag), lin)


def build_optimizer(cfg: ExperimentConfig, n_tasks: int, **overrides) -> OptimizerConfig:
    kwargs = dict(cfg.optimizer_kwargs)
    kwargs.update(overrides)
    return OptimizerConfig(total_tasks=n_tasks, **kwargs)

"""Run configuration: a TOML file flattened to dotted keys, plus flag overrides.

Example::

    method = "csgan"
    output_dir = "runs/cuhk"

    [dataset]
    root = "data/cuhk"
    layout = "split-folders"
    image_size = 256

    [train]
    epochs = 200
    mu_A = 30.0
"""

from __future__ import annotations

import json
import math
import os
import sys
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .networks import DiscriminatorConfig, GeneratorConfig
from .objectives import METHODS, make_preset
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (type, default); a default of None means "use the method preset's value"
SCHEMA: dict[str, tuple[type, Any]] = {
    "method": (str, "csgan"),
    "output_dir": (str, ""),
    "dataset.root": (str, ""),
    "dataset.layout": (str, "split-folders"),
    "dataset.name": (str, ""),
    "dataset.image_size": (int, 256),
    "dataset.swap_domains": (bool, False),
    "dataset.flip": (bool, False),
    "model.base_width": (int, 64),
    "model.n_blocks": (int, 9),
    "model.d_widths": (list, [64, 128, 256, 512]),
    "train.epochs": (int, 200),
    "train.epochs_constant": (int, 100),
    "train.lr": (float, 2e-4),
    "train.beta1": (float, 0.5),
    "train.beta2": (float, 0.999),
    "train.batch_size": (int, 2),
    "train.seed": (int, 0),
    "train.init_mean": (float, 0.0),
    "train.init_std": (float, 0.02),
    "train.checkpoint_every": (int, 10),
    "train.lambda_A": (float, None),
    "train.lambda_B": (float, None),
    "train.mu_A": (float, None),
    "train.mu_B": (float, None),
    "train.syn_weight": (float, None),
    "train.l1_weight": (float, None),
    "train.halve_d": (bool, False),
    "train.d_steps": (int, 1),
    "train.generators_first": (bool, True),
    "train.pool_size": (int, 0),
    "eval.metrics": (str, "mse,psnr,ssim,lpips"),
    "eval.direction": (str, "AtoB"),
    "lpips.weights": (str, ""),
    "lpips.backbone": (str, "alexnet"),
    "lpips.backbone_weights": (str, ""),
}


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _coerce(key: str, value):
    typ = SCHEMA[key][0]
    try:
        if typ is bool:
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if typ is list:
            if isinstance(value, str):
                value = [v for v in value.strip().strip("[]").split(",") if v.strip()]
            return [int(v) for v in value]
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {typ.__name__}, got {value!r}") from None


def validate_keys(keys) -> None:
    for key in keys:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")


def resolve(path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``; returns a flat dict."""
    values = {k: d for k, (_, d) in SCHEMA.items()}
    layers = []
    if path:
        try:
            with open(path, "rb") as fh:
                layers.append(_flatten(tomllib.load(fh)))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    for layer in layers:
        validate_keys(layer)
        for k, v in layer.items():
            values[k] = _coerce(k, v)
    if values["method"] not in METHODS:
        raise ConfigError(f"unknown method {values['method']!r}; valid presets: {', '.join(METHODS)}")
    if not values["output_dir"]:
        values["output_dir"] = os.environ.get("CSGAN_OUT_DIR", "runs")
    return values


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, int):
        return str(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def dumps(values: dict) -> str:
    """Serialize a flat config back to TOML; keys with no value are omitted."""
    top = {k: v for k, v in values.items() if "." not in k and v is not None}
    sections: dict[str, dict] = {}
    for k, v in values.items():
        if "." in k and v is not None:
            sec, name = k.split(".", 1)
            sections.setdefault(sec, {})[name] = v
    lines = [f"{k} = {_toml_value(v)}" for k, v in sorted(top.items())]
    for sec in sorted(sections):
        lines.append("")
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in sorted(sections[sec].items()))
    return "\n".join(lines) + "\n"


def train_config(values: dict) -> TrainConfig:
    overrides = {}
    for src, dst in (("lambda_A", "lambda_A"), ("lambda_B", "lambda_B"), ("mu_A", "mu_A"), ("mu_B", "mu_B")):
        if values[f"train.{src}"] is not None:
            overrides[dst] = values[f"train.{src}"]
    extra = {}
    if values["train.syn_weight"] is not None:
        extra["syn"] = values["train.syn_weight"]
    if values["train.l1_weight"] is not None:
        extra["l1"] = values["train.l1_weight"]
    if extra:
        overrides["extra_weights"] = extra
    objective = make_preset(values["method"], halve_D=values["train.halve_d"], **overrides)
    return TrainConfig(
        epochs_total=values["train.epochs"],
        epochs_constant=min(values["train.epochs_constant"], values["train.epochs"]),
        lr_initial=values["train.lr"],
        adam_beta1=values["train.beta1"],
        adam_beta2=values["train.beta2"],
        batch_size=values["train.batch_size"],
        seed=values["train.seed"],
        init_mean=values["train.init_mean"],
        init_std=values["train.init_std"],
        objective=objective,
        generator=GeneratorConfig(
            base_width=values["model.base_width"],
            n_residual_blocks=values["model.n_blocks"],
            image_size=values["dataset.image_size"],
        ),
        discriminator=DiscriminatorConfig(widths=tuple(values["model.d_widths"])),
        checkpoint_every=max(1, values["train.checkpoint_every"]),
        d_steps=values["train.d_steps"],
        generators_first=values["train.generators_first"],
        pool_size=values["train.pool_size"],
    )

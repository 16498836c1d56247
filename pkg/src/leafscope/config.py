"""Flat ``key = value`` run configuration shared by all subcommands.

Keys (defaults in parentheses)::

    seed (0)                      seeds training, splitting and synthesis
    a_threshold (128)             8-bit A-channel threshold for plane choice
    kmeans_iterations (3)
    blur_sigma (1.0)
    opening_kernel (9x9)          elliptical opening kernel, height x width
    resize_target (256)
    wiped_fraction (0.01)         verdict thresholds
    residue_fraction (0.90)
    residue_border_fraction (0.30)
    glcm_levels (32)
    harris_k (0.04)
    harris_threshold (0.01)
    defect_min_depth (1.0)
    base_lr (1e-4)                optimizer
    gamma (0.1)
    step (20000)
    momentum (0.9)
    weight_decay (5e-4)
    batch_size (50)
    max_iterations (50000)
    hinge_margin (1.0)
    c_positive_weight (1.0)
    ablation_groups (A,B,C,D,AB,AC,AD,ABC,ABD,ACD,ABCD)
    synth_size (256)

``#`` starts a comment. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Mapping

from leafscope.features import FeatureConfig, parse_groups
from leafscope.learn import TrainConfig
from leafscope.segmentation import SegmentationConfig

DEFAULT_ABLATION = ("A", "B", "C", "D", "AB", "AC", "AD", "ABC", "ABD", "ACD", "ABCD")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    ablation_groups: tuple[str, ...] = DEFAULT_ABLATION
    synth_size: int = 256


def _sections():
    return {
        "segmentation": SegmentationConfig,
        "features": FeatureConfig,
        "train": TrainConfig,
    }


def _convert(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if key == "opening_kernel":
            parts = raw.lower().replace(",", "x").split("x")
            if len(parts) != 2:
                raise ValueError("expected HxW")
            return int(parts[0]), int(parts[1])
        if key == "ablation_groups":
            combos = [c for c in raw.replace(";", ",").split(",") if c.strip()]
            return tuple("".join(parse_groups(c)) for c in combos)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: invalid value {raw!r} ({exc})") from exc
    return raw


def known_keys() -> set[str]:
    keys = {"seed", "ablation_groups", "synth_size"}
    for cls in _sections().values():
        keys.update(f.name for f in dataclasses.fields(cls))
    return keys - {"rng_seed"}


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def build(values: Mapping[str, str]) -> RunConfig:
    unknown = set(values) - known_keys()
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    seed = int(_convert("seed", values["seed"], int)) if "seed" in values else 0
    built = {}
    for name, cls in _sections().items():
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                kwargs[f.name] = _convert(f.name, values[f.name], f.type)
        if "rng_seed" in {f.name for f in dataclasses.fields(cls)}:
            kwargs["rng_seed"] = seed
        try:
            built[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    extra = {}
    if "ablation_groups" in values:
        extra["ablation_groups"] = _convert("ablation_groups", values["ablation_groups"], None)
    if "synth_size" in values:
        extra["synth_size"] = _convert("synth_size", values["synth_size"], int)
    return RunConfig(seed=seed, **built, **extra)


def load(path: str | os.PathLike | None = None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Config file values, then ``overrides`` (command-line) on top."""
    values: dict[str, str] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_pairs(fh.read(), os.fspath(path)))
    values.update({k: str(v) for k, v in (overrides or {}).items()})
    return build(values)

"""Plain-text key-value run configuration.

One ``Key = value`` pair per line, ``#`` comments. Keys use the canonical
hyperparameter names (TargetDensity, MinSize, MaxDilation, MaxExpansions,
MinStep, MaxStep, OcclusionTol, BBoxThreshold) plus base_mode, seed and
epochs; blending runs add MaxRounds, BlendStrength, Ops and MixerDir.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .collage import PROFILES, CollageConfig
from .mix import PixMixConfig

COLLAGE_KEYS = ("TargetDensity", "MinSize", "MaxDilation", "MaxExpansions",
                "MinStep", "MaxStep", "OcclusionTol", "BBoxThreshold",
                "base_mode", "seed", "epochs", "canvas_fill")
MIX_KEYS = ("MaxRounds", "BlendStrength", "Ops", "MixerDir")
KNOWN_KEYS = COLLAGE_KEYS + MIX_KEYS


class ConfigError(ValueError):
    pass


def parse_kv_file(path: Path | str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'Key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} "
                              f"(known: {', '.join(KNOWN_KEYS)})")
        values[key] = value
    return values


def parse_density_range(text: str) -> tuple[float, float]:
    parts = text.replace("[", " ").replace("]", " ").replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"TargetDensity needs two values (lo hi), got {text!r}")
    return float(parts[0]), float(parts[1])


def build_collage_config(kv: dict[str, str] | None = None,
                         profile: str | None = None,
                         **overrides) -> CollageConfig:
    """Profile defaults, overridden by file values, overridden by flags."""
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r} "
                              f"(available: {', '.join(sorted(PROFILES))})")
        cfg = PROFILES[profile]
    else:
        cfg = CollageConfig()
    fields: dict = {}
    kv = kv or {}
    if "TargetDensity" in kv:
        fields["target_density"] = parse_density_range(kv["TargetDensity"])
    for key, attr in (("MinSize", "min_size"), ("MaxDilation", "max_dilation"),
                      ("MaxExpansions", "max_expansions"),
                      ("MinStep", "min_step"), ("MaxStep", "max_step"),
                      ("OcclusionTol", "occlusion_tol"),
                      ("seed", "seed"), ("canvas_fill", "canvas_fill")):
        if key in kv:
            fields[attr] = int(kv[key])
    if "BBoxThreshold" in kv:
        fields["bbox_threshold"] = float(kv["BBoxThreshold"])
    if "base_mode" in kv:
        fields["base_mode"] = kv["base_mode"]
    for attr, value in overrides.items():
        if value is not None:
            fields[attr] = value
    try:
        return dataclasses.replace(cfg, **fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_pixmix_config(kv: dict[str, str] | None = None,
                        **overrides) -> PixMixConfig:
    fields: dict = {}
    kv = kv or {}
    if "MaxRounds" in kv:
        fields["max_rounds"] = int(kv["MaxRounds"])
    if "BlendStrength" in kv:
        fields["blend_strength"] = float(kv["BlendStrength"])
    if "Ops" in kv:
        fields["ops"] = tuple(kv["Ops"].replace(",", " ").split())
    if "seed" in kv:
        fields["seed"] = int(kv["seed"])
    for attr, value in overrides.items():
        if value is not None:
            fields[attr] = value
    try:
        return dataclasses.replace(PixMixConfig(), **fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def file_epochs(kv: dict[str, str]) -> int | None:
    return int(kv["epochs"]) if "epochs" in kv else None


def file_seed(kv: dict[str, str]) -> int | None:
    return int(kv["seed"]) if "seed" in kv else None


def file_mixer_dir(kv: dict[str, str]) -> str | None:
    return kv.get("MixerDir")

"""Run configuration: one YAML file with per-command sections.

Flags given on the command line override file values, which override
the built-in defaults below. The SCENGEN_CONFIG environment variable
supplies a default file path when --config is not passed.
"""

from __future__ import annotations

import math
import os

import yaml

from .env import EnvConfig, RoadConfig, VehicleDims
from .errors import ConfigError
from .trainer import TrainConfig

ENV_VAR = "SCENGEN_CONFIG"

DEFAULTS = {
    "env": {
        "dt": 0.04,
        "horizon": 100,
        "r_b": 10.0,
        "v_max": 40.0,
        "lane_count": 3,
        "lane_width": 3.75,
        "road_length": 1000.0,
        "vehicle_length": 5.0,
        "vehicle_width": 2.0,
    },
    "synth_ndd": {
        "n_clusters": 20,
        "n_frames": 100,
        "seed": 0,
    },
    "ingest": {
        "proximity": 50.0,
        "min_frames": 10,
    },
    "train_bv": {
        "beta": 1.0,
        "gamma": 0.99,
        "sim_real_ratio": 1.0,
        "batch_size": 256,
        "lr_actor": 3e-4,
        "lr_critic": 3e-4,
        "tau": 0.005,
        "entropy_alpha": "auto",
        "hidden": [256, 256],
        "warm_start": 1000,
        "steps_per_epoch": 1000,
        "epochs": 10,
        "buffer_capacity": 1_000_000,
        "eval_episodes": 10,
        "eval_mode": "stochastic",
        "explore_episodes": 0.0,
        "seed": 0,
        "n_bvs": 1,
        "av": "uniform",
    },
    "train_av": {
        "gamma": 0.99,
        "batch_size": 256,
        "lr_actor": 3e-4,
        "lr_critic": 3e-4,
        "tau": 0.005,
        "entropy_alpha": "auto",
        "hidden": [256, 256],
        "warm_start": 1000,
        "steps_per_epoch": 1000,
        "epochs": 10,
        "buffer_capacity": 1_000_000,
        "eval_episodes": 10,
        "seed": 0,
        "n_bvs": 1,
        "bv": "fvdm",
    },
    "finetune": {
        "phases": 2,
        "phase_len": 200,
        "eval_episodes": 2,
        "seed": 0,
    },
    "evaluate": {
        "episodes": 100,
        "seeds": [0],
        "n_bvs": 1,
    },
    "report": {
        "follow_bin_m": 2.0,
        "follow_max_m": 50.0,
        "lateral_bin_m": 0.5,
        "lateral_max_m": 6.0,
        "distance_bin_m": 15.0,
        "distance_max_m": 150.0,
        "pca_samples": 2000,
        "seed": 0,
    },
}


def load_config(path=None) -> dict:
    """Merged configuration dict; file values override DEFAULTS."""
    merged = {k: dict(v) for k, v in DEFAULTS.items()}
    if path is None:
        path = os.environ.get(ENV_VAR)
    if not path:
        return merged
    try:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if loaded is None:
        return merged
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    for section, values in loaded.items():
        if section not in merged:
            raise ConfigError(
                f"{path}: unknown section {section!r} (known: {', '.join(sorted(merged))})"
            )
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section {section!r} must be a mapping")
        for key, val in values.items():
            if key not in merged[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            merged[section][key] = val
    return merged


def parse_ratio(value) -> float:
    """sim:real mixing ratio; accepts numbers and the string 'inf'."""
    if isinstance(value, str):
        s = value.strip().lower()
        if s in ("inf", "infinity"):
            return math.inf
        try:
            value = float(s)
        except ValueError:
            raise ConfigError(f"invalid ratio {value!r} (number or 'inf')") from None
    ratio = float(value)
    if math.isnan(ratio) or ratio < 0:
        raise ConfigError(f"ratio must be nonnegative, got {ratio}")
    return ratio


def env_config(cfg: dict) -> EnvConfig:
    e = cfg["env"]
    return EnvConfig(
        dt=float(e["dt"]),
        horizon=int(e["horizon"]),
        r_b=float(e["r_b"]),
        v_max=float(e["v_max"]),
        road=RoadConfig(
            lane_count=int(e["lane_count"]),
            lane_width=float(e["lane_width"]),
            length=float(e["road_length"]),
        ),
        dims=VehicleDims(
            length=float(e["vehicle_length"]),
            width=float(e["vehicle_width"]),
        ),
    )


_TRAIN_KEYS = (
    "beta", "gamma", "sim_real_ratio", "batch_size", "lr_actor", "lr_critic",
    "tau", "entropy_alpha", "hidden", "warm_start", "steps_per_epoch",
    "epochs", "buffer_capacity", "eval_episodes", "eval_mode",
    "explore_episodes", "seed",
)


def train_config(section: dict, **overrides) -> TrainConfig:
    """TrainConfig from a config section plus non-None flag overrides."""
    values = {k: section[k] for k in _TRAIN_KEYS if k in section}
    for k, v in overrides.items():
        if v is not None:
            values[k] = v
    if "sim_real_ratio" in values:
        values["sim_real_ratio"] = parse_ratio(values["sim_real_ratio"])
    if "hidden" in values:
        values["hidden"] = tuple(int(h) for h in values["hidden"])
    if "entropy_alpha" in values and values["entropy_alpha"] != "auto":
        values["entropy_alpha"] = float(values["entropy_alpha"])
    for k in ("batch_size", "warm_start", "steps_per_epoch", "epochs",
              "buffer_capacity", "eval_episodes", "seed"):
        if k in values:
            values[k] = int(values[k])
    for k in ("beta", "gamma", "lr_actor", "lr_critic", "tau", "explore_episodes"):
        if k in values:
            values[k] = float(values[k])
    return TrainConfig(**values)

"""Deterministic synthetic traffic: daily/weekly seasonality over a base level
with trend, gaussian noise and occasional multiplicative spikes, clamped at 0.

At the five-minute sampling interval a day is 288 steps and a week 2016.
"""

from dataclasses import dataclass, replace
from datetime import datetime

import numpy as np

from .errors import ConfigError
from .pipeline import DEFAULT_INTERVAL_S, TimeSeries

STEPS_PER_DAY = 288
STEPS_PER_WEEK = 2016

SOURCE_LENGTH = 8563
TARGET_LENGTHS = (363, 369, 358, 365)

_EPOCH_START = datetime(2024, 1, 1)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    length: int = SOURCE_LENGTH
    base_level: float = 120.0
    daily_amp: float = 35.0
    weekly_amp: float = 12.0
    trend_per_step: float = 0.0005
    noise_sd: float = 4.0
    spike_rate: float = 0.002
    spike_scale: float = 0.8

    def __post_init__(self):
        if self.length < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0.0 <= self.spike_rate <= 1.0:
            raise ConfigError(f"spike_rate must be in [0, 1], got {self.spike_rate}")


def generate(cfg, name="synthetic"):
    """Build the series for a config; identical output for identical configs."""
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(cfg.length, dtype=np.float64)
    values = (cfg.base_level
              + cfg.trend_per_step * t
              + cfg.daily_amp * np.sin(2.0 * np.pi * t / STEPS_PER_DAY)
              + cfg.weekly_amp * np.sin(2.0 * np.pi * t / STEPS_PER_WEEK))
    values = values + rng.normal(0.0, cfg.noise_sd, size=cfg.length)
    spike_hits = rng.random(cfg.length) < cfg.spike_rate
    spike_magnitude = rng.random(cfg.length) * cfg.spike_scale
    values = np.where(spike_hits, values * (1.0 + spike_magnitude), values)
    values = np.maximum(values, 0.0)
    return TimeSeries(name=name, start=_EPOCH_START,
                      interval_s=DEFAULT_INTERVAL_S, values=values)


def make_family(source_cfg, n_targets=4, variation_seed=0, target_lengths=None):
    """One large source series plus related target series.

    Targets keep the source's seasonal structure but perturb base level,
    amplitudes and noise, so transfer is plausible while the distributions
    differ. Default target lengths follow the four small datasets.
    """
    if n_targets < 1:
        raise ConfigError(f"n_targets must be >= 1, got {n_targets}")
    lengths = list(target_lengths) if target_lengths else list(TARGET_LENGTHS)
    while len(lengths) < n_targets:
        lengths.append(lengths[len(lengths) % len(TARGET_LENGTHS)])
    var_rng = np.random.default_rng(variation_seed)
    source = generate(source_cfg, name="dataset_a")
    targets = []
    for i in range(n_targets):
        cfg = replace(
            source_cfg,
            seed=int(var_rng.integers(0, 2 ** 31)),
            length=lengths[i],
            base_level=source_cfg.base_level * var_rng.uniform(0.6, 1.4),
            daily_amp=source_cfg.daily_amp * var_rng.uniform(0.7, 1.3),
            weekly_amp=source_cfg.weekly_amp * var_rng.uniform(0.7, 1.3),
            noise_sd=source_cfg.noise_sd * var_rng.uniform(0.8, 1.25),
        )
        name = f"dataset_{chr(ord('b') + i)}" if i < 25 else f"dataset_t{i}"
        targets.append(generate(cfg, name=name))
    return source, targets

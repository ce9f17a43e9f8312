"""Noise-augmented training views and clean validation views of truth tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boolean_graph import TruthTable


@dataclass(frozen=True)
class NoiseConfig:
    """Additive Gaussian input noise, re-drawn every epoch.

    ``repeats`` stacks that many independently noised copies of the table
    into one epoch; every row is seen once per epoch, so fresh noise per
    epoch is also fresh noise per mini-batch.
    """

    sigma: float = 0.1
    seed: int = 0
    repeats: int = 1

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def epoch_rng(seed: int, epoch_index: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, epoch, stream); identical across platforms."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(epoch_index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def noisy_epoch(table: TruthTable, cfg: NoiseConfig, epoch_index: int):
    rng = epoch_rng(cfg.seed, epoch_index)
    x = np.tile(table.inputs.astype(np.float64), (cfg.repeats, 1))
    y = np.tile(table.outputs.astype(np.float64), (cfg.repeats, 1))
    order = rng.permutation(x.shape[0])
    noise = rng.standard_normal(x.shape) * cfg.sigma
    return x[order] + noise, y[order]


def validation_view(table: TruthTable):
    return table.inputs.astype(np.float64), table.outputs.astype(np.float64)

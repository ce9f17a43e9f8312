"""Edge-weight products of paths and the structural probes built on them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .mlp import MaskedMlp
from .stats import WelchResult, welch_test

ALPHA = 0.05


def _abs_layers(mlp: MaskedMlp) -> list[np.ndarray]:
    return [np.abs(w * m) for w, m in zip(mlp.weights, mlp.masks)]


def path_product_matrix(mlp: MaskedMlp) -> np.ndarray:
    """(n_outputs, n_inputs) matrix; entry [j, i] sums |weight| products over
    every input-i -> output-j path. Biases are not part of any path."""
    layers = _abs_layers(mlp)
    pi = layers[0]
    for w in layers[1:]:
        pi = w @ pi
    return pi


@dataclass(frozen=True)
class SeparabilityResult:
    reject: bool
    result: WelchResult


def input_separability_test(mlp: MaskedMlp, inputs: Iterable[int], outputs_own: Iterable[int],
                            outputs_other: Iterable[int], alpha: float = ALPHA,
                            pi: np.ndarray | None = None) -> SeparabilityResult:
    """Are the paths from ``inputs`` to foreign outputs weaker than to their own?

    Sample 1 holds pi(i, j) for j in ``outputs_other``, sample 2 for j in
    ``outputs_own``; the one-sided alternative is mean1 < mean2.
    """
    inputs, own, other = list(inputs), list(outputs_own), list(outputs_other)
    if not inputs or not own or not other:
        raise ValueError("index sets must be nonempty")
    if set(own) & set(other):
        raise ValueError("output sets must be disjoint")
    pi = path_product_matrix(mlp) if pi is None else pi
    sample1 = pi[np.ix_(other, inputs)].ravel()
    sample2 = pi[np.ix_(own, inputs)].ravel()
    res = welch_test(sample1, sample2, alternative="less")
    return SeparabilityResult(bool(res.p_value < alpha), res)


@dataclass(frozen=True)
class CoverageResult:
    layer: int
    P: float
    n_units: int
    contributions: tuple[float, ...]  # sorted descending
    order: tuple[int, ...]  # unit indices in the same order


def unit_contributions(mlp: MaskedMlp, layer: int) -> np.ndarray:
    """Total downstream path product from each unit of hidden ``layer`` (1-based)."""
    if not 1 <= layer <= mlp.n_layers - 1:
        raise ValueError(f"layer must index a hidden layer (1..{mlp.n_layers - 1})")
    layers = _abs_layers(mlp)
    down = layers[layer]
    for w in layers[layer + 1:]:
        down = w @ down
    return down.sum(axis=0) * mlp.unit_alive[layer - 1]


def layer_coverage(mlp: MaskedMlp, layer: int, P: float = 90.0) -> CoverageResult:
    """Fewest units of ``layer`` whose contributions reach P% of the total."""
    if not 0 < P <= 100:
        raise ValueError("P must lie in (0, 100]")
    contrib = unit_contributions(mlp, layer)
    alive = np.flatnonzero(mlp.unit_alive[layer - 1] > 0)
    # stable sort keeps lower unit index first among equal contributions
    order = alive[np.argsort(-contrib[alive], kind="stable")]
    sorted_c = contrib[order]
    total = sorted_c.sum()
    if order.size == 0 or total == 0:
        return CoverageResult(layer, P, 0, tuple(sorted_c.tolist()), tuple(order.tolist()))
    cum = np.cumsum(sorted_c)
    target = P / 100.0 * total
    # relative slack so P = 100 is reachable despite summation rounding
    n = int(np.searchsorted(cum, target * (1 - 1e-12), side="left")) + 1
    return CoverageResult(layer, P, min(n, order.size), tuple(sorted_c.tolist()),
                          tuple(order.tolist()))


def pi_csv(pi: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["input", "output", "value"])
    for j in range(pi.shape[0]):
        for i in range(pi.shape[1]):
            w.writerow([i, j, repr(float(pi[j, i]))])
    return buf.getvalue()


def coverage_csv(results: Iterable[CoverageResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["layer", "rank", "unit", "contribution"])
    for res in results:
        for rank, (unit, c) in enumerate(zip(res.order, res.contributions), start=1):
            w.writerow([res.layer, rank, unit, repr(float(c))])
    return buf.getvalue()

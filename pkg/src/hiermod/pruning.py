"""Iterative unit and edge pruning with halving steps and rewind on failure."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .boolean_graph import TruthTable
from .dataset import NoiseConfig, validation_view
from .mlp import MaskedMlp, MlpConfig, bitwise_accuracy, init_mlp, loss_sensitivity_scores, train

P_U_GRID = tuple(float(p) for p in range(5, 75, 5))
P_E_GRID = (0.5, 1.0, 1.5, 2.0, 2.5)


class PruningPreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class PruneConfig:
    p_u: float = 50.0
    p_e: float = 1.0
    accuracy_target: float | None = None  # None: the input model's accuracy
    max_rounds: int = 200
    score_strategy: str = "mean_then_abs"

    def __post_init__(self) -> None:
        if not (0 < self.p_u <= 100 and 0 < self.p_e <= 100):
            raise ValueError("p_u and p_e must lie in (0, 100]")


@dataclass(frozen=True)
class PruneRecord:
    round: int
    kind: str  # "unit" | "edge"
    p: float
    accuracy: float
    accepted: bool
    density: float
    alive_units: int


@dataclass
class PruneTrace:
    records: list[PruneRecord] = field(default_factory=list)

    def __add__(self, other: "PruneTrace") -> "PruneTrace":
        return PruneTrace(self.records + other.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["round", "kind", "p", "accuracy", "accepted", "density", "alive_units"])
        for r in self.records:
            w.writerow([r.round, r.kind, repr(r.p), repr(r.accuracy), int(r.accepted),
                        repr(r.density), r.alive_units])
        return buf.getvalue()


def _unit_scores(net: MaskedMlp, xv, yv, strategy: str) -> np.ndarray:
    return np.concatenate(loss_sensitivity_scores(net, xv, yv, strategy))


def _edge_scores(net: MaskedMlp) -> np.ndarray:
    return np.concatenate([np.abs(w * m).ravel() for w, m in zip(net.weights, net.masks)])


def _apply_unit_mask(net: MaskedMlp, keep: np.ndarray) -> None:
    start = 0
    for l, width in enumerate(net.hidden_widths):
        drop = np.flatnonzero(~keep[start:start + width])
        if drop.size:
            net.kill_units(l, drop)
        start += width


def _apply_edge_mask(net: MaskedMlp, keep: np.ndarray) -> None:
    start = 0
    for l, m in enumerate(net.masks):
        m *= keep[start:start + m.size].reshape(m.shape)
        start += m.size
    net.enforce_masks()


def _iterative_prune(kind: str, mlp: MaskedMlp, table: TruthTable, noise: NoiseConfig,
                     train_cfg: MlpConfig, step: float, prune_cfg: PruneConfig,
                     epoch_base: int = 0) -> tuple[MaskedMlp, PruneTrace]:
    xv, yv = validation_view(table)
    current_acc = bitwise_accuracy(mlp, xv, yv)
    target = current_acc if prune_cfg.accuracy_target is None else prune_cfg.accuracy_target
    if current_acc < target:
        raise PruningPreconditionError(
            f"input network accuracy {current_acc} is below the target {target}")
    if kind == "unit":
        total = sum(mlp.hidden_widths)
        already = total - sum(mlp.alive_counts())
    else:
        total = mlp.edge_count()
        already = total - mlp.live_edges()
    p_min = 100.0 / total
    # start from the fraction already pruned: rounds below it would prune nothing
    p = 100.0 * already / total
    best = mlp
    trace = PruneTrace()
    for rnd in range(prune_cfg.max_rounds):
        if step < p_min or p >= 100.0:
            break
        p_try = min(p + step, 100.0)
        if kind == "unit":
            scores = _unit_scores(best, xv, yv, prune_cfg.score_strategy)
        else:
            scores = _edge_scores(best)
        threshold = np.percentile(scores, p_try)
        cand = best.copy()
        if kind == "unit":
            _apply_unit_mask(cand, scores > threshold)
        else:
            _apply_edge_mask(cand, scores > threshold)
        offset = epoch_base + (rnd + 1) * max(train_cfg.epochs, 1)
        cand, _ = train(cand, table, noise, train_cfg, epoch_offset=offset)
        acc = bitwise_accuracy(cand, xv, yv)
        accepted = acc >= target
        trace.records.append(PruneRecord(rnd, kind, p_try, acc, accepted, cand.density(),
                                         sum(cand.alive_counts())))
        if accepted:
            best, p = cand, p_try
        else:
            step /= 2.0
    return best, trace


def prune_units(mlp, table, noise, train_cfg, prune_cfg, epoch_base: int = 0):
    return _iterative_prune("unit", mlp, table, noise, train_cfg, prune_cfg.p_u, prune_cfg,
                            epoch_base)


def prune_edges(mlp, table, noise, train_cfg, prune_cfg, epoch_base: int = 0):
    return _iterative_prune("edge", mlp, table, noise, train_cfg, prune_cfg.p_e, prune_cfg,
                            epoch_base)


def sculpt(mlp: MaskedMlp, table: TruthTable, noise: NoiseConfig, train_cfg: MlpConfig,
           prune_cfg: PruneConfig) -> tuple[MaskedMlp, PruneTrace]:
    """Unit pruning to find minimal widths, then edge pruning on what is left."""
    if prune_cfg.accuracy_target is None:
        xv, yv = validation_view(table)
        prune_cfg = replace(prune_cfg, accuracy_target=bitwise_accuracy(mlp, xv, yv))
    net, t_units = prune_units(mlp, table, noise, train_cfg, prune_cfg)
    net, t_edges = prune_edges(net, table, noise, train_cfg, prune_cfg, epoch_base=1_000_000)
    return net, t_units + t_edges


@dataclass
class GridOutcome:
    ok: bool
    reason: str
    dense_accuracy: float
    model: MaskedMlp | None = None
    p_u: float | None = None
    p_e: float | None = None
    trace: PruneTrace | None = None
    candidates: list[tuple[float, float, float, int]] = field(default_factory=list)


def _rank_key(net: MaskedMlp) -> tuple[float, int]:
    return (net.density(), sum(net.alive_counts()))


def grid_search(table: TruthTable, noise: NoiseConfig, train_cfg: MlpConfig,
                p_u_grid=P_U_GRID, p_e_grid=P_E_GRID, dense: MaskedMlp | None = None,
                accuracy_target: float = 1.0, max_rounds: int = 200) -> GridOutcome:
    """Sculpt with every (p_u, p_e) pair and keep the sparsest result.

    Ties on edge density go to fewer alive units, then to earlier grid order.
    A dense network below ``accuracy_target`` makes the trial a failure.
    """
    if not p_u_grid or not p_e_grid:
        raise ValueError("pruning grids must be nonempty")
    if dense is None:
        dense, _ = train(init_mlp(train_cfg), table, noise, train_cfg)
    xv, yv = validation_view(table)
    dense_acc = bitwise_accuracy(dense, xv, yv)
    if dense_acc < accuracy_target:
        return GridOutcome(False, "dense_below_target", dense_acc)
    out = GridOutcome(True, "", dense_acc)
    best_key = None
    for p_u in p_u_grid:
        cfg = PruneConfig(p_u=p_u, p_e=p_e_grid[0], accuracy_target=accuracy_target,
                          max_rounds=max_rounds)
        unit_net, unit_trace = prune_units(dense, table, noise, train_cfg, cfg)
        for p_e in p_e_grid:
            cfg = replace(cfg, p_e=p_e)
            net, edge_trace = prune_edges(unit_net, table, noise, train_cfg, cfg,
                                          epoch_base=1_000_000)
            key = _rank_key(net)
            out.candidates.append((p_u, p_e, key[0], key[1]))
            if best_key is None or key < best_key:
                best_key = key
                out.model, out.p_u, out.p_e = net, p_u, p_e
                out.trace = unit_trace + edge_trace
    return out


def grid_pairs(p_u_grid=P_U_GRID, p_e_grid=P_E_GRID):
    return list(itertools.product(p_u_grid, p_e_grid))

"""Score detected hierarchies against ground truth and run trial grids."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from .boolean_graph import (FunctionGraph, HierarchySignature, ModularitySpec, generate,
                            signature, truth_table)
from .dataset import NoiseConfig, validation_view
from .detection import DELTA_M, T_M, ModuleHierarchy, detect
from .mlp import DivergenceError, MaskedMlp, MlpConfig, bitwise_accuracy, init_mlp, train
from .pruning import P_E_GRID, P_U_GRID, GridOutcome, grid_search


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class Flags:
    input_modules: bool
    output_modules: bool
    middle_separation: bool
    exact_structure: bool


def _partition(modules, attr: str) -> set[frozenset[int]]:
    return {getattr(m, attr) for m in modules if getattr(m, attr)}


def _match(found: ModuleHierarchy, truth: HierarchySignature, exact: bool) -> bool:
    """Search for a map from found modules to truth modules with equal
    terminal ownership that carries found uses-edges onto truth uses-edges.

    ``exact`` demands a bijection over all modules with equal edge sets;
    otherwise only modules holding hidden units must map, injectively, and
    their mutual uses-edges must exist in the truth.
    """
    if exact:
        mods = list(found.modules)
        if len(mods) != len(truth.modules):
            return False
    else:
        top = max(l for m in found.modules for l, _ in m.units)
        mods = [m for m in found.modules if any(0 < l < top for l, _ in m.units)]
    cands = []
    for m in mods:
        c = [t.id for t in truth.modules if t.inputs == m.inputs and t.outputs == m.outputs]
        if not c:
            return False
        cands.append(c)
    ids = {m.id for m in mods}
    f_uses = {(a, b) for a, b in found.uses if a in ids and b in ids}
    order = sorted(range(len(mods)), key=lambda i: len(cands[i]))
    assign: dict[int, int] = {}
    used: set[int] = set()

    def consistent() -> bool:
        for a, b in f_uses:
            if a in assign and b in assign and (assign[a], assign[b]) not in truth.uses:
                return False
        return True

    def search(pos: int) -> bool:
        if pos == len(order):
            if exact:
                mapped = {(assign[a], assign[b]) for a, b in f_uses}
                return mapped == set(truth.uses)
            return True
        m = mods[order[pos]]
        for t in cands[order[pos]]:
            if t in used:
                continue
            assign[m.id] = t
            used.add(t)
            if consistent() and search(pos + 1):
                return True
            del assign[m.id]
            used.discard(t)
        return False

    return search(0)


def compare(found: ModuleHierarchy, truth: HierarchySignature) -> Flags:
    f_in = set().union(*[m.inputs for m in found.modules]) if found.modules else set()
    t_in = set().union(*[m.inputs for m in truth.modules]) if truth.modules else set()
    f_out = set().union(*[m.outputs for m in found.modules]) if found.modules else set()
    t_out = set().union(*[m.outputs for m in truth.modules]) if truth.modules else set()
    if f_in != t_in or f_out != t_out:
        raise ComparisonError("found and true hierarchies cover different terminals")
    inp = _partition(found.modules, "inputs") == _partition(truth.modules, "inputs")
    out = _partition(found.modules, "outputs") == _partition(truth.modules, "outputs")
    exact = inp and out and _match(found, truth, exact=True)
    middle = exact or _match(found, truth, exact=False)
    return Flags(inp, out, middle, exact)


# ---------------------------------------------------------------------------
# trial grids


@dataclass(frozen=True)
class TrialConfig:
    spec: ModularitySpec
    graph_seed: int = 0
    widths: tuple[int, ...] = (24, 36, 48)
    depths: tuple[int, ...] = (1, 2, 3)
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    t_m: float = T_M
    delta_m: float = DELTA_M
    # (lr, batch) pairs tried in order until the dense net is exact
    train_grid: tuple[tuple[float, int], ...] = ((0.05, 16), (0.1, 16), (0.05, 8), (0.1, 8))
    epochs: int = 120
    noise_sigma: float = 0.1
    p_u_grid: tuple[float, ...] = P_U_GRID
    p_e_grid: tuple[float, ...] = P_E_GRID
    # acceptance thresholds checked by the eval command
    min_exact_rate: float = 0.75
    min_depth: int | None = None  # rate computed over depths >= this; None: gate-level count

    def __post_init__(self) -> None:
        if not (self.widths and self.depths and self.seeds):
            raise ValueError("trial grids must be nonempty")
        if not (self.p_u_grid and self.p_e_grid and self.train_grid):
            raise ValueError("pruning and training grids must be nonempty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = self.spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        d = dict(d)
        d["spec"] = ModularitySpec.from_dict(d["spec"])
        for key in ("widths", "depths", "seeds", "p_u_grid", "p_e_grid"):
            if key in d:
                d[key] = tuple(d[key])
        if "train_grid" in d:
            d["train_grid"] = tuple((float(lr), int(b)) for lr, b in d["train_grid"])
        return cls(**d)

    def trials(self) -> list[tuple[int, int, int]]:
        return [(w, d, s) for d in self.depths for w in self.widths for s in self.seeds]


@dataclass
class TrialResult:
    width: int
    depth: int
    seed: int
    ok: bool
    reason: str = ""
    density: float | None = None
    accuracy: float | None = None
    n_modules: int | None = None
    input_modules: bool = False
    output_modules: bool = False
    middle_separation: bool = False
    exact_structure: bool = False
    hierarchy: dict | None = field(default=None, repr=False)


FLAG_NAMES = ("input_modules", "output_modules", "middle_separation", "exact_structure")


@dataclass
class TrialReport:
    config: TrialConfig
    results: list[TrialResult]

    def rates(self) -> dict[int, dict[str, float]]:
        out = {}
        for d in sorted({r.depth for r in self.results}):
            rows = [r for r in self.results if r.depth == d]
            out[d] = {f: sum(getattr(r, f) for r in rows) / len(rows) for f in FLAG_NAMES}
        return out

    def exact_rate(self, min_depth: int | None = None) -> float:
        if min_depth is None:
            min_depth = self.config.min_depth or self.config.spec.gate_levels
        rows = [r for r in self.results if r.depth >= min_depth]
        return sum(r.exact_structure for r in rows) / len(rows) if rows else 0.0

    def passed(self) -> bool:
        return self.exact_rate() >= self.config.min_exact_rate

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        cols = ["width", "depth", "seed", "ok", "reason", "density", "accuracy", "n_modules",
                *FLAG_NAMES]
        w.writerow(cols)
        for r in self.results:
            row = [getattr(r, c) for c in cols]
            w.writerow([int(v) if isinstance(v, bool) else ("" if v is None else
                        repr(v) if isinstance(v, float) else v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "config": self.config.to_dict(),
            "rates": {str(d): r for d, r in self.rates().items()},
            "exact_rate": self.exact_rate(),
            "passed": self.passed(),
            "trials": [{k: v for k, v in asdict(r).items()} for r in self.results],
        }
        return json.dumps(body, indent=1, sort_keys=True)


@dataclass
class TrialModels:
    """Everything a trial trains, kept for analyses beyond module detection."""

    graph: FunctionGraph
    dense: MaskedMlp | None
    outcome: GridOutcome | None
    reason: str = ""


def train_dense(cfg: TrialConfig, width: int, depth: int, seed: int):
    """Train a dense net, trying ``cfg.train_grid`` in order until one is
    exact. Returns (graph, net, train config, failure reason); the net is the
    last one trained, or None if every attempt diverged."""
    graph = generate(cfg.spec, cfg.graph_seed)
    table = truth_table(graph)
    noise = NoiseConfig(cfg.noise_sigma, seed=seed)
    widths = (graph.n_inputs, *[width] * depth, graph.n_outputs)
    xv, yv = validation_view(table)
    reason, last, last_cfg = "", None, None
    for lr, batch in cfg.train_grid:
        train_cfg = MlpConfig(widths, seed=seed, lr=lr, batch_size=batch, epochs=cfg.epochs)
        try:
            dense, _ = train(init_mlp(train_cfg), table, noise, train_cfg)
        except DivergenceError as exc:
            reason = f"diverged:{exc.epoch}"
            continue
        last, last_cfg = dense, train_cfg
        if bitwise_accuracy(dense, xv, yv) == 1.0:
            return graph, dense, train_cfg, ""
        reason = "dense_below_target"
    return graph, last, last_cfg, reason


def train_and_prune(cfg: TrialConfig, width: int, depth: int, seed: int) -> TrialModels:
    """Dense training followed by the pruning grid search, keeping the
    sparsest exact net."""
    graph, dense, train_cfg, reason = train_dense(cfg, width, depth, seed)
    if reason:
        return TrialModels(graph, dense, None, reason)
    noise = NoiseConfig(cfg.noise_sigma, seed=seed)
    outcome = grid_search(truth_table(graph), noise, train_cfg, cfg.p_u_grid, cfg.p_e_grid,
                          dense=dense)
    return TrialModels(graph, dense, outcome)


def score_trial(cfg: TrialConfig, models: TrialModels, width: int, depth: int,
                seed: int) -> TrialResult:
    if models.outcome is None or not models.outcome.ok:
        reason = models.reason or (models.outcome.reason if models.outcome else "")
        return TrialResult(width, depth, seed, False, reason)
    sparse = models.outcome.model
    found = detect(sparse, cfg.t_m, cfg.delta_m)
    flags = compare(found, signature(models.graph, cfg.spec, n_hidden=depth))
    return TrialResult(width, depth, seed, True, "", sparse.density(), 1.0,
                       len(found.modules), flags.input_modules, flags.output_modules,
                       flags.middle_separation, flags.exact_structure, found.to_dict())


def run_trial(cfg: TrialConfig, width: int, depth: int, seed: int) -> TrialResult:
    return score_trial(cfg, train_and_prune(cfg, width, depth, seed), width, depth, seed)


def _run_one(args):
    cfg, w, d, s = args
    return run_trial(cfg, w, d, s)


def run_grid(cfg: TrialConfig, threads: int = 1) -> TrialReport:
    """Every (width, depth, seed) trial; results come back in grid order
    whatever the thread count, so reports are reproducible."""
    jobs = [(cfg, w, d, s) for w, d, s in cfg.trials()]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for r in results:
        if r.exact_structure and not (r.input_modules and r.output_modules):
            raise AssertionError("exact structure without matching terminal partitions")
    return TrialReport(cfg, results)

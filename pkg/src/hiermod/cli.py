"""Command-line entry point.

Every subcommand writes its artifacts plus a ``manifest.json`` with their
SHA-256 digests into ``--out-dir``. Exit codes: 0 success, 1 failed
acceptance thresholds (``eval``), 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import storage
from .boolean_graph import (FAMILIES, ModularitySpec, family_spec, generate, graph_from_dict,
                            graph_to_dict, signature, truth_table)
from .dataset import NoiseConfig
from .detection import DELTA_M, T_M, ModuleHierarchy, detect
from .evaluation import TrialConfig, run_grid
from .mlp import MlpConfig, init_mlp, train
from .paths import coverage_csv, input_separability_test, layer_coverage, path_product_matrix, pi_csv
from .pruning import P_E_GRID, P_U_GRID, PruneConfig, grid_search, sculpt


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("NS_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"NS_SEED must be an integer, got {raw!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--tm", type=float, default=T_M)
    common.add_argument("--dm", type=float, default=DELTA_M)
    common.add_argument("--lr", type=float, default=0.05)
    common.add_argument("--batch", type=int, default=16)
    common.add_argument("--epochs", type=int, default=120)

    p = argparse.ArgumentParser(prog="hiermod")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a Boolean function graph")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--family", choices=sorted(FAMILIES))
    src.add_argument("--spec", help="modularity spec JSON file")
    g.add_argument("--param", action="append", default=[], metavar="KEY=INT",
                   help="family parameter, e.g. reuse=4")

    t = sub.add_parser("train", parents=[common], help="train a dense network on a graph")
    t.add_argument("--graph", required=True)
    t.add_argument("--hidden", type=_ints, default=(24, 24), help="comma-separated widths")
    t.add_argument("--sigma", type=float, default=0.1)

    pr = sub.add_parser("prune", parents=[common], help="unit then edge pruning")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--graph", required=True)
    pr.add_argument("--sigma", type=float, default=0.1)
    pr.add_argument("--p-u", type=float, default=None, help="single unit step; default: grid")
    pr.add_argument("--p-e", type=float, default=None, help="single edge step; default: grid")
    pr.add_argument("--p-u-grid", type=_floats, default=P_U_GRID)
    pr.add_argument("--p-e-grid", type=_floats, default=P_E_GRID)

    d = sub.add_parser("detect", parents=[common], help="detect modules in a sparse network")
    d.add_argument("--checkpoint", required=True)

    a = sub.add_parser("analyze", parents=[common], help="path products, coverage, Welch tests")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--graph", help="graph JSON; enables input-separability tests")
    a.add_argument("--P", type=float, default=90.0)

    e = sub.add_parser("eval", parents=[common], help="run a trial grid")
    e.add_argument("--config", required=True, help="TrialConfig JSON file")

    v = sub.add_parser("viz", parents=[common], help="render hierarchy or graph JSON as DOT")
    v.add_argument("--input", required=True, help="hierarchy JSON or graph JSON")
    v.add_argument("--checkpoint", help="draw the network with module clusters")
    return p


def _write(out: Path, name: str, text: str, manifest: storage.RunManifest) -> Path:
    path = out / name
    path.write_text(text, newline="")
    manifest.add(name, path)
    return path


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out_dir", "command")}


def _cmd_gen(args, out, manifest) -> int:
    if args.family:
        params = {}
        for item in args.param:
            key, _, val = item.partition("=")
            if not val:
                raise UsageError(f"--param expects KEY=INT, got {item!r}")
            params[key] = int(val)
        spec = family_spec(args.family, **params)
    else:
        spec = ModularitySpec.from_dict(_load_json(args.spec))
    graph = generate(spec, args.seed)
    _write(out, "graph.json", storage.dumps(graph_to_dict(graph)), manifest)
    _write(out, "truth_table.csv", storage.truth_table_csv(truth_table(graph)), manifest)
    return 0


def _graph(path: str):
    return graph_from_dict(_load_json(path))


def _train_cfg(args, graph, hidden) -> MlpConfig:
    return MlpConfig((graph.n_inputs, *hidden, graph.n_outputs), seed=args.seed, lr=args.lr,
                     batch_size=args.batch, epochs=args.epochs)


def _cmd_train(args, out, manifest) -> int:
    graph = _graph(args.graph)
    cfg = _train_cfg(args, graph, args.hidden)
    net, hist = train(init_mlp(cfg), truth_table(graph), NoiseConfig(args.sigma, args.seed), cfg)
    storage.save_checkpoint(net, out / "checkpoint.json")
    manifest.add("checkpoint.json", out / "checkpoint.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["epoch", "loss", "val_accuracy"])
    for i, (l, acc) in enumerate(zip(hist.loss, hist.val_accuracy)):
        w.writerow([i, repr(l), repr(acc)])
    _write(out, "history.csv", buf.getvalue(), manifest)
    return 0


def _cmd_prune(args, out, manifest) -> int:
    graph = _graph(args.graph)
    net = storage.load_checkpoint(args.checkpoint)
    table = truth_table(graph)
    cfg = _train_cfg(args, graph, net.hidden_widths)
    noise = NoiseConfig(args.sigma, args.seed)
    if args.p_u is not None and args.p_e is not None:
        sparse, trace = sculpt(net, table, noise, cfg, PruneConfig(args.p_u, args.p_e))
    else:
        outcome = grid_search(table, noise, cfg, args.p_u_grid, args.p_e_grid, dense=net)
        if not outcome.ok:
            print(f"pruning failed: {outcome.reason}", file=sys.stderr)
            return 1
        sparse, trace = outcome.model, outcome.trace
    storage.save_checkpoint(sparse, out / "checkpoint.json")
    manifest.add("checkpoint.json", out / "checkpoint.json")
    _write(out, "trace.csv", trace.to_csv(), manifest)
    return 0


def _cmd_detect(args, out, manifest) -> int:
    net = storage.load_checkpoint(args.checkpoint)
    h = detect(net, args.tm, args.dm)
    _write(out, "hierarchy.json", h.to_json(), manifest)
    _write(out, "hierarchy.dot", storage.export_dot(h, net), manifest)
    return 0


def _cmd_analyze(args, out, manifest) -> int:
    net = storage.load_checkpoint(args.checkpoint)
    pi = path_product_matrix(net)
    _write(out, "pi.csv", pi_csv(pi), manifest)
    cov = [layer_coverage(net, l, args.P) for l in range(1, net.n_layers)]
    _write(out, "coverage.csv", coverage_csv(cov), manifest)
    report = {"coverage": {str(c.layer): c.n_units for c in cov}, "welch": []}
    if args.graph:
        truth = signature(_graph(args.graph))
        all_out = set(range(net.widths[-1]))
        for m in truth.modules:
            if m.inputs and m.outputs and m.outputs != all_out:
                res = input_separability_test(net, sorted(m.inputs), sorted(m.outputs),
                                              sorted(all_out - m.outputs), pi=pi)
                report["welch"].append({"inputs": sorted(m.inputs), "reject": res.reject,
                                        **asdict(res.result)})
    _write(out, "analysis.json", storage.dumps(report), manifest)
    return 0


def _cmd_eval(args, out, manifest) -> int:
    cfg = TrialConfig.from_dict(_load_json(args.config))
    report = run_grid(cfg, threads=args.threads)
    _write(out, "report.csv", report.to_csv(), manifest)
    _write(out, "report.json", report.to_json(), manifest)
    return 0 if report.passed() else 1


def _cmd_viz(args, out, manifest) -> int:
    d = _load_json(args.input)
    if "modules" in d:
        h = ModuleHierarchy.from_dict(d)
        if args.checkpoint:
            text = storage.export_dot(h, storage.load_checkpoint(args.checkpoint))
        else:
            text = storage.hierarchy_dot(h)
    elif "nodes" in d:
        text = storage.graph_dot(graph_from_dict(d))
    else:
        raise UsageError("input is neither a hierarchy nor a graph JSON")
    _write(out, "viz.dot", text, manifest)
    return 0


_COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "prune": _cmd_prune, "detect": _cmd_detect,
             "analyze": _cmd_analyze, "eval": _cmd_eval, "viz": _cmd_viz}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.seed is None:
            args.seed = _default_seed()
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = storage.RunManifest(args.command, _config(args), args.seed)
        code = _COMMANDS[args.command](args, out, manifest)
        manifest.write(out)
        return code
    except (UsageError, ValueError, KeyError) as exc:
        print(f"hiermod {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

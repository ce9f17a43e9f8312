"""Checkpoints, run manifests and DOT export.

JSON floats are written with Python's shortest round-trip repr, so a
checkpoint reloads bit-identically and output digests do not depend on the
platform.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import ModuleHierarchy, adjacency
from .mlp import MaskedMlp

CHECKPOINT_VERSION = 1


class ExportError(ValueError):
    pass


def mlp_to_dict(mlp: MaskedMlp) -> dict:
    def arr(xs):
        return [x.tolist() for x in xs]

    return {
        "version": CHECKPOINT_VERSION,
        "widths": list(mlp.widths),
        "seed": mlp.seed,
        "weights": arr(mlp.weights),
        "biases": arr(mlp.biases),
        "masks": arr(mlp.masks),
        "unit_alive": arr(mlp.unit_alive),
        "adam": {"step": mlp.step, "m_w": arr(mlp.m_w), "v_w": arr(mlp.v_w),
                 "m_b": arr(mlp.m_b), "v_b": arr(mlp.v_b)},
    }


def mlp_from_dict(d: dict) -> MaskedMlp:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")

    def arr(xs):
        return [np.array(x, dtype=np.float64) for x in xs]

    adam = d["adam"]
    mlp = MaskedMlp(tuple(d["widths"]), d["seed"], arr(d["weights"]), arr(d["biases"]),
                    arr(d["masks"]), arr(d["unit_alive"]), arr(adam["m_w"]), arr(adam["v_w"]),
                    arr(adam["m_b"]), arr(adam["v_b"]), adam["step"])
    widths = mlp.widths
    for l, w in enumerate(mlp.weights):
        if w.shape != (widths[l + 1], widths[l]) or mlp.masks[l].shape != w.shape:
            raise ValueError(f"layer {l} has shape {w.shape}, expected "
                             f"{(widths[l + 1], widths[l])}")
    return mlp


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def save_checkpoint(mlp: MaskedMlp, path: str | Path) -> None:
    Path(path).write_text(dumps(mlp_to_dict(mlp)))


def load_checkpoint(path: str | Path) -> MaskedMlp:
    return mlp_from_dict(json.loads(Path(path).read_text()))


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    artifacts: dict[str, str] = field(default_factory=dict)  # name -> path
    digests: dict[str, str] = field(default_factory=dict)  # name -> sha256

    def add(self, name: str, path: str | Path) -> None:
        self.artifacts[name] = str(path)
        self.digests[name] = sha256_file(path)

    def verify(self) -> bool:
        return all(sha256_file(self.artifacts[n]) == d for n, d in self.digests.items())

    def to_dict(self) -> dict:
        # artifact paths are stored relative to the manifest so moved run
        # directories still verify
        return {"command": self.command, "config": self.config, "seed": self.seed,
                "artifacts": {n: os.path.basename(p) for n, p in self.artifacts.items()},
                "digests": self.digests}

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(dumps(self.to_dict()))
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        arts = {n: str(path.parent / p) for n, p in d["artifacts"].items()}
        return cls(d["command"], d["config"], d["seed"], arts, d["digests"])


# ---------------------------------------------------------------------------
# DOT

_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
            "#a6761d", "#666666", "#1f78b4", "#b2df8a", "#fb9a99", "#fdbf6f")


def _alive_units(mlp: MaskedMlp) -> list[tuple[int, int]]:
    units = []
    for layer, width in enumerate(mlp.widths):
        hidden = 0 < layer < mlp.n_layers
        for i in range(width):
            if not hidden or mlp.unit_alive[layer - 1][i] > 0:
                units.append((layer, i))
    return units


def export_dot(hierarchy: ModuleHierarchy, mlp: MaskedMlp) -> str:
    """Left-to-right layered drawing with one cluster per module; only
    unmasked edges between alive units are drawn."""
    owner = hierarchy.module_of()
    alive = _alive_units(mlp)
    if set(owner) != set(alive):
        raise ExportError("hierarchy does not cover exactly the alive units")
    lines = ["digraph network {", "  rankdir=LR;", "  node [shape=circle, style=filled];"]
    for m in hierarchy.modules:
        color = _PALETTE[m.id % len(_PALETTE)]
        lines.append(f"  subgraph cluster_m{m.id} {{")
        lines.append(f'    label="module {m.id}"; color="{color}";')
        for layer, i in m.units:
            lines.append(f'    u{layer}_{i} [label="{layer}:{i}", fillcolor="{color}"];')
        lines.append("  }")
    layers: dict[int, list[str]] = {}
    for layer, i in alive:
        layers.setdefault(layer, []).append(f"u{layer}_{i}")
    for layer in sorted(layers):
        lines.append("  { rank=same; " + " ".join(layers[layer]) + "; }")
    for layer in range(mlp.n_layers):
        for u, v in zip(*np.nonzero(adjacency(mlp, layer))):
            lines.append(f"  u{layer}_{int(u)} -> u{layer + 1}_{int(v)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def hierarchy_dot(hierarchy: ModuleHierarchy) -> str:
    """Module-level DOT: one node per module, one edge per uses-relation."""
    lines = ["digraph modules {", "  rankdir=LR;"]
    for m in hierarchy.modules:
        color = _PALETTE[m.id % len(_PALETTE)]
        label = f"M{m.id}\\nin {sorted(m.inputs)}\\nout {sorted(m.outputs)}"
        lines.append(f'  m{m.id} [shape=box, style=filled, fillcolor="{color}", '
                     f'label="{label}"];')
    for a, b in sorted(hierarchy.uses):
        lines.append(f"  m{a} -> m{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_dot(graph) -> str:
    """DOT of a Boolean function graph; dashed edges negate their source."""
    lines = ["digraph function {", "  rankdir=LR;"]
    for n in graph.nodes:
        if n.kind == "input":
            label, shape = f"x{n.id + 1}", "circle"
        elif n.kind == "output":
            label, shape = f"y{n.id - len(graph.nodes) + graph.n_outputs + 1}\\n{n.gate}", "doublecircle"
        else:
            label, shape = n.gate, "box"
        lines.append(f'  n{n.id} [label="{label}", shape={shape}];')
    for e in graph.edges:
        style = ' [style=dashed]' if e.negate else ""
        lines.append(f"  n{e.src} -> n{e.dst}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def truth_table_csv(table) -> str:
    head = [f"x{i + 1}" for i in range(table.n_inputs)] + [f"y{j + 1}" for j in range(table.n_outputs)]
    rows = [",".join(head)]
    for xi, yi in zip(table.inputs, table.outputs):
        rows.append(",".join(str(int(v)) for v in (*xi, *yi)))
    return "\r\n".join(rows) + "\r\n"

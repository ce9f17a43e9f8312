"""Masked ReLU MLP with hand-derived backprop, Adam + L2, and unit scores.

Weights are stored as ``W[l]`` of shape ``(fan_out, fan_in)`` so a batch of
row vectors propagates as ``A @ (W * M).T + b``. Masks are float arrays of
0/1; a pruned weight is exactly zero and stays that way.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .boolean_graph import TruthTable
from .dataset import NoiseConfig, noisy_epoch, validation_view

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became NaN at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple[int, ...]
    seed: int = 0
    lr: float = 0.05
    batch_size: int = 16
    epochs: int = 120
    l2: float = 1e-4
    accuracy_threshold: float = 1.0

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("widths need >= 2 entries, all >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0 or self.l2 < 0:
            raise ValueError("invalid training hyperparameters")
        if not 0.0 <= self.accuracy_threshold <= 1.0:
            raise ValueError("accuracy_threshold must lie in [0, 1]")


@dataclass
class MaskedMlp:
    widths: tuple[int, ...]
    seed: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    masks: list[np.ndarray]
    unit_alive: list[np.ndarray]  # one 0/1 vector per hidden layer
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self) -> None:
        if not self.m_w:
            self.reset_adam()

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(self.widths[1:-1])

    def reset_adam(self) -> None:
        self.m_w = [np.zeros_like(w) for w in self.weights]
        self.v_w = [np.zeros_like(w) for w in self.weights]
        self.m_b = [np.zeros_like(b) for b in self.biases]
        self.v_b = [np.zeros_like(b) for b in self.biases]
        self.step = 0

    def copy(self) -> "MaskedMlp":
        return copy.deepcopy(self)

    def bias_masks(self) -> list[np.ndarray]:
        return [*self.unit_alive, np.ones(self.widths[-1])]

    def edge_count(self) -> int:
        return sum(w.size for w in self.weights)

    def live_edges(self) -> int:
        return int(sum(m.sum() for m in self.masks))

    def density(self) -> float:
        return self.live_edges() / self.edge_count()

    def alive_counts(self) -> tuple[int, ...]:
        return tuple(int(a.sum()) for a in self.unit_alive)

    def enforce_masks(self) -> None:
        """Zero pruned weights, their Adam moments, and dead-unit biases."""
        for l, m in enumerate(self.masks):
            self.weights[l] *= m
            self.m_w[l] *= m
            self.v_w[l] *= m
        for l, bm in enumerate(self.bias_masks()):
            self.biases[l] *= bm
            self.m_b[l] *= bm
            self.v_b[l] *= bm

    def kill_units(self, layer: int, units: np.ndarray) -> None:
        """Prune hidden units (``layer`` is 0-based over hidden layers)."""
        self.unit_alive[layer][units] = 0.0
        self.masks[layer][units, :] = 0.0
        self.masks[layer + 1][:, units] = 0.0
        self.enforce_masks()

    def prune_dangling(self) -> None:
        """Mark hidden units with no remaining in- or out-edges as dead."""
        for l in range(len(self.unit_alive)):
            no_in = self.masks[l].sum(axis=1) == 0
            no_out = self.masks[l + 1].sum(axis=0) == 0
            dead = np.flatnonzero((no_in & no_out) & (self.unit_alive[l] > 0))
            if dead.size:
                self.kill_units(l, dead)


def init_mlp(cfg: MlpConfig) -> MaskedMlp:
    """Kaiming-normal weights (variance 2 / fan_in), zero biases, full masks."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 0x6D6C70])))
    weights, biases, masks = [], [], []
    for fan_in, fan_out in zip(cfg.widths[:-1], cfg.widths[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
        masks.append(np.ones((fan_out, fan_in)))
    alive = [np.ones(w) for w in cfg.widths[1:-1]]
    return MaskedMlp(tuple(cfg.widths), cfg.seed, weights, biases, masks, alive)


def forward(mlp: MaskedMlp, x: np.ndarray):
    """Pre-activations and activations per layer. ``acts[0]`` is the input;
    the last pre-activation is the logit matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.widths[0]:
        raise ValueError(f"expected input of width {mlp.widths[0]}, got shape {x.shape}")
    pre, acts = [], [x]
    a = x
    last = mlp.n_layers - 1
    for l in range(mlp.n_layers):
        z = a @ (mlp.weights[l] * mlp.masks[l]).T + mlp.biases[l]
        pre.append(z)
        a = z if l == last else np.maximum(z, 0.0)
        acts.append(a)
    return pre, acts


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample bitwise cross-entropy, summed over output bits."""
    return (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum(axis=1)


def loss(mlp: MaskedMlp, x: np.ndarray, y: np.ndarray) -> float:
    pre, _ = forward(mlp, x)
    return float(bce_with_logits(pre[-1], y).mean())


def backward(mlp: MaskedMlp, pre, acts, y: np.ndarray):
    """Gradients of the batch-mean loss. Returns (dW, db, dA) where ``dA[l]``
    is the gradient w.r.t. the activations of hidden layer ``l`` (0-based)."""
    n = y.shape[0]
    dz = (sigmoid(pre[-1]) - y) / n
    dW = [None] * mlp.n_layers
    db = [None] * mlp.n_layers
    dA = [None] * (mlp.n_layers - 1)
    for l in range(mlp.n_layers - 1, -1, -1):
        eff = mlp.weights[l] * mlp.masks[l]
        dW[l] = (dz.T @ acts[l]) * mlp.masks[l]
        db[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ eff
            dA[l - 1] = da
            dz = da * (pre[l - 1] > 0)
    for l, bm in enumerate(mlp.bias_masks()):
        db[l] = db[l] * bm
    return dW, db, dA


def gradients(mlp: MaskedMlp, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Loss gradients including the L2 term on unmasked weights."""
    pre, acts = forward(mlp, x)
    dW, db, _ = backward(mlp, pre, acts, y)
    if l2:
        dW = [g + l2 * w * m for g, w, m in zip(dW, mlp.weights, mlp.masks)]
    return dW, db


def _adam_update(param, grad, m, v, lr, c1, c2):
    m *= ADAM_B1
    m += (1 - ADAM_B1) * grad
    v *= ADAM_B2
    v += (1 - ADAM_B2) * grad * grad
    param -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)


def train(mlp: MaskedMlp, table: TruthTable, noise: NoiseConfig, cfg: MlpConfig,
          epoch_offset: int = 0, engine: str = "compiled") -> tuple[MaskedMlp, TrainHistory]:
    """Train a copy of ``mlp``; the input model is left untouched.

    ``epoch_offset`` shifts the noise stream so successive retraining rounds
    see fresh noise while staying reproducible. ``engine="numpy"`` runs the
    reference implementation instead of the compiled loop.
    """
    if table.n_inputs != mlp.widths[0] or table.n_outputs != mlp.widths[-1]:
        raise ValueError("network widths do not match the truth table")
    net = mlp.copy()
    hist = TrainHistory()
    if cfg.epochs == 0:
        return net, hist
    if engine == "compiled":
        return _train_compiled(net, table, noise, cfg, epoch_offset)
    if engine != "numpy":
        raise ValueError(f"unknown engine {engine!r}")
    xv, yv = validation_view(table)
    bias_masks = net.bias_masks()
    for epoch in range(cfg.epochs):
        x, y = noisy_epoch(table, noise, epoch_offset + epoch)
        total = 0.0
        for start in range(0, x.shape[0], cfg.batch_size):
            xb = x[start:start + cfg.batch_size]
            yb = y[start:start + cfg.batch_size]
            pre, acts = forward(net, xb)
            total += float(bce_with_logits(pre[-1], yb).sum())
            dW, db, _ = backward(net, pre, acts, yb)
            net.step += 1
            c1 = 1 - ADAM_B1 ** net.step
            c2 = 1 - ADAM_B2 ** net.step
            for l in range(net.n_layers):
                g = dW[l] + cfg.l2 * net.weights[l] * net.masks[l]
                _adam_update(net.weights[l], g, net.m_w[l], net.v_w[l], cfg.lr, c1, c2)
                net.weights[l] *= net.masks[l]
                _adam_update(net.biases[l], db[l], net.m_b[l], net.v_b[l], cfg.lr, c1, c2)
                net.biases[l] *= bias_masks[l]
        epoch_loss = total / x.shape[0]
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch)
        hist.loss.append(epoch_loss)
        hist.val_accuracy.append(bitwise_accuracy(net, xv, yv))
    return net, hist


def _train_compiled(net: MaskedMlp, table: TruthTable, noise: NoiseConfig, cfg: MlpConfig,
                    epoch_offset: int) -> tuple[MaskedMlp, TrainHistory]:
    from . import _kernel

    epochs = [noisy_epoch(table, noise, epoch_offset + e) for e in range(cfg.epochs)]
    X = np.ascontiguousarray(np.stack([x for x, _ in epochs]))
    Y = np.ascontiguousarray(np.stack([y for _, y in epochs]))
    xv, yv = validation_view(table)
    L = _kernel.as_list
    step, losses, accs = _kernel.train_epochs(
        L(net.weights), L(net.biases), L(net.masks), L(net.bias_masks()),
        L(net.m_w), L(net.v_w), L(net.m_b), L(net.v_b), net.step, X, Y,
        np.ascontiguousarray(xv), np.ascontiguousarray(yv),
        float(cfg.lr), float(cfg.l2), int(cfg.batch_size), ADAM_B1, ADAM_B2, ADAM_EPS)
    net.step = int(step)
    if not np.isfinite(losses[-1]):
        raise DivergenceError(len(losses) - 1)
    return net, TrainHistory(losses.tolist(), accs.tolist())


def predict_bits(logits: np.ndarray) -> np.ndarray:
    # sigmoid(z) > 0.5 exactly when z > 0; a tie predicts 0
    return (logits > 0).astype(np.float64)


def accuracy_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    return float((predict_bits(logits) == y).mean())


def bitwise_accuracy(mlp: MaskedMlp, x: np.ndarray, y: np.ndarray) -> float:
    pre, _ = forward(mlp, x)
    return accuracy_from_logits(pre[-1], y)


def loss_sensitivity_scores(mlp: MaskedMlp, x: np.ndarray, y: np.ndarray,
                            strategy: str = "mean_then_abs") -> list[np.ndarray]:
    """First-order estimate of the loss change from silencing each hidden unit.

    Per sample, the unit term is ``dL/da * a``. ``mean_then_abs`` averages it
    over the validation rows before taking the magnitude; ``abs_then_mean``
    averages magnitudes. Dead units score 0.
    """
    pre, acts = forward(mlp, x)
    _, _, dA = backward(mlp, pre, acts, y)
    n = x.shape[0]
    scores = []
    for l, alive in enumerate(mlp.unit_alive):
        # dA holds gradients of the batch mean, so per-sample terms are n * dA * a
        per_sample = n * dA[l] * acts[l + 1]
        if strategy == "mean_then_abs":
            s = np.abs(per_sample.mean(axis=0))
        elif strategy == "abs_then_mean":
            s = np.abs(per_sample).mean(axis=0)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        scores.append(s * alive)
    return scores

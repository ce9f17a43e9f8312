"""Small builders shared by the test modules."""

import numpy as np

from hiermod.mlp import MaskedMlp


def make_mlp(weights, biases=None, masks=None, alive=None, seed=0) -> MaskedMlp:
    weights = [np.array(w, dtype=np.float64) for w in weights]
    widths = (weights[0].shape[1], *[w.shape[0] for w in weights])
    if biases is None:
        biases = [np.zeros(w.shape[0]) for w in weights]
    if masks is None:
        masks = [np.ones_like(w) for w in weights]
    if alive is None:
        alive = [np.ones(w) for w in widths[1:-1]]
    return MaskedMlp(widths, seed, weights, [np.array(b, float) for b in biases],
                     [np.array(m, float) for m in masks], [np.array(a, float) for a in alive])


def random_mlp(rng, widths, density=1.0, dead_prob=0.0) -> MaskedMlp:
    weights = [rng.normal(size=(o, i)) for i, o in zip(widths[:-1], widths[1:])]
    masks = [(rng.random(w.shape) < density).astype(float) for w in weights]
    biases = [rng.normal(size=w.shape[0]) * 0.1 for w in weights]
    net = make_mlp([w * m for w, m in zip(weights, masks)], biases, masks)
    for l, width in enumerate(widths[1:-1]):
        dead = np.flatnonzero(rng.random(width) < dead_prob)
        if dead.size:
            net.kill_units(l, dead)
    return net

"""Compiled training loop. Mirrors the numpy path in ``mlp.py`` step for step;
the two are checked against each other in the test suite."""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from numba.typed import List


@njit(cache=True)
def _forward(Ws, bs, Ms, x, pre, acts):
    n_layers = len(Ws)
    rows = x.shape[0]
    acts[0][:rows, :] = x
    for l in range(n_layers):
        W = Ws[l]
        M = Ms[l]
        b = bs[l]
        a_in = acts[l]
        z = pre[l]
        out_dim, in_dim = W.shape
        for r in range(rows):
            for j in range(out_dim):
                s = b[j]
                for i in range(in_dim):
                    s += a_in[r, i] * (W[j, i] * M[j, i])
                z[r, j] = s
        a_out = acts[l + 1]
        if l == n_layers - 1:
            for r in range(rows):
                for j in range(out_dim):
                    a_out[r, j] = z[r, j]
        else:
            for r in range(rows):
                for j in range(out_dim):
                    a_out[r, j] = z[r, j] if z[r, j] > 0.0 else 0.0


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True)
def _adam(p, g, m, v, lr, b1, b2, eps, c1, c2):
    flat_p = p.ravel()
    flat_g = g.ravel()
    flat_m = m.ravel()
    flat_v = v.ravel()
    for k in range(flat_p.shape[0]):
        gk = flat_g[k]
        flat_m[k] = b1 * flat_m[k] + (1.0 - b1) * gk
        flat_v[k] = b2 * flat_v[k] + (1.0 - b2) * gk * gk
        flat_p[k] -= lr * (flat_m[k] / c1) / (math.sqrt(flat_v[k] / c2) + eps)


@njit(cache=True)
def train_epochs(Ws, bs, Ms, bms, mWs, vWs, mbs, vbs, step, X, Y, xv, yv,
                 lr, l2, batch_size, b1, b2, eps):
    """X, Y: (epochs, rows, dim) pre-shuffled noisy inputs and targets.

    Updates parameters and moments in place. Returns the final step count,
    per-epoch mean losses and per-epoch validation accuracies.
    """
    n_layers = len(Ws)
    epochs, rows, _ = X.shape
    losses = np.zeros(epochs)
    accs = np.zeros(epochs)
    widths = np.empty(n_layers + 1, dtype=np.int64)
    widths[0] = Ws[0].shape[1]
    for l in range(n_layers):
        widths[l + 1] = Ws[l].shape[0]
    cap = max(batch_size, xv.shape[0])
    pre = List()
    acts = List()
    dz = List()
    acts.append(np.zeros((cap, widths[0])))
    for l in range(n_layers):
        pre.append(np.zeros((cap, widths[l + 1])))
        acts.append(np.zeros((cap, widths[l + 1])))
        dz.append(np.zeros((cap, widths[l + 1])))
    gW = List()
    gb = List()
    for l in range(n_layers):
        gW.append(np.zeros(Ws[l].shape))
        gb.append(np.zeros(bs[l].shape[0]))
    m_out = widths[n_layers]
    for e in range(epochs):
        total = 0.0
        for start in range(0, rows, batch_size):
            stop = min(start + batch_size, rows)
            nb = stop - start
            xb = X[e, start:stop]
            yb = Y[e, start:stop]
            _forward(Ws, bs, Ms, xb, pre, acts)
            zL = pre[n_layers - 1]
            d = dz[n_layers - 1]
            for r in range(nb):
                for j in range(m_out):
                    z = zL[r, j]
                    y = yb[r, j]
                    total += max(z, 0.0) - z * y + math.log1p(math.exp(-abs(z)))
                    d[r, j] = (_sigmoid(z) - y) / nb
            for l in range(n_layers - 1, -1, -1):
                W = Ws[l]
                M = Ms[l]
                d = dz[l]
                a_in = acts[l]
                out_dim, in_dim = W.shape
                g = gW[l]
                gbl = gb[l]
                bm = bms[l]
                g[:, :] = 0.0
                gbl[:] = 0.0
                for r in range(nb):
                    for j in range(out_dim):
                        dj = d[r, j]
                        if dj != 0.0:
                            gbl[j] += dj
                            for i in range(in_dim):
                                g[j, i] += dj * a_in[r, i]
                for j in range(out_dim):
                    gbl[j] *= bm[j]
                    for i in range(in_dim):
                        g[j, i] = g[j, i] * M[j, i] + l2 * W[j, i] * M[j, i]
                if l > 0:
                    dprev = dz[l - 1]
                    zprev = pre[l - 1]
                    for r in range(nb):
                        for i in range(in_dim):
                            dprev[r, i] = 0.0
                        for j in range(out_dim):
                            dj = d[r, j]
                            if dj != 0.0:
                                for i in range(in_dim):
                                    dprev[r, i] += dj * (W[j, i] * M[j, i])
                        for i in range(in_dim):
                            if zprev[r, i] <= 0.0:
                                dprev[r, i] = 0.0
            step += 1
            c1 = 1.0 - b1 ** step
            c2 = 1.0 - b2 ** step
            for l in range(n_layers):
                _adam(Ws[l], gW[l], mWs[l], vWs[l], lr, b1, b2, eps, c1, c2)
                W = Ws[l]
                M = Ms[l]
                for j in range(W.shape[0]):
                    for i in range(W.shape[1]):
                        W[j, i] *= M[j, i]
                _adam(bs[l], gb[l], mbs[l], vbs[l], lr, b1, b2, eps, c1, c2)
                b = bs[l]
                bm = bms[l]
                for j in range(b.shape[0]):
                    b[j] *= bm[j]
        losses[e] = total / rows
        if not math.isfinite(losses[e]):
            return step, losses[: e + 1], accs[: e + 1]
        _forward(Ws, bs, Ms, xv, pre, acts)
        zL = pre[n_layers - 1]
        hits = 0
        nv = xv.shape[0]
        for r in range(nv):
            for j in range(m_out):
                pred = 1.0 if zL[r, j] > 0.0 else 0.0
                if pred == yv[r, j]:
                    hits += 1
        accs[e] = hits / (nv * m_out)
    return step, losses, accs


def as_list(arrays) -> List:
    out = List()
    for a in arrays:
        out.append(a)
    return out

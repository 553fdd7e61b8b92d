"""Reference computations written independently of the package code."""

import itertools
import math

import numpy as np


def central_difference(f, params, step=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``params`` (perturbed in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = f()
            flat[i] = old - step
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-6):
    """Max over tensors of ||a - n|| / max(||a|| + ||n||, floor).

    The floor keeps tensors whose true gradient is exactly zero (the output
    bias under a pairwise loss) from turning step noise into a huge ratio.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def discount(j):
    return math.log(2) / math.log(2 + j)


def brute_force_best(values, weights):
    """Max of sum_j values[perm[j]] * weights[j] over every permutation."""
    best = -math.inf
    for perm in itertools.permutations(range(len(values))):
        best = max(best, sum(values[i] * weights[j] for j, i in enumerate(perm)))
    return best


def total(values, weights, order):
    return sum(values[i] * weights[j] for j, i in enumerate(order))


def mlp_forward(weights, biases, acts, x):
    h = np.asarray(x, dtype=np.float64)
    for w, b, a in zip(weights, biases, acts):
        h = h @ w + b
        if a == "relu":
            h = np.maximum(h, 0)
        elif a == "tanh":
            h = np.tanh(h)
    return h

"""Finite-difference gradient checking against the tape.

`fd_grad` differentiates a black-box scalar function numerically with
centered differences and never consults the tape, so it serves as the
independent oracle for `autodiff.grad`. `random_graph` builds a small
computation that routes through every primitive op the library exposes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad

__all__ = ["fd_grad", "max_rel_err", "random_graph", "check_graph"]

ParamDict = dict[str, np.ndarray]


def fd_grad(fn: Callable[[ParamDict], float], params: ParamDict,
            h: float = 1e-5) -> ParamDict:
    """Centered differences (f(p+h) - f(p-h)) / 2h, one coordinate at a time."""
    out: ParamDict = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = fn(params)
            flat[i] = keep - h
            fm = fn(params)
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def max_rel_err(analytic: ParamDict, numeric: ParamDict) -> float:
    """Max over all coordinates of |a - n| / max(|a|, |n|, 1).

    The denominator is floored at 1 so near-zero gradients are judged at
    the same absolute tolerance instead of dividing by noise."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
        err = np.abs(a - n) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def random_graph(rng: np.random.Generator):
    """A randomized forward pass covering every primitive op.

    Returns (params, fn) where fn maps a dict of Tensors (keys matching
    `params`) to a scalar-loss Tensor. Callers decide whether the tensors
    are trainable and whether a tape is active.
    """
    n = int(rng.integers(2, 4))          # batch rows
    de = int(rng.integers(2, 4))         # embedding width
    dh = int(rng.integers(3, 5))         # hidden width
    v = int(rng.integers(3, 5))          # vocab size
    side = int(rng.integers(5, 7))       # image side

    params: ParamDict = {
        "emb": rng.normal(0, 0.6, size=(6, de)),
        "w1": rng.normal(0, 0.6, size=(de, dh)),
        "b1": rng.normal(0, 0.3, size=(dh,)),
        "w2": rng.normal(0, 0.6, size=(v, 2 * dh)),
        "img": rng.normal(0, 0.6, size=(side * side,)),
        "ker": rng.normal(0, 0.6, size=(2, 2, 1, 2)),
        "kb": rng.normal(0, 0.3, size=(2,)),
    }
    idx = rng.integers(0, 6, size=n)
    targets = rng.integers(0, v, size=n)
    scale = float(rng.uniform(0.5, 1.5))

    def fn(t: dict[str, ad.Tensor]) -> ad.Tensor:
        e = ad.gather_rows(t["emb"], idx)                        # embedding lookup
        h = ad.tanh(ad.add(ad.matmul(e, t["w1"]), t["b1"]))      # matmul, add, tanh
        s = ad.sigmoid(ad.sub(ad.mul(h, ad.constant(scale)), ad.neg(h)))
        c = ad.concat([h, s], axis=1)                            # concat
        logits = ad.matmul(c, ad.transpose(t["w2"]))             # transpose
        ce = ad.tmean(ad.softmax_xent(logits, targets))          # softmax-xent, mean
        img = ad.reshape(t["img"], (1, side, side, 1))           # reshape
        z = ad.conv2d(img, t["ker"], t["kb"], stride=2)          # conv2d
        zpos = ad.log(ad.add(ad.exp(z), ad.constant(1.0)))       # exp, log (softplus)
        return ad.add(ce, ad.mul(ad.tsum(zpos), ad.constant(0.1)))  # sum

    return params, fn


def check_graph(seed: int, h: float = 1e-5) -> float:
    """Build one random graph, return max relative error of tape vs FD."""
    rng = np.random.default_rng(seed)
    params, fn = random_graph(rng)

    with ad.recording() as tape:
        handles = {k: ad.Tensor(a, requires_grad=True, op=f"param:{k}")
                   for k, a in params.items()}
        loss = fn(handles)
        grads = ad.grad(loss, handles.values(), tape)
    analytic = dict(zip(handles.keys(), grads))

    def scalar(p: ParamDict) -> float:
        return float(fn({k: ad.Tensor(a) for k, a in p.items()}).data)

    numeric = fd_grad(scalar, params, h=h)
    return max_rel_err(analytic, numeric)

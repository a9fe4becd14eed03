"""Finite-difference audit over every differentiable op and the feature objectives."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .flow import bilinear_warp, identity_flow
from .objectives import dann_em_feature_loss, dann_losses, dann_ss_losses

# each case: rng -> (scalar function of one tensor, evaluation point)
Case = Callable[[np.random.Generator], tuple[Callable[[T.Tensor], T.Tensor], np.ndarray]]


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted(rng, shape):
    # a fixed random projection makes every output coordinate matter
    w = rng.normal(size=shape)
    return lambda t: (t * w).sum()


def _unary(op, positive=False, kink=False) -> Case:
    def case(rng):
        shape = (3, 4)
        if positive:
            x = rng.uniform(0.2, 3.0, size=shape)
        elif kink:
            x = _away_from_zero(rng, shape)
        else:
            x = rng.normal(size=shape)
        proj = _weighted(rng, shape)
        return (lambda t: proj(op(t))), x
    return case


def _binary(op, positive_rhs=False) -> Case:
    def case(rng):
        other = rng.uniform(0.5, 2.0, size=(3, 4)) if positive_rhs else rng.normal(size=(3, 4))
        proj = _weighted(rng, (3, 4))
        # differentiate w.r.t. both operands through one stacked input
        def f(t):
            return proj(op(t[0], t[1] if not positive_rhs else T.exp(t[1])))
        return f, np.stack([rng.normal(size=(3, 4)), np.log(other) if positive_rhs else other])
    return case


def _matmul(rng):
    b = rng.normal(size=(4, 2))
    proj = _weighted(rng, (3, 2))
    return (lambda t: proj(T.matmul(t, b))), rng.normal(size=(3, 4))


def _affine(rng):
    x = rng.normal(size=(5, 3))
    proj = _weighted(rng, (5, 2))
    def f(t):
        w = t[:6].reshape((3, 2))
        return proj(T.affine(x, w, t[6:]))
    return f, rng.normal(size=8)


def _reduction(op) -> Case:
    def case(rng):
        proj = _weighted(rng, (3,))
        return (lambda t: proj(op(t))), rng.normal(size=(3, 4))
    return case


def _concat(rng):
    other = rng.normal(size=(2, 4))
    proj = _weighted(rng, (5, 4))
    return (lambda t: proj(T.concat([t, other], axis=0))), rng.normal(size=(3, 4))


def _slice(rng):
    proj = _weighted(rng, (2, 2))
    return (lambda t: proj(t[1:3, ::2])), rng.normal(size=(3, 4))


def _transpose(rng):
    proj = _weighted(rng, (4, 3))
    return (lambda t: proj(T.transpose(t))), rng.normal(size=(3, 4))


def _reshape(rng):
    proj = _weighted(rng, (2, 6))
    return (lambda t: proj(T.reshape(t, (2, 6)))), rng.normal(size=(3, 4))


def _labels(rng, m, n):
    return rng.integers(0, n, size=m)


def _dann_feature(rng):
    m, n = 6, 3
    y = _labels(rng, m, n)
    def f(t):
        probs = T.softmax(t[:, :n])
        d = T.sigmoid(t[:, n])
        return dann_losses(probs, y, d, T.sigmoid(t[:, n] * 0.5 + 0.3), lam=0.7).loss_f
    return f, rng.normal(size=(m, n + 1))


def _ss_feature(rng):
    m, n = 6, 3
    y = _labels(rng, m, n)
    def f(t):
        return dann_ss_losses(T.softmax(t[:m]), y, T.softmax(t[m:]), lam=0.7, beta=0.25).loss_f
    return f, rng.normal(size=(2 * m, n + 1))


def _em_feature(rng):
    m, n = 6, 3
    y = _labels(rng, m, n)
    def f(t):
        return dann_em_feature_loss(T.softmax(t[:m]), y, T.softmax(t[m:]), lam=0.7, gamma=0.4)
    return f, rng.normal(size=(2 * m, n + 1))


def _fractional_flow(rng, h, w):
    # sampling coordinates at least 0.1 away from integers, inside the image
    base = identity_flow(h, w)
    frac = rng.uniform(0.1, 0.9, size=base.shape) * rng.choice([-1.0, 1.0], size=base.shape)
    return np.clip(base + frac, 0.1, np.array([w - 1.1, h - 1.1]))


def _warp_flow(rng):
    h, w = 5, 6
    image = rng.random((h, w))
    target = rng.random((h, w))
    return (lambda t: T.absolute(bilinear_warp(image, t) - target).mean()), _fractional_flow(rng, h, w)


def _warp_image(rng):
    h, w = 5, 6
    flow = _fractional_flow(rng, h, w)
    proj = _weighted(rng, (h, w, 2))
    return (lambda t: proj(bilinear_warp(t, flow))), rng.random((h, w, 2))


CASES: dict[str, Case] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_rhs=True),
    "scale": _unary(lambda t: T.scale(t, -1.7)),
    "matmul": _matmul,
    "affine": _affine,
    "relu": _unary(T.relu, kink=True),
    "tanh": _unary(T.tanh),
    "sigmoid": _unary(T.sigmoid),
    "exp": _unary(T.exp),
    "log": _unary(T.log, positive=True),
    "absolute": _unary(T.absolute, kink=True),
    "square": _unary(T.square),
    "softmax": _unary(T.softmax),
    "log_softmax": _unary(T.log_softmax),
    "sum": _reduction(lambda t: T.tsum(t, axis=1)),
    "mean": _reduction(lambda t: T.tmean(t, axis=1)),
    "concat": _concat,
    "slice": _slice,
    "transpose": _transpose,
    "reshape": _reshape,
    "dann_feature_loss": _dann_feature,
    "dann_ss_feature_loss": _ss_feature,
    "dann_em_feature_loss": _em_feature,
    "warp_wrt_flow": _warp_flow,
    "warp_wrt_image": _warp_image,
}


def run_audit(points: int = 100, seed: int = 0, eps: float = 1e-6) -> dict[str, float]:
    """Worst relative error per case over ``points`` random evaluation points."""
    rng = np.random.default_rng(seed)
    report = {}
    for name, case in CASES.items():
        worst = 0.0
        for _ in range(points):
            fn, x = case(rng)
            worst = max(worst, T.grad_check(fn, x, eps=eps).max_rel_error)
        report[name] = worst
    return report

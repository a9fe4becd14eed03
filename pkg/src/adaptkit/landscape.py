"""Optimal solutions of the per-example DANN-EM target objective on the simplex.

For an (N+1)-way score vector ``alpha`` with target-class mass ``a`` the
objective is

    (1 - a) * sum_i at_i log at_i + (1 - a) log(1 - a) + gamma_inv * log(1 - a)

with ``at_i = alpha_i / (1 - a)`` for i <= N. ``gamma_inv = 0`` is the
entropy term alone; ``gamma_inv = 1/gamma`` adds the adversarial term.
Multiplying by ``lam * gamma`` gives the DANN-EM target term
(see :func:`em_target_term`), so argmax statements carry over.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_GRID_POINTS = 10**8
SIMPLEX_TOL = 1e-12


def _xlogx(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def _validate(alpha: np.ndarray) -> None:
    if alpha.ndim < 1 or alpha.shape[-1] < 2:
        raise ValueError(f"simplex point needs at least 2 entries, got shape {alpha.shape}")
    if np.any(alpha < 0):
        raise ValueError("simplex point has a negative entry")
    if np.any(np.abs(alpha.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("simplex point does not sum to 1")


def landscape_values(alpha: np.ndarray, gamma_inv: float) -> np.ndarray:
    """Vectorised objective over rows of ``alpha`` (shape (..., N+1))."""
    alpha = np.asarray(alpha, dtype=float)
    _validate(alpha)
    if gamma_inv < 0:
        raise ValueError("gamma_inv must be >= 0")
    real = alpha[..., :-1]
    mass = real.sum(axis=-1)
    out = np.empty(mass.shape)
    zero = mass <= 0
    out[zero] = -math.inf if gamma_inv > 0 else 0.0
    m = mass[~zero]
    cond = real[~zero] / m[:, None]
    log_m = np.log(m)
    out[~zero] = m * _xlogx(cond).sum(axis=-1) + m * log_m + gamma_inv * log_m
    return out


def landscape_value(alpha, gamma_inv: float) -> float:
    """Objective at a single simplex point; ``-inf`` when all mass is on the target class and ``gamma_inv > 0``."""
    return float(landscape_values(np.asarray(alpha, dtype=float)[None, :], gamma_inv)[0])


def em_target_term(alpha, lam: float, gamma: float) -> float:
    """``lam * (gamma * sum_{i<=N} alpha_i log alpha_i + log(1 - alpha_{N+1}))`` for one example."""
    alpha = np.asarray(alpha, dtype=float)
    _validate(alpha)
    return float(lam * (gamma * _xlogx(alpha[:-1]).sum() + np.log(alpha[:-1].sum())))


def grid_size(n_classes: int, grid_steps: int) -> int:
    return math.comb(grid_steps + n_classes, n_classes)


def compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``total``.

    Stars and bars: each choice of ``parts - 1`` bar slots among
    ``total + parts - 1`` gives one vector, in lexicographic order.
    """
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    slots = total + parts - 1
    flat = itertools.chain.from_iterable(itertools.combinations(range(slots), parts - 1))
    bars = np.fromiter(flat, dtype=np.int64).reshape(-1, parts - 1)
    edges = np.column_stack([np.full(len(bars), -1), bars, np.full(len(bars), slots)])
    return np.diff(edges, axis=1) - 1


@dataclass
class BruteForceResult:
    max_value: float
    argmax: np.ndarray  # (k, N+1) grid points within ``tol`` of the max
    n_points: int

    def to_dict(self) -> dict:
        return {"max": self.max_value, "argmax": self.argmax.tolist(), "n_points": self.n_points}


def brute_force_maximize(n_classes: int, gamma_inv: float, grid_steps: int, tol: float = 1e-9) -> BruteForceResult:
    """Evaluate the objective on every barycentric grid point ``k / grid_steps``."""
    if n_classes < 1:
        raise ValueError("need at least one real class")
    if grid_steps < 10:
        raise ValueError("grid_steps must be >= 10")
    count = grid_size(n_classes, grid_steps)
    if count > MAX_GRID_POINTS:
        raise ValueError(f"grid has {count} points, above the limit of {MAX_GRID_POINTS}")
    pts = compositions(grid_steps, n_classes + 1) / grid_steps
    # grid points sum to 1 only up to rounding; renormalise the last coordinate
    pts[:, -1] = 1.0 - pts[:, :-1].sum(axis=1)
    pts[:, -1] = np.maximum(pts[:, -1], 0.0)
    vals = landscape_values(pts, gamma_inv)
    best = float(vals.max())
    keep = vals >= best - tol
    return BruteForceResult(best, pts[keep], count)


def curve_samples(gamma_inv: float, num_points: int, rescale: bool = False) -> list[tuple[float, float]]:
    """``(a, (1 - a + gamma_inv) log(1 - a))`` on an even grid over ``[0, 1)``.

    With ``rescale`` the values are multiplied by a positive constant so the
    lowest sample sits at -7.
    """
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    a = np.linspace(0.0, 1.0, num_points, endpoint=False)
    v = (1.0 - a + gamma_inv) * np.log1p(-a)
    if rescale and v.min() < 0:
        v = v * (7.0 / -v.min())
    return list(zip(a.tolist(), v.tolist()))


def random_simplex(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """``n`` points uniform on the simplex in ``dim`` coordinates (normalised exponentials)."""
    e = rng.exponential(size=(n, dim))
    return e / e.sum(axis=1, keepdims=True)

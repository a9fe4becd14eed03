"""Synthetic two-domain classification tasks with a controlled shift.

The target domain is split into two subgroups (``day``/``night``) that share a
rotation shift; ``night`` additionally rescales a few coordinates, an analogue
of lighting change. Source and target share the label-generating process.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
GROUPS = ("day", "night")


@dataclass
class ShiftSpec:
    rotation_deg: float = 55.0
    rotation_plane: tuple = (0, 1)
    scale: float = 2.0  # night-group factor on ``scale_dims``
    scale_dims: tuple = (2, 3)
    offset: float = 0.0  # additive shift on ``offset_dims`` for every target example
    offset_dims: tuple = ()
    permute: bool = False
    night_fraction: float = 0.5


@dataclass
class SyntheticDomainSpec:
    base: str = "blobs"  # "blobs", "moons" or "glyphs"
    dim: int = 8
    n_classes: int = 3
    n_source: int = 2000
    n_target: int = 2000
    n_val_pool: int = 1000
    n_test: int = 2000
    cluster_std: float = 1.3
    class_radius: float = 3.0
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    standardize: bool = True
    seed: int = 42

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.n_source, self.n_target, self.n_val_pool, self.n_test) <= 0:
            raise ValueError("all split sizes must be positive")
        if self.base not in ("blobs", "moons", "glyphs"):
            raise ValueError(f"unknown base task {self.base!r}")
        if self.base != "glyphs" and self.dim < 2:
            raise ValueError("vector tasks need dim >= 2")
        if not 0.0 <= self.shift.night_fraction <= 1.0:
            raise ValueError("night_fraction must be in [0, 1]")


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray
    group: np.ndarray  # 0 = source/day, 1 = night
    index: np.ndarray  # row ids, unique across the target pool

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> Split:
        return Split(self.x[idx], self.y[idx], self.group[idx], self.index[idx])


@dataclass
class TwoDomainData:
    spec: SyntheticDomainSpec
    source: Split
    target_train: Split  # labels present only for diagnostics, never used in training
    val_pool: Split
    test: Split

    def checksum(self) -> str:
        h = hashlib.sha256()
        for split in (self.source, self.target_train, self.val_pool, self.test):
            for arr in (split.x, split.y, split.group):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def standardize_per_example(x: np.ndarray, channel_axis: int | None = None) -> np.ndarray:
    """Per-example, per-channel ``(x - mean) / std`` with the n-1 sample std.

    ``x`` is (B, ...). With ``channel_axis`` None the whole example is one
    channel. Near-zero stds are floored at ``STD_FLOOR`` with a warning.
    """
    x = np.asarray(x, dtype=float)
    if channel_axis is None:
        flat = x.reshape(len(x), -1)
        mean = flat.mean(axis=1, keepdims=True)
        std = flat.std(axis=1, ddof=1, keepdims=True)
        if np.any(std < STD_FLOOR):
            log.warning("zero-variance example(s); std floored at %g", STD_FLOOR)
        return ((flat - mean) / np.maximum(std, STD_FLOOR)).reshape(x.shape)
    axes = tuple(i for i in range(1, x.ndim) if i != channel_axis % x.ndim)
    mean = x.mean(axis=axes, keepdims=True)
    std = x.std(axis=axes, ddof=1, keepdims=True)
    if np.any(std < STD_FLOOR):
        log.warning("zero-variance channel(s); std floored at %g", STD_FLOOR)
    return (x - mean) / np.maximum(std, STD_FLOOR)


def _class_means(rng: np.random.Generator, spec: SyntheticDomainSpec) -> np.ndarray:
    # means spread on a circle in the rotation plane with uneven spacing, so a
    # rotation cannot be undone by relabelling classes
    n, d = spec.n_classes, spec.dim
    angles = 2 * np.pi * np.arange(n) / n + rng.uniform(-0.35, 0.35, size=n)
    means = 0.4 * rng.normal(size=(n, d))
    i, j = spec.shift.rotation_plane
    means[:, i] = spec.class_radius * np.cos(angles)
    means[:, j] = spec.class_radius * np.sin(angles)
    return means


def _sample_blobs(rng, spec, means, count):
    y = rng.integers(0, spec.n_classes, size=count)
    x = means[y] + spec.cluster_std * rng.normal(size=(count, spec.dim))
    return x, y


def _sample_moons(rng, spec, count):
    if spec.n_classes != 2:
        raise ValueError("moons task is binary")
    y = rng.integers(0, 2, size=count)
    t = rng.uniform(0, np.pi, size=count)
    x = np.zeros((count, spec.dim))
    x[:, 0] = np.where(y == 0, np.cos(t), 1 - np.cos(t)) * spec.class_radius / 2
    x[:, 1] = np.where(y == 0, np.sin(t), 0.5 - np.sin(t)) * spec.class_radius / 2
    x += 0.15 * spec.cluster_std * rng.normal(size=x.shape)
    return x, y


GLYPH_SIZE = 16


def _glyph_templates(rng, n_classes):
    # one stroke pattern per class on a coarse 4x4 grid, upsampled to 16x16
    temps = []
    for _ in range(n_classes):
        coarse = (rng.random((4, 4)) < 0.45).astype(float)
        coarse[rng.integers(4), rng.integers(4)] = 1.0
        temps.append(np.kron(coarse, np.ones((4, 4))))
    return np.array(temps)


def _sample_glyphs(rng, spec, templates, count):
    y = rng.integers(0, spec.n_classes, size=count)
    shifts = rng.integers(-1, 2, size=(count, 2))
    imgs = np.empty((count, GLYPH_SIZE, GLYPH_SIZE, 3))
    for k in range(count):
        g = np.roll(templates[y[k]], tuple(shifts[k]), axis=(0, 1))
        color = rng.uniform(0.4, 1.0, size=3)
        imgs[k] = g[..., None] * color + 0.1 * rng.random((GLYPH_SIZE, GLYPH_SIZE, 1))
    return np.clip(imgs, 0, 1), y


def _apply_shift(x: np.ndarray, group: np.ndarray, spec: SyntheticDomainSpec, perm: np.ndarray | None) -> np.ndarray:
    s = spec.shift
    x = x.copy()
    if spec.base == "glyphs":
        # rotation is replaced by a colour-channel mix for images
        t = math.radians(s.rotation_deg)
        mix = np.array([[math.cos(t), math.sin(t), 0], [-math.sin(t), math.cos(t), 0], [0, 0, 1]])
        x = np.abs(x @ mix.T)
        x[group == 1] *= s.scale
        if s.offset:
            x[..., list(s.offset_dims) or [2]] += s.offset
        return np.clip(x, 0, 1)
    i, j = s.rotation_plane
    t = math.radians(s.rotation_deg)
    c, sn = math.cos(t), math.sin(t)
    xi, xj = x[:, i].copy(), x[:, j].copy()
    x[:, i] = c * xi - sn * xj
    x[:, j] = sn * xi + c * xj
    night = group == 1
    for d in s.scale_dims:
        x[night, d] *= s.scale
    for d in s.offset_dims:
        x[:, d] += s.offset
    if perm is not None:
        x = x[:, perm]
    return x


def make_two_domain_dataset(spec: SyntheticDomainSpec) -> TwoDomainData:
    """Deterministic source/target splits for ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.base == "blobs":
        means = _class_means(rng, spec)
        sampler = lambda n: _sample_blobs(rng, spec, means, n)  # noqa: E731
    elif spec.base == "moons":
        sampler = lambda n: _sample_moons(rng, spec, n)  # noqa: E731
    else:
        templates = _glyph_templates(rng, spec.n_classes)
        sampler = lambda n: _sample_glyphs(rng, spec, templates, n)  # noqa: E731
    perm = rng.permutation(spec.dim) if spec.shift.permute and spec.base != "glyphs" else None

    def prep(x):
        if not spec.standardize:
            return x
        return standardize_per_example(x, channel_axis=-1 if spec.base == "glyphs" else None)

    xs, ys = sampler(spec.n_source)
    source = Split(prep(xs), ys, np.zeros(len(ys), dtype=np.int64), np.arange(len(ys)))
    n_tgt = spec.n_target + spec.n_val_pool + spec.n_test
    xt, yt = sampler(n_tgt)
    group = (rng.random(n_tgt) < spec.shift.night_fraction).astype(np.int64)
    xt = prep(_apply_shift(xt, group, spec, perm))
    pool = Split(xt, yt, group, np.arange(n_tgt))
    a, b = spec.n_target, spec.n_target + spec.n_val_pool
    return TwoDomainData(spec, source, pool.subset(slice(0, a)), pool.subset(slice(a, b)), pool.subset(slice(b, None)))


def spec_to_dict(spec: SyntheticDomainSpec) -> dict:
    return asdict(spec)

"""Attribute-conditioned cycle-consistent translation at toy scale.

Generators act per pixel (a small MLP applied to every pixel value together
with the attribute code) so they stay cheap on the numpy substrate.
Discriminators score whole images, or a grid of patches when ``patch_grid``
is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .nn import MLP
from .objectives import frozen
from .tensor import Tensor


class DivergenceError(RuntimeError):
    pass


# -- attributes ------------------------------------------------------------------
class AttributeSpace:
    """Finite attribute set with one-hot codes."""

    def __init__(self, names: Sequence[str] = ("day", "night")):
        if len(set(names)) != len(names) or not names:
            raise ValueError(f"attribute names must be unique and non-empty: {names}")
        self.names = list(names)

    def __len__(self):
        return len(self.names)

    def index(self, a: str) -> int:
        try:
            return self.names.index(a)
        except ValueError:
            raise KeyError(f"unknown attribute {a!r}; known: {self.names}") from None

    def code(self, a: str) -> np.ndarray:
        c = np.zeros(len(self.names))
        c[self.index(a)] = 1.0
        return c

    def interpolate(self, a0: str, a1: str, t: float) -> np.ndarray:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"interpolation weight t={t} outside [0, 1]")
        return (1.0 - t) * self.code(a0) + t * self.code(a1)


# -- networks ---------------------------------------------------------------------
class PixelGenerator:
    """``x + g(x, code)`` with ``g`` a per-pixel MLP.

    With ``shared=False`` there is one MLP per attribute and the output is the
    code-weighted sum of their outputs; nets with zero weight are skipped, so
    a one-hot code evaluates exactly one.
    The final layer starts at zero so the generator begins as the identity.
    """

    def __init__(self, attrs: AttributeSpace, rng: np.random.Generator, hidden: int = 16, shared: bool = False, name: str = "G"):
        self.attrs = attrs
        self.shared = shared
        if shared:
            self.nets = [MLP([1 + len(attrs), hidden, hidden, 1], rng, activation="tanh", name=f"{name}.shared")]
        else:
            self.nets = [MLP([1, hidden, hidden, 1], rng, activation="tanh", name=f"{name}.{a}") for a in attrs.names]
        for net in self.nets:
            net.layers[-1].weight.data[:] = 0.0

    def __call__(self, x, code: np.ndarray) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        flat = x.reshape(-1, 1)
        code = np.asarray(code, dtype=float)
        if self.shared:
            inp = T.concat([flat, Tensor(np.broadcast_to(code, (flat.shape[0], len(code))))], axis=1)
            delta = self.nets[0](inp)
        else:
            delta = Tensor(np.zeros(flat.shape))
            for w, net in zip(code, self.nets):
                if w == 0.0:
                    continue
                term = T.scale(net(flat), w)
                delta = delta + term
        return (flat + delta).reshape(x.shape)

    @property
    def params(self) -> list[Tensor]:
        return [p for net in self.nets for p in net.params]


class ImageDiscriminator:
    """Real-valued score per image, or per cell of a ``patch_grid`` x ``patch_grid`` grid."""

    def __init__(self, size: int, rng: np.random.Generator, hidden: int = 32, patch_grid: int | None = None, name: str = "D"):
        self.size = size
        self.patch_grid = patch_grid
        if patch_grid:
            if size % patch_grid:
                raise ValueError(f"image size {size} not divisible by patch grid {patch_grid}")
            cell = size // patch_grid
            self.net = MLP([cell * cell, hidden, 1], rng, activation="relu", name=name)
        else:
            self.net = MLP([size * size, hidden, 1], rng, activation="relu", name=name)

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        b = x.shape[0]
        if not self.patch_grid:
            return self.net(x.reshape(b, -1)).reshape(b)
        g, c = self.patch_grid, self.size // self.patch_grid
        cells = T.transpose(x.reshape(b, g, c, g, c), (0, 1, 3, 2, 4)).reshape(b * g * g, c * c)
        return self.net(cells).reshape(b, g * g)

    @property
    def params(self) -> list[Tensor]:
        return self.net.params


@dataclass
class TranslationModel:
    attrs: AttributeSpace
    generator: PixelGenerator
    inverse: PixelGenerator
    discriminators: dict[str, ImageDiscriminator]

    @classmethod
    def build(cls, attrs: AttributeSpace, size: int, rng: np.random.Generator, hidden: int = 16, shared: bool = False, disc_hidden: int = 32, patch_grid: int | None = None):
        return cls(
            attrs,
            PixelGenerator(attrs, rng, hidden, shared, name="G"),
            PixelGenerator(attrs, rng, hidden, shared, name="F"),
            {a: ImageDiscriminator(size, rng, disc_hidden, patch_grid, name=f"D_{a}") for a in attrs.names},
        )

    def G(self, x, a: str) -> Tensor:
        return self.generator(x, self.attrs.code(a))

    def F(self, x, a: str) -> Tensor:
        return self.inverse(x, self.attrs.code(a))

    def D(self, a: str) -> ImageDiscriminator:
        self.attrs.index(a)
        return self.discriminators[a]

    @property
    def generator_params(self) -> list[Tensor]:
        return self.generator.params + self.inverse.params

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for p in self.generator_params:
            out[p.name] = p
        for d in self.discriminators.values():
            for p in d.params:
                out[p.name] = p
        return out


# -- losses -----------------------------------------------------------------------
class GanLosses(NamedTuple):
    disc: Tensor
    gen: Tensor


def _nonempty(*xs):
    for x in xs:
        if np.shape(x.data if isinstance(x, Tensor) else x)[0] == 0:
            raise ValueError("empty batch")


def ac_gan_losses(x_s, x_t, model: TranslationModel, a: str, form: str = "least_squares", fake=None) -> GanLosses:
    """Discriminator and generator losses (both minimised) for attribute ``a``.

    ``fake`` overrides the generated images shown to the discriminator (e.g.
    a history-buffer sample); the generator loss always uses ``G(x_s, a)``.
    """
    _nonempty(x_s, x_t)
    D = model.D(a)
    gen = model.G(x_s, a)
    fake = gen if fake is None else fake
    real_score = D(x_t)
    fake_score = D(fake)
    gen_score = D(gen) if fake is not gen else fake_score
    if form == "least_squares":
        disc = T.square(real_score - 1.0).mean() + T.square(fake_score).mean()
        g = T.square(gen_score - 1.0).mean()
    elif form == "log_likelihood":
        disc = T.scale(T.log(T.sigmoid(real_score)).mean() + T.log(1.0 - T.sigmoid(fake_score)).mean(), -1.0)
        g = T.scale(T.log(T.sigmoid(gen_score)).mean(), -1.0)
    else:
        raise ValueError(f"unknown GAN loss form {form!r}")
    return GanLosses(disc, g)


def cycle_loss(x_s, x_t, model: TranslationModel, a: str) -> Tensor:
    """Mean-L1 reconstruction through G then F on source and F then G on target."""
    _nonempty(x_s, x_t)
    xs = x_s if isinstance(x_s, Tensor) else Tensor(x_s)
    xt = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    back_s = model.F(model.G(xs, a), a)
    back_t = model.G(model.F(xt, a), a)
    if back_s.shape != xs.shape or back_t.shape != xt.shape:
        raise ValueError("reconstruction shape differs from input")
    return T.absolute(back_s - xs).mean() + T.absolute(back_t - xt).mean()


def interpolate_attribute(model: TranslationModel, x, a0: str, a1: str, t: float) -> np.ndarray:
    """Generator output for the code ``(1 - t) code(a0) + t code(a1)``."""
    code = model.attrs.interpolate(a0, a1, t)
    with frozen(model.generator_params):
        return model.generator(x, code).data


# -- history buffer ------------------------------------------------------------------
class HistoryBuffer:
    """Pool of previously generated images; full pools replace a random entry."""

    def __init__(self, capacity: int = 1000, rng: np.random.Generator | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.items: list[np.ndarray] = []

    def __len__(self):
        return len(self.items)

    def push(self, images: np.ndarray) -> None:
        for img in np.asarray(images):
            if len(self.items) < self.capacity:
                self.items.append(np.array(img, copy=True))
            else:
                self.items[int(self.rng.integers(self.capacity))] = np.array(img, copy=True)

    def sample(self, count: int) -> np.ndarray:
        if not self.items:
            raise ValueError("cannot sample from an empty buffer")
        if count > len(self.items):
            raise ValueError(f"requested {count} images but buffer holds {len(self.items)}")
        idx = self.rng.choice(len(self.items), size=count, replace=False)
        return np.stack([self.items[i] for i in idx])


def buffer_push_sample(buffer: HistoryBuffer, new_images: np.ndarray, sample_count: int) -> np.ndarray:
    if sample_count > buffer.capacity:
        raise ValueError(f"sample_count {sample_count} exceeds capacity {buffer.capacity}")
    buffer.push(new_images)
    return buffer.sample(min(sample_count, len(buffer)))


# -- toy brightness task ----------------------------------------------------------------
@dataclass
class BrightnessTask:
    """Glyph images whose target attributes are known pixelwise maps.

    ``day``: ``x + offset``; ``night``: ``x * factor``. Source pixels lie in
    ``[low, high]`` so neither map clips.
    """

    size: int = 8
    low: float = 0.05
    high: float = 0.5
    day_offset: float = 0.3
    night_factor: float = 0.5

    def glyphs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        s = self.size
        imgs = np.full((n, s, s), self.low)
        for k in range(n):
            for _ in range(int(rng.integers(1, 4))):
                if rng.random() < 0.5:
                    r = int(rng.integers(s))
                    c0, c1 = sorted(rng.integers(0, s, size=2))
                    imgs[k, r, c0 : c1 + 1] = self.high
                else:
                    c = int(rng.integers(s))
                    r0, r1 = sorted(rng.integers(0, s, size=2))
                    imgs[k, r0 : r1 + 1, c] = self.high
        # soften so pixel values spread over [low, high]
        blurred = imgs.copy()
        blurred[:, 1:-1, 1:-1] = 0.6 * imgs[:, 1:-1, 1:-1] + 0.1 * (
            imgs[:, :-2, 1:-1] + imgs[:, 2:, 1:-1] + imgs[:, 1:-1, :-2] + imgs[:, 1:-1, 2:]
        )
        return np.clip(blurred, self.low, self.high)

    def translate(self, x: np.ndarray, a: str) -> np.ndarray:
        if a == "day":
            return x + self.day_offset
        if a == "night":
            return x * self.night_factor
        raise KeyError(f"unknown attribute {a!r}")


@dataclass
class TranslationConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    cycle_weight: float = 10.0
    gan_form: str = "least_squares"
    shared: bool = False
    hidden: int = 16
    disc_hidden: int = 32
    patch_grid: int | None = None
    buffer_capacity: int = 1000
    pool_size: int = 2000
    log_every: int = 50
    seed: int = 23
    attributes: tuple = ("day", "night")
    task: BrightnessTask = field(default_factory=BrightnessTask)


@dataclass
class TranslationResult:
    model: TranslationModel
    metrics: list[dict]
    gt_l1: float
    cycle: float


def evaluate_translation(model: TranslationModel, task: BrightnessTask, x: np.ndarray) -> tuple[float, float]:
    """Mean over attributes of ground-truth L1 and of the cycle loss."""
    gts, cycles = [], []
    ps = model.generator_params
    with frozen(ps):
        for a in model.attrs.names:
            gts.append(np.abs(model.G(x, a).data - task.translate(x, a)).mean())
            cycles.append(cycle_loss(x, task.translate(x, a), model, a).item())
    return float(np.mean(gts)), float(np.mean(cycles))


def train_translation(cfg: TranslationConfig) -> TranslationResult:
    rng = np.random.default_rng(cfg.seed)
    task = cfg.task
    attrs = AttributeSpace(cfg.attributes)
    model = TranslationModel.build(attrs, task.size, rng, cfg.hidden, cfg.shared, cfg.disc_hidden, cfg.patch_grid)
    source_pool = task.glyphs(rng, cfg.pool_size)
    # target images come from independent glyphs, so the data are unpaired
    target_pool = {a: task.translate(task.glyphs(rng, cfg.pool_size), a) for a in attrs.names}
    probe = task.glyphs(np.random.default_rng(cfg.seed + 1), 256)
    buffers = {a: HistoryBuffer(cfg.buffer_capacity, np.random.default_rng(cfg.seed + 2 + i)) for i, a in enumerate(attrs.names)}
    g_opt = T.Adam(model.generator_params, cfg.lr)
    d_opt = {a: T.Adam(model.D(a).params, cfg.lr) for a in attrs.names}

    metrics: list[dict] = []
    gt0, cyc0 = evaluate_translation(model, task, probe)
    initial_gen = None
    over = 0
    for step in range(cfg.steps):
        xs = source_pool[rng.integers(0, cfg.pool_size, size=cfg.batch_size)]
        xt = {a: target_pool[a][rng.integers(0, cfg.pool_size, size=cfg.batch_size)] for a in attrs.names}
        row = {"step": step}
        # discriminator steps: generator frozen, fakes drawn through the history buffer
        for a in attrs.names:
            with frozen(model.generator_params):
                fresh = model.G(xs, a).data
                fake = buffer_push_sample(buffers[a], fresh, cfg.batch_size)
                losses = ac_gan_losses(xs, xt[a], model, a, cfg.gan_form, fake=Tensor(fake))
            d_params = model.D(a).params
            d_opt[a].step(T.grad(losses.disc, d_params))
            row[f"loss_d_{a}"] = losses.disc.item()
        # generator step: discriminators frozen
        d_all = [p for a in attrs.names for p in model.D(a).params]
        with frozen(d_all):
            gen_terms, cyc_terms = [], []
            for a in attrs.names:
                gen_terms.append(ac_gan_losses(xs, xt[a], model, a, cfg.gan_form).gen)
                cyc_terms.append(cycle_loss(xs, xt[a], model, a))
            k = 1.0 / len(attrs)
            gen_loss = T.scale(_total(gen_terms), k)
            cyc = T.scale(_total(cyc_terms), k)
            total = gen_loss + T.scale(cyc, cfg.cycle_weight)
        g_opt.step(T.grad(total, model.generator_params))
        value = total.item()
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite generator loss at step {step}")
        if initial_gen is None:
            initial_gen = max(value, 1e-8)
        over = over + 1 if value > 10 * initial_gen else 0
        if over >= 100:
            raise DivergenceError(f"generator loss above 10x its initial value ({initial_gen:.4g}) for 100 steps at step {step}: {row}")
        row["loss_g"] = gen_loss.item()
        row["cycle"] = cyc.item()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            row["gt_l1"] = evaluate_translation(model, task, probe)[0]
            metrics.append(row)
    gt, cyc_final = evaluate_translation(model, task, probe) if cfg.steps else (gt0, cyc0)
    return TranslationResult(model, metrics, gt, cyc_final)


def _total(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out

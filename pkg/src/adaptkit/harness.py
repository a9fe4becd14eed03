"""Training, evaluation and supervised model selection for the UDA objectives."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .cycle import DivergenceError
from .data import GROUPS, Split, TwoDomainData
from .objectives import DomainBatch, ObjectiveWeights, UDAModel, alternating_step, prediction_entropy

CSV_HEADER = ("step", "loss_c", "loss_d_or_aux", "loss_f", "entropy")


@dataclass
class RunConfig:
    objective: str = "dann_em"
    lam: float = 0.3
    gamma: float = 0.3
    beta: float | None = None  # None: 1/N for the augmented objectives, 1 for DANN
    lr: float = 1e-3
    batch_size: int = 64
    steps: int = 800
    pretrain_steps: int = 200
    hidden: tuple = (32, 16)
    disc_hidden: int = 32
    val_size: int = 1000
    probe_size: int = 512
    log_every: int = 25
    flip_average: bool = False  # crop/flip test averaging has no analogue on vector data
    seed: int = 0

    def validate(self):
        if self.objective not in ("source_only", "dann", "dann_ss", "dann_em"):
            raise ValueError(f"unknown objective {self.objective!r}")
        for name in ("batch_size", "val_size", "probe_size", "log_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.flip_average:
            raise ValueError("flip_average is not supported for synthetic vector data")

    def weights(self, n_classes: int) -> ObjectiveWeights:
        beta = self.beta
        if beta is None:
            beta = 1.0 / n_classes if self.objective in ("dann_ss", "dann_em") else 1.0
        lam = 0.0 if self.objective == "source_only" else self.lam
        gamma = self.gamma if self.objective == "dann_em" else 0.0
        return ObjectiveWeights(lam=lam, gamma=gamma, beta=beta)

    def label(self) -> str:
        if self.objective == "source_only":
            return "source_only"
        if self.objective == "dann_em":
            return f"dann_em(lam={self.lam:g},gamma={self.gamma:g})"
        return f"{self.objective}(lam={self.lam:g})"


@dataclass
class MetricsLog:
    """Append-only per-step record; ``step`` doubles as the monotone timestamp."""

    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, row: dict) -> None:
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("metrics steps must increase")
        self.rows.append(dict(row))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r["step"]] + [_fmt(r[k]) for k in CSV_HEADER[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary, "rows": self.rows}, sort_keys=True, indent=1)


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(len(x), -1)


def _entropies(model: UDAModel, probe: np.ndarray) -> dict:
    """Entropy of the N-way prediction (conditional for augmented heads) and of the joint scores."""
    cond = prediction_entropy(model.class_probs(probe))
    out = {"entropy": cond}
    if model.augmented:
        out["entropy_joint"] = prediction_entropy(model.joint_probs(probe))
    return out


def train_uda(cfg: RunConfig, data: TwoDomainData) -> tuple[MetricsLog, UDAModel]:
    """Source pretraining, head augmentation for the (N+1)-way objectives, then alternating updates."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = data.spec.n_classes
    xs, ys = _flatten(data.source.x), data.source.y
    xt = _flatten(data.target_train.x)
    in_dim = xs.shape[1]
    build_as = "dann" if cfg.objective == "dann" else "source_only"
    model = UDAModel.build(build_as, in_dim, n, cfg.hidden, rng, lr=cfg.lr, disc_hidden=cfg.disc_hidden)
    weights = cfg.weights(n)
    probe_idx = rng.choice(len(xt), size=min(cfg.probe_size, len(xt)), replace=False)
    probe = xt[probe_idx]

    def batch() -> DomainBatch:
        si = rng.integers(0, len(xs), size=cfg.batch_size)
        ti = rng.integers(0, len(xt), size=cfg.batch_size)
        return DomainBatch(xs[si], ys[si], xt[ti])

    log = MetricsLog()
    pre_weights = ObjectiveWeights(lam=0.0, gamma=0.0, beta=1.0)
    saved_objective = model.objective
    model.objective = "source_only"
    for _ in range(cfg.pretrain_steps):
        b = batch()
        alternating_step(model, b, pre_weights, "classifier")
        alternating_step(model, b, pre_weights, "feature")
    model.objective = saved_objective
    if cfg.objective in ("dann_ss", "dann_em"):
        model.augment()
        model.objective = cfg.objective
    else:
        model.reset_optimizers()

    initial = None
    over = 0
    for step in range(cfg.steps):
        b = batch()
        try:
            head = alternating_step(model, b, weights, "classifier")
            feat = alternating_step(model, b, weights, "feature")
        except T.NonFiniteError as exc:
            raise DivergenceError(f"step {step}: {exc}") from None
        magnitude = abs(feat["loss_f"])
        if initial is None:
            initial = max(magnitude, 1e-8)
        over = over + 1 if magnitude > 10 * initial else 0
        if over >= 100:
            raise DivergenceError(f"feature objective above 10x its initial magnitude for 100 steps (step {step})")
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            row = {"step": step, "loss_c": head["loss_c"], "loss_d_or_aux": head["aux"], "loss_f": feat["loss_f"]}
            row.update(_entropies(model, probe))
            log.append(row)
    log.summary = {"config": asdict(cfg), "final": _entropies(model, probe)}
    return log, model


@dataclass
class EvalResult:
    accuracy: float
    per_group: dict
    counts: dict
    top_k: dict = field(default_factory=dict)


def evaluate(model: UDAModel, split: Split, ks: Sequence[int] = (5,)) -> EvalResult:
    """Top-1 accuracy overall and per subgroup; top-k for every k < N.

    Augmented heads are scored on their N real classes only.
    """
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    probs = model.class_probs(_flatten(split.x))
    pred = probs.argmax(axis=1)
    correct = pred == split.y
    per_group, counts = {}, {}
    for g in np.unique(split.group):
        mask = split.group == g
        name = GROUPS[g] if g < len(GROUPS) else str(g)
        per_group[name] = float(correct[mask].mean())
        counts[name] = int(mask.sum())
    top_k = {}
    for k in ks:
        if k < probs.shape[1]:
            topk = np.argsort(-probs, axis=1)[:, :k]
            top_k[k] = float((topk == split.y[:, None]).any(axis=1).mean())
    return EvalResult(float(correct.mean()), per_group, counts, top_k)


def draw_validation(data: TwoDomainData, size: int, seed: int) -> Split:
    if size > len(data.val_pool):
        raise ValueError(f"validation size {size} exceeds the labelled pool of {len(data.val_pool)}")
    idx = np.random.default_rng([seed, 7919]).choice(len(data.val_pool), size=size, replace=False)
    val = data.val_pool.subset(np.sort(idx))
    overlap = np.intersect1d(val.index, data.test.index)
    if overlap.size:
        raise AssertionError(f"validation and test share {overlap.size} examples")
    return val


@dataclass
class ConfigScore:
    config: RunConfig
    val: list[float]
    test: list[float]
    entropy: list[float]
    per_group: list[dict]

    @property
    def mean_val(self) -> float:
        return float(np.mean(self.val))

    @property
    def mean_test(self) -> float:
        return float(np.mean(self.test))

    @property
    def stderr_test(self) -> float:
        return standard_error(self.test)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "label": self.config.label(),
            "val": self.val,
            "test": self.test,
            "entropy": self.entropy,
            "per_group": self.per_group,
            "mean_val": self.mean_val,
            "mean_test": self.mean_test,
            "stderr_test": self.stderr_test,
            "mean_entropy": float(np.mean(self.entropy)),
        }


@dataclass
class Selection:
    best: ConfigScore
    scores: list[ConfigScore]

    def to_dict(self) -> dict:
        return {"best": self.best.to_dict(), "scores": [s.to_dict() for s in self.scores]}


def standard_error(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return 0.0
    return float(v.std(ddof=1) / math.sqrt(len(v)))


def score_config(cfg: RunConfig, data: TwoDomainData, seeds: Sequence[int]) -> ConfigScore:
    val, test, ent, groups = [], [], [], []
    for s in seeds:
        run = replace(cfg, seed=int(s))
        log, model = train_uda(run, data)
        v = draw_validation(data, run.val_size, run.seed)
        val.append(evaluate(model, v).accuracy)
        res = evaluate(model, data.test)
        test.append(res.accuracy)
        groups.append(res.per_group)
        ent.append(log.summary["final"]["entropy"])
    return ConfigScore(cfg, val, test, ent, groups)


def select_model(grid: Sequence[RunConfig], data: TwoDomainData, seeds: Sequence[int]) -> Selection:
    """Train every grid point over ``seeds``; keep the one with the best mean validation accuracy.

    Ties go to the earlier grid entry.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    scores = [score_config(cfg, data, seeds) for cfg in grid]
    best = max(scores, key=lambda s: s.mean_val)
    return Selection(best, scores)

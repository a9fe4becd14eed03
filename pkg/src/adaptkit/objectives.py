"""Domain-adversarial objectives: DANN, the (N+1)-way reparameterisation
(DANN-SS) and its entropy-regularised variant (DANN-EM).

Sign convention: every loss builder returns the quantity that is *maximised*
(an expected log-likelihood, so values are <= 0). Training minimises the
negation. Class labels are 0-based; in an augmented score vector of length
``N + 1`` the last entry (index ``N``) is the target-domain class.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .nn import MLP, Linear
from .tensor import Tensor

OBJECTIVES = ("source_only", "dann", "dann_ss", "dann_em")
SIMPLEX_TOL = 1e-9
DEGENERATE_TOL = 1e-12


@dataclass
class DomainBatch:
    """Labelled source inputs and unlabelled target inputs."""

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray

    def __post_init__(self):
        self.source_y = np.asarray(self.source_y, dtype=np.int64)
        if len(self.source_x) != len(self.source_y):
            raise ValueError(f"{len(self.source_x)} source examples but {len(self.source_y)} labels")
        if np.any(self.source_y < 0):
            raise ValueError("labels must be non-negative class indices")

    def require_both_sides(self):
        if len(self.source_x) == 0 or len(self.target_x) == 0:
            raise ValueError("adversarial losses need non-empty source and target batches")


@dataclass
class ObjectiveWeights:
    lam: float = 1.0
    gamma: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("lam", "gamma", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def tau(self) -> float:
        return self.lam * self.gamma


class DannLosses(NamedTuple):
    loss_c: Tensor
    loss_d: Tensor
    loss_f: Tensor


class DannSSLosses(NamedTuple):
    loss_c: Tensor
    loss_f: Tensor


# -- validation helpers ---------------------------------------------------------
def check_simplex(probs: np.ndarray, what: str = "scores") -> None:
    probs = np.asarray(probs)
    if np.any(probs < 0):
        raise ValueError(f"{what}: negative probability")
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        raise ValueError(f"{what}: rows do not sum to 1 (max deviation {np.abs(sums - 1).max():.3g})")


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and labels.max() >= n_classes:
        raise ValueError(f"label {labels.max()} out of range for {n_classes} classes")


def _gather(probs: Tensor, labels: np.ndarray) -> Tensor:
    return probs[np.arange(len(labels)), labels]


def _nonempty(*tensors: Tensor) -> None:
    for t in tensors:
        if t.shape[0] == 0:
            raise ValueError("adversarial losses need non-empty source and target batches")


# -- DANN -------------------------------------------------------------------------
def dann_losses(
    class_probs_s: Tensor,
    labels: np.ndarray,
    disc_s: Tensor,
    disc_t: Tensor,
    lam: float,
    beta: float = 1.0,
) -> DannLosses:
    """Classifier, discriminator and feature objectives of standard DANN.

    ``disc_*`` are probabilities that an example comes from the target
    domain. ``beta`` weights the target term of the discriminator objective
    (1 gives the plain form).
    """
    labels = np.asarray(labels, dtype=np.int64)
    _nonempty(class_probs_s, disc_s, disc_t)
    _check_labels(labels, class_probs_s.shape[-1])
    for d in (disc_s, disc_t):
        if np.any(d.data < 0) or np.any(d.data > 1):
            raise ValueError("discriminator output outside [0, 1]")
    loss_c = T.log(_gather(class_probs_s, labels)).mean()
    loss_d = T.log(1.0 - disc_s).mean() + T.scale(T.log(disc_t).mean(), beta)
    loss_f = loss_c + T.scale(T.log(1.0 - disc_t).mean(), lam)
    return DannLosses(loss_c, loss_d, loss_f)


# -- DANN-SS ------------------------------------------------------------------------
def conditional_class_score(aug_probs):
    """Scores restricted to the real classes: ``C(y) / (1 - C(N+1))``.

    Accepts a Tensor or array of shape (..., N+1); returns the same kind
    with shape (..., N).
    """
    is_tensor = isinstance(aug_probs, Tensor)
    data = aug_probs.data if is_tensor else np.asarray(aug_probs, dtype=float)
    n = data.shape[-1] - 1
    if n < 1:
        raise ValueError("augmented scores need at least one real class")
    if np.any(data[..., n] >= 1.0 - DEGENERATE_TOL):
        raise ValueError("degenerate denominator: target-class score is 1")
    # the denominator is the real-class mass rather than 1 - C(N+1), which
    # loses precision when the target-class score is close to 1
    if not is_tensor:
        return data[..., :n] / data[..., :n].sum(axis=-1, keepdims=True)
    return aug_probs[..., :n] / aug_probs[..., :n].sum(axis=-1, keepdims=True)


def _log_not_target(aug_probs: Tensor) -> Tensor:
    # log(1 - C(N+1)), written as the mass on the real classes
    n = aug_probs.shape[-1] - 1
    return T.log(aug_probs[:, :n].sum(axis=1))


def _log_conditional_of_label(aug_probs: Tensor, labels: np.ndarray) -> Tensor:
    # log of the ratio, so the log clamp only bites when the conditional score itself is tiny
    n = aug_probs.shape[-1] - 1
    return T.log(_gather(aug_probs, labels) / aug_probs[:, :n].sum(axis=1))


def dann_ss_losses(
    aug_probs_s: Tensor,
    labels: np.ndarray,
    aug_probs_t: Tensor,
    lam: float,
    beta: float = 1.0,
) -> DannSSLosses:
    """Classifier and feature objectives with an (N+1)-way shared classifier."""
    labels = np.asarray(labels, dtype=np.int64)
    _nonempty(aug_probs_s, aug_probs_t)
    n = aug_probs_s.shape[-1] - 1
    _check_labels(labels, n)
    loss_c = T.log(_gather(aug_probs_s, labels)).mean() + T.scale(T.log(aug_probs_t[:, n]).mean(), beta)
    loss_f = _log_conditional_of_label(aug_probs_s, labels).mean() + T.scale(
        _log_not_target(aug_probs_t).mean(), lam
    )
    return DannSSLosses(loss_c, loss_f)


# -- DANN-EM ------------------------------------------------------------------------
def _target_feature_term(aug_probs_t: Tensor, gamma: float) -> Tensor:
    """Per-example ``gamma * sum_i C(i) log C(i) + log(1 - C(N+1))``."""
    n = aug_probs_t.shape[-1] - 1
    log_not_target = _log_not_target(aug_probs_t)
    joint = aug_probs_t[:, :n]
    neg_entropy = (joint * T.log(joint)).sum(axis=1)
    return T.scale(neg_entropy, gamma) + log_not_target


def dann_em_feature_loss(
    aug_probs_s: Tensor,
    labels: np.ndarray,
    aug_probs_t: Tensor,
    lam: float,
    gamma: float,
) -> Tensor:
    """Feature objective with entropy regularisation on the target side.

    The entropy term uses the joint scores ``C(i)``, i <= N, not the
    conditional ones. ``gamma == 0`` reproduces the DANN-SS feature objective.
    """
    labels = np.asarray(labels, dtype=np.int64)
    _nonempty(aug_probs_s, aug_probs_t)
    _check_labels(labels, aug_probs_s.shape[-1] - 1)
    source_term = _log_conditional_of_label(aug_probs_s, labels).mean()
    return source_term + T.scale(_target_feature_term(aug_probs_t, gamma).mean(), lam)


# -- monitoring ------------------------------------------------------------------------
def prediction_entropy(probs) -> float:
    """Mean over rows of ``-sum p log p`` with ``0 log 0 = 0``."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=float)
    if np.any(p < 0):
        raise ValueError("negative probability")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(-terms.sum(axis=-1).mean())


# -- classifier augmentation --------------------------------------------------------------
def augment_classifier_column(weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Append a target-class column equal to the mean of the existing columns."""
    weight = np.asarray(weight, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if weight.ndim != 2 or weight.size == 0:
        raise ValueError(f"weight must be a non-empty d x N matrix, got shape {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[1]} columns")
    new_w = np.concatenate([weight, weight.mean(axis=1, keepdims=True)], axis=1)
    new_b = np.concatenate([bias, [bias.mean()]])
    return new_w, new_b


# -- models and the alternating update -------------------------------------------------------
@dataclass
class UDAModel:
    """Feature extractor, classifier head and (for DANN) a discriminator.

    For ``dann_ss``/``dann_em`` the classifier has N+1 outputs.
    """

    objective: str
    n_classes: int
    feature: MLP
    classifier: Linear
    discriminator: MLP | None = None
    lr: float = 1e-3
    optim: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        self.reset_optimizers()

    @classmethod
    def build(cls, objective: str, in_dim: int, n_classes: int, hidden: Sequence[int], rng, lr: float = 1e-3, disc_hidden: int = 32):
        feature = MLP([in_dim, *hidden], rng, activation="relu", final_activation="relu", name="feature")
        out = n_classes + 1 if objective in ("dann_ss", "dann_em") else n_classes
        classifier = Linear(hidden[-1], out, rng, name="classifier")
        disc = MLP([hidden[-1], disc_hidden, 1], rng, activation="relu", name="disc") if objective == "dann" else None
        return cls(objective, n_classes, feature, classifier, disc, lr)

    @property
    def augmented(self) -> bool:
        return self.objective in ("dann_ss", "dann_em")

    @property
    def feature_params(self) -> list[Tensor]:
        return self.feature.params

    @property
    def head_params(self) -> list[Tensor]:
        ps = list(self.classifier.params)
        if self.discriminator is not None:
            ps += self.discriminator.params
        return ps

    @property
    def params(self) -> list[Tensor]:
        return self.feature_params + self.head_params

    def reset_optimizers(self):
        self.optim = {"head": T.Adam(self.head_params, self.lr), "feature": T.Adam(self.feature_params, self.lr)}

    def augment(self):
        """Switch an N-way classifier to N+1 outputs (see ``augment_classifier_column``)."""
        w, b = augment_classifier_column(self.classifier.weight.data, self.classifier.bias.data)
        self.classifier.weight.data = w
        self.classifier.bias.data = b
        self.reset_optimizers()

    def logits(self, x) -> Tensor:
        return self.classifier(self.feature(_wrap_input(x)))

    def class_probs(self, x) -> np.ndarray:
        """N-way class probabilities (conditional scores for augmented heads)."""
        with frozen(self.params):
            logits = self.logits(x).data
        if logits.shape[1] > self.n_classes:
            logits = logits[:, : self.n_classes]
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def joint_probs(self, x) -> np.ndarray:
        with frozen(self.params):
            return T.softmax(self.logits(x)).data


def _wrap_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@contextlib.contextmanager
def frozen(params: Sequence[Tensor]):
    """Temporarily mark ``params`` as constants so no graph is recorded for them."""
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def objective_values(model: UDAModel, batch: DomainBatch, weights: ObjectiveWeights, feats_s: Tensor, feats_t: Tensor | None) -> dict:
    """Objectives for the model's formulation, keyed ``head``, ``loss_c``, ``aux``, ``loss_f``.

    ``head`` is what the classifier/discriminator step maximises. ``aux`` is
    the discriminator objective for DANN and the target-class term
    ``E_T log C(N+1)`` for the augmented objectives; None for source-only.
    """
    y = batch.source_y
    if model.objective == "source_only":
        loss_c = T.log(_gather(T.softmax(model.classifier(feats_s)), y)).mean()
        return {"head": loss_c, "loss_c": loss_c, "aux": None, "loss_f": loss_c}
    if model.objective == "dann":
        d_s = T.sigmoid(model.discriminator(feats_s)).reshape(-1)
        d_t = T.sigmoid(model.discriminator(feats_t)).reshape(-1)
        probs = T.softmax(model.classifier(feats_s))
        out = dann_losses(probs, y, d_s, d_t, weights.lam, weights.beta)
        return {"head": out.loss_c + out.loss_d, "loss_c": out.loss_c, "aux": out.loss_d, "loss_f": out.loss_f}
    p_s = T.softmax(model.classifier(feats_s))
    p_t = T.softmax(model.classifier(feats_t))
    ss = dann_ss_losses(p_s, y, p_t, weights.lam, weights.beta)
    aux = T.log(p_t[:, model.n_classes]).mean()
    if model.objective == "dann_ss":
        loss_f = ss.loss_f
    else:
        loss_f = dann_em_feature_loss(p_s, y, p_t, weights.lam, weights.gamma)
    return {"head": ss.loss_c, "loss_c": ss.loss_c, "aux": aux, "loss_f": loss_f}


def alternating_step(model: UDAModel, batch: DomainBatch, weights: ObjectiveWeights, mode: str) -> dict:
    """One Adam step on either the heads or the feature extractor.

    ``mode="classifier"`` updates the classifier (and discriminator) with the
    feature extractor held fixed; ``mode="feature"`` updates the feature
    extractor with the heads held fixed. Returns the objective values.
    """
    if mode not in ("classifier", "feature"):
        raise ValueError(f"mode must be 'classifier' or 'feature', got {mode!r}")
    if model.objective != "source_only":
        batch.require_both_sides()
    xs, xt = Tensor(batch.source_x), Tensor(batch.target_x)
    if mode == "classifier":
        with frozen(model.feature_params):
            fs, ft = model.feature(xs), model.feature(xt)
        values = objective_values(model, batch, weights, fs, ft)
        params, target, opt = model.head_params, values["head"], model.optim["head"]
    else:
        with frozen(model.head_params):
            fs = model.feature(xs)
            ft = model.feature(xt) if model.objective != "source_only" else None
            values = objective_values(model, batch, weights, fs, ft)
        params, target, opt = model.feature_params, values["loss_f"], model.optim["feature"]
    grads = T.grad(T.scale(target, -1.0), params)
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise T.NonFiniteError(f"non-finite gradient for {p.name} in {mode} step; step aborted")
    opt.step(grads)
    for p in params:
        p.zero_grad()
    return {k: float("nan") if v is None else v.item() for k, v in values.items() if k != "head"}

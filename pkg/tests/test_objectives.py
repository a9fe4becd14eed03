import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptkit import tensor as T
from adaptkit.landscape import random_simplex
from adaptkit.objectives import (
    DomainBatch,
    ObjectiveWeights,
    UDAModel,
    alternating_step,
    augment_classifier_column,
    conditional_class_score,
    dann_em_feature_loss,
    dann_losses,
    dann_ss_losses,
    prediction_entropy,
)
from adaptkit.tensor import Tensor

# frozen outputs of an independent scalar oracle (pure-python sums over the batch)
DANN_SEED7 = (-0.9497981540680553, -1.3654548721573745, -1.3981720399087008)
SS_SEED11 = (-2.3459800580839003, -1.914537035183724)
EM_SEED13 = -1.5552677149651997


def _aug_batch(seed):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(4), 8), rng.integers(0, 3, 8), rng.dirichlet(np.ones(4), 8)


def _induced_dann(ps, y, pt, lam):
    # D := target-class score, C := conditional scores over the real classes
    n = ps.shape[1] - 1
    cond = Tensor(conditional_class_score(ps))
    return dann_losses(cond, y, Tensor(ps[:, n]), Tensor(pt[:, n]), lam)


# -- DANN --------------------------------------------------------------------------------
def test_dann_half_confident_classifier():
    probs = Tensor(np.full((4, 2), 0.5))
    out = dann_losses(probs, [0, 1, 1, 0], Tensor(np.full(4, 0.3)), Tensor(np.full(4, 0.3)), 1.0)
    assert out.loss_c.item() == pytest.approx(math.log(0.5))


def test_dann_confused_discriminator():
    half = Tensor(np.full(5, 0.5))
    out = dann_losses(Tensor(np.full((5, 2), 0.5)), [0] * 5, half, half, 1.0)
    assert out.loss_d.item() == pytest.approx(2 * math.log(0.5))
    assert out.loss_d.item() == pytest.approx(-1.38629, abs=1e-5)


def test_dann_seed7_oracle():
    rng = np.random.default_rng(7)
    p, y = rng.dirichlet(np.ones(3), 8), rng.integers(0, 3, 8)
    ds, dt = rng.uniform(0.05, 0.95, 8), rng.uniform(0.05, 0.95, 8)
    out = dann_losses(Tensor(p), y, Tensor(ds), Tensor(dt), lam=0.5)
    np.testing.assert_allclose([out.loss_c.item(), out.loss_d.item(), out.loss_f.item()], DANN_SEED7, rtol=0, atol=1e-12)


def test_dann_rejects_bad_inputs():
    good = Tensor(np.full(2, 0.5))
    with pytest.raises(ValueError, match="outside"):
        dann_losses(Tensor(np.full((2, 2), 0.5)), [0, 1], Tensor([1.2, 0.5]), good, 1.0)
    with pytest.raises(ValueError, match="non-empty"):
        dann_losses(Tensor(np.zeros((0, 2))), [], good, good, 1.0)
    with pytest.raises(ValueError, match="out of range"):
        dann_losses(Tensor(np.full((2, 2), 0.5)), [0, 2], good, good, 1.0)


# -- conditional scores ---------------------------------------------------------------
def test_conditional_hand_case():
    np.testing.assert_allclose(conditional_class_score(np.array([0.2, 0.3, 0.5])), [0.4, 0.6])


def test_conditional_with_empty_target_class():
    s = np.array([0.1, 0.6, 0.3, 0.0])
    np.testing.assert_array_equal(conditional_class_score(s), s[:3])


def test_conditional_random_point_renormalises():
    s = random_simplex(np.random.default_rng(4), 1, 6)[0]
    oracle = [v / sum(s[:5]) for v in s[:5]]
    np.testing.assert_allclose(conditional_class_score(s), oracle, rtol=1e-13)


def test_conditional_degenerate_raises():
    with pytest.raises(ValueError):
        conditional_class_score(np.array([0.0, 0.0, 1.0]))


# -- DANN-SS and equivalence -------------------------------------------------------------
def test_ss_uniform_scores():
    u = Tensor(np.full((3, 4), 0.25))
    lam = 0.7
    out = dann_ss_losses(u, [0, 1, 2], u, lam)
    assert out.loss_f.item() == pytest.approx(math.log(0.25 / 0.75) + lam * math.log(0.75))


def test_ss_seed11_oracle():
    ps, y, pt = _aug_batch(11)
    out = dann_ss_losses(Tensor(ps), y, Tensor(pt), lam=1.0, beta=0.25)
    np.testing.assert_allclose([out.loss_c.item(), out.loss_f.item()], SS_SEED11, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0.0, 3.0))
def test_ss_matches_dann_under_induced_heads(seed, n, lam):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 10))
    ps = random_simplex(rng, m, n + 1)
    pt = random_simplex(rng, m, n + 1)
    y = rng.integers(0, n, m)
    ss = dann_ss_losses(Tensor(ps), y, Tensor(pt), lam, beta=1.0)
    d = _induced_dann(ps, y, pt, lam)
    assert abs(ss.loss_c.item() - (d.loss_c.item() + d.loss_d.item())) < 1e-9
    assert abs(ss.loss_f.item() - d.loss_f.item()) < 1e-9


# -- DANN-EM --------------------------------------------------------------------------------
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_em_without_entropy_is_ss(seed, lam):
    ps, y, pt = _aug_batch(seed % 10_000)
    em = dann_em_feature_loss(Tensor(ps), y, Tensor(pt), lam, gamma=0.0)
    ss = dann_ss_losses(Tensor(ps), y, Tensor(pt), lam)
    assert em.item() == ss.loss_f.item()


def test_em_one_hot_target_term_is_zero():
    src = Tensor(np.array([[0.7, 0.2, 0.05, 0.05]]))
    onehot = Tensor(np.array([[1.0, 0.0, 0.0, 0.0]]))
    base = dann_em_feature_loss(src, [0], onehot, lam=0.0, gamma=0.5).item()
    assert dann_em_feature_loss(src, [0], onehot, lam=2.0, gamma=0.5).item() == pytest.approx(base, abs=1e-15)


def test_em_seed13_oracle():
    ps, y, pt = _aug_batch(13)
    out = dann_em_feature_loss(Tensor(ps), y, Tensor(pt), lam=0.3, gamma=0.1)
    assert out.item() == pytest.approx(EM_SEED13, abs=1e-12)


def test_em_feature_loss_gradcheck_eight_examples():
    rng = np.random.default_rng(8)
    y = rng.integers(0, 3, 8)

    def f(logits):
        p = T.softmax(logits)
        return dann_em_feature_loss(p[:8], y, p[8:], lam=0.5, gamma=0.3)

    assert T.grad_check(f, rng.normal(size=(16, 4))).max_rel_error < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feature_losses_gradcheck_random_points(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, 4)
    x = rng.normal(size=(8, 4))
    x[:, 3] -= 2.0  # keeps the target-class score well below 0.99
    fns = [
        lambda t: dann_ss_losses(T.softmax(t[:4]), y, T.softmax(t[4:]), 0.8).loss_f,
        lambda t: dann_em_feature_loss(T.softmax(t[:4]), y, T.softmax(t[4:]), 0.8, 0.5),
        lambda t: dann_losses(T.softmax(t[:4, :3]), y, T.sigmoid(t[:4, 3]), T.sigmoid(t[4:, 3]), 0.8).loss_f,
    ]
    for f in fns:
        assert T.grad_check(f, x).max_rel_error < 1e-4


# -- entropy --------------------------------------------------------------------------------
def test_entropy_hand_values():
    assert prediction_entropy(np.eye(3)) == 0.0
    assert prediction_entropy(np.full((2, 5), 0.2)) == pytest.approx(math.log(5))
    assert prediction_entropy(np.array([[0.5, 0.25, 0.25]])) == pytest.approx(1.5 * math.log(2))
    assert prediction_entropy(np.array([[0.5, 0.25, 0.25]])) == pytest.approx(1.03972, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_entropy_bounds(seed, n):
    p = random_simplex(np.random.default_rng(seed), 5, n)
    h = prediction_entropy(p)
    assert 0.0 <= h <= math.log(n) + 1e-12


# -- classifier augmentation -----------------------------------------------------------------
def test_augment_identical_columns():
    w = np.tile(np.array([[1.0], [2.0]]), (1, 3))
    nw, nb = augment_classifier_column(w, np.full(3, 0.5))
    np.testing.assert_array_equal(nw[:, 3], w[:, 0])
    assert nb[3] == 0.5


def test_augment_two_column_mean():
    nw, _ = augment_classifier_column(np.array([[1.0, 3.0], [3.0, 5.0]]), np.zeros(2))
    np.testing.assert_array_equal(nw[:, 2], [2.0, 4.0])


def test_augment_large_matrix_mean():
    w = np.random.default_rng(0).normal(size=(512, 431))
    nw, nb = augment_classifier_column(w, np.zeros(431))
    assert nw.shape == (512, 432) and nb.shape == (432,)
    np.testing.assert_allclose(nw[:, 431], w.sum(axis=1) / 431, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_augment_keeps_real_class_logits(seed):
    rng = np.random.default_rng(seed)
    w, b, f = rng.normal(size=(5, 3)), rng.normal(size=3), rng.normal(size=(4, 5))
    nw, nb = augment_classifier_column(w, b)
    np.testing.assert_array_equal((f @ nw + nb)[:, :3], f @ w + b)


# -- alternating updates ------------------------------------------------------------------
def _model_and_batch(objective, seed=5):
    rng = np.random.default_rng(seed)
    model = UDAModel.build(objective, 4, 3, [6], rng, lr=1e-2)
    batch = DomainBatch(rng.normal(size=(8, 4)), rng.integers(0, 3, 8), rng.normal(size=(8, 4)) + 1)
    return model, batch


def test_classifier_step_leaves_features_untouched():
    model, batch = _model_and_batch("dann_ss")
    before = [p.data.copy() for p in model.feature_params]
    alternating_step(model, batch, ObjectiveWeights(lam=1.0), "classifier")
    for a, p in zip(before, model.feature_params):
        assert a.tobytes() == p.data.tobytes()


def test_feature_step_without_adversary_is_source_training():
    dann, batch = _model_and_batch("dann")
    plain, _ = _model_and_batch("source_only")
    for p, q in zip(dann.feature_params, plain.feature_params):
        assert p.data.tobytes() == q.data.tobytes()
    alternating_step(dann, batch, ObjectiveWeights(lam=0.0), "feature")
    alternating_step(plain, batch, ObjectiveWeights(lam=0.0), "feature")
    for p, q in zip(dann.feature_params, plain.feature_params):
        assert p.data.tobytes() == q.data.tobytes()


def test_two_alternating_rounds_golden_trace():
    model, batch = _model_and_batch("dann_em")
    w = ObjectiveWeights(lam=0.5, gamma=0.2, beta=1 / 3)
    trace = [alternating_step(model, batch, w, mode) for mode in ("classifier", "feature") * 2]
    golden = [
        (-2.829533814007158, -1.266624761770045, -2.550495001497279),
        (-2.765718095573505, -1.2477949594867805, -2.496132987634186),
        (-2.7184129434778934, -1.2473103864758874, -2.4472968380355837),
        (-2.658098689708172, -1.2289953899178239, -2.3963102931928075),
    ]
    for row, gold in zip(trace, golden):
        np.testing.assert_allclose([row["loss_c"], row["aux"], row["loss_f"]], gold, rtol=0, atol=1e-10)


def test_step_requires_target_examples():
    model, batch = _model_and_batch("dann")
    batch.target_x = np.zeros((0, 4))
    with pytest.raises(ValueError):
        alternating_step(model, batch, ObjectiveWeights(), "feature")
    with pytest.raises(ValueError, match="mode"):
        alternating_step(model, batch, ObjectiveWeights(), "both")


def test_weights_validation_and_tau():
    assert ObjectiveWeights(lam=0.5, gamma=0.4).tau == pytest.approx(0.2)
    with pytest.raises(ValueError):
        ObjectiveWeights(lam=-1.0)

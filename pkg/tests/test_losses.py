import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikefuse import tensor as tf
from spikefuse.losses import (SaoConfig, cross_entropy, sao_features, sao_loss, total_loss)
from spikefuse.optim import Adam
from spikefuse.tensor import ShapeError, Tensor


def sao_oracle(fa, fv, tau):
    """Direct transcription: mean over i and t of -log softmax_j(fa_ti . fv_tj / tau)[i]."""
    T, B, _ = fa.shape
    total = 0.0
    for t in range(T):
        for i in range(B):
            sims = [float(fa[t, i] @ fv[t, j]) / tau for j in range(B)]
            total += -(sims[i] - math.log(sum(math.exp(s) for s in sims)))
    return total / (T * B)


def unit(rng, shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# -- cross entropy -------------------------------------------------------------

def test_ce_uniform_logits(f64):
    assert cross_entropy(Tensor(np.zeros((3, 6))), [0, 3, 5]).item() == pytest.approx(math.log(6), abs=1e-12)


def test_ce_hand_value(f64):
    want = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    got = cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [2]).item()
    assert got == pytest.approx(want, abs=1e-12) and got == pytest.approx(0.40761, abs=1e-5)


def test_ce_large_margin(f64):
    assert cross_entropy(Tensor([[1e4, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)


def test_ce_label_range():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0])


# -- features ------------------------------------------------------------------

def test_features_unit_vector_unchanged(f64):
    res = np.zeros((1, 1, 2, 3))
    res[..., 0] = 1.0
    assert np.allclose(sao_features(Tensor(res)).data, [[[1.0, 0.0, 0.0]]])


def test_features_rescaled_to_unit(f64):
    res = np.full((1, 1, 1, 4), 5.0)
    assert np.allclose(sao_features(Tensor(res)).data, 0.5)


def test_features_zero_passthrough(f64):
    assert np.all(sao_features(Tensor(np.zeros((2, 3, 4, 5)))).data == 0)


# -- SAO -----------------------------------------------------------------------

@pytest.mark.parametrize("B,tau", [(2, 0.1), (5, 1.0), (8, 0.07)])
def test_sao_identical_features_give_log_b(f64, B, tau):
    v = np.zeros((3, B, 4))
    v[..., 1] = 1.0
    assert abs(sao_loss(Tensor(v), Tensor(v), SaoConfig(tau)).item() - math.log(B)) < 1e-9


def test_sao_orthonormal_pair(f64):
    e = np.eye(2)[None]
    got = sao_loss(Tensor(e), Tensor(e), SaoConfig(1.0)).item()
    assert got == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert got == pytest.approx(0.3133, abs=1e-4)


def test_sao_hard_assignment_limit(f64):
    fa = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    fv = fa.copy()
    fa_neg = np.array([[[1.0, 0.0], [-1.0, 0.0]]])  # matched 1, mismatched -1
    assert sao_loss(Tensor(fa_neg), Tensor(fa_neg), SaoConfig(1e-3)).item() < 1e-12
    assert sao_loss(Tensor(fa), Tensor(fv), SaoConfig(1e-3)).item() < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_sao_matches_oracle(f64, seed):
    rng = np.random.default_rng(seed)
    fa, fv = unit(rng, (3, 4, 5)), unit(rng, (3, 4, 5))
    assert sao_loss(Tensor(fa), Tensor(fv), SaoConfig(0.1)).item() == pytest.approx(sao_oracle(fa, fv, 0.1), abs=1e-10)


def test_sao_symmetric_averages_directions(f64):
    rng = np.random.default_rng(4)
    fa, fv = unit(rng, (2, 3, 4)), unit(rng, (2, 3, 4))
    got = sao_loss(Tensor(fa), Tensor(fv), SaoConfig(0.5, symmetric=True)).item()
    assert got == pytest.approx(0.5 * (sao_oracle(fa, fv, 0.5) + sao_oracle(fv, fa, 0.5)), abs=1e-10)


def test_sao_gradient_matches_finite_differences(f64):
    rng = np.random.default_rng(8)
    fa, fv = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    a = Tensor(fa, requires_grad=True)
    sao_loss(tf.l2_normalize(a, -1), Tensor(fv)).backward()

    def f(x):
        n = x / np.linalg.norm(x, axis=-1, keepdims=True)
        return sao_oracle(n, fv, 0.1)

    num = np.zeros_like(fa)
    for idx in np.ndindex(fa.shape):
        d = np.zeros_like(fa)
        d[idx] = 1e-6
        num[idx] = (f(fa + d) - f(fa - d)) / 2e-6
    assert np.allclose(a.grad, num, atol=1e-7)


def test_sao_batch_of_one_warns(f64):
    with pytest.warns(UserWarning):
        val = sao_loss(Tensor(np.ones((1, 1, 3))), Tensor(np.ones((1, 1, 3)))).item()
    assert val == 0.0


def test_sao_shape_mismatch():
    with pytest.raises(ShapeError):
        sao_loss(Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 3, 3))))


@settings(max_examples=40)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_sao_nonnegative_and_permutation_invariant(B, T, seed, tau):
    rng = np.random.default_rng(seed)
    fa, fv = unit(rng, (T, B, 3)), unit(rng, (T, B, 3))
    perm = rng.permutation(B)
    with tf.default_dtype(np.float64):
        base = sao_loss(Tensor(fa), Tensor(fv), SaoConfig(tau)).item()
        shuffled = sao_loss(Tensor(fa[:, perm]), Tensor(fv[:, perm]), SaoConfig(tau)).item()
    assert base >= 0
    assert shuffled == pytest.approx(base, abs=1e-10)


def test_sao_descends_below_log_b(f64):
    rng = np.random.default_rng(0)
    B = 8
    fa = Tensor(rng.normal(size=(2, B, 6)) * 0.01, requires_grad=True)
    fv = Tensor(rng.normal(size=(2, B, 6)) * 0.01, requires_grad=True)
    opt = Adam([fa, fv], lr=0.05)
    losses = []
    for _ in range(50):
        opt.zero_grad()
        loss = sao_loss(tf.l2_normalize(fa, -1), tf.l2_normalize(fv, -1))
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < math.log(B)
    assert losses[-1] < losses[0]


# -- total ---------------------------------------------------------------------

def test_total_is_ce_when_sao_disabled(rng, f64):
    logits = Tensor(rng.normal(size=(4, 3)))
    res = Tensor(rng.normal(size=(2, 4, 5, 6)))
    out = total_loss(logits, [0, 1, 2, 0], res, res, SaoConfig(enabled=False))
    assert out.total.item() == out.ce.item() and out.sao.item() == 0.0


def test_total_equals_sao_when_ce_vanishes(rng, f64):
    logits = Tensor(np.array([[1e4, 0.0], [0.0, 1e4]]))
    res_a, res_v = Tensor(rng.normal(size=(2, 2, 3, 4))), Tensor(rng.normal(size=(2, 2, 3, 4)))
    out = total_loss(logits, [0, 1], res_a, res_v)
    assert out.total.item() == pytest.approx(out.sao.item(), abs=1e-12)


def test_total_recomputation_oracle(rng, f64):
    logits = rng.normal(size=(4, 3))
    labels = [2, 0, 1, 1]
    ra, rv = rng.normal(size=(3, 4, 5, 6)), rng.normal(size=(3, 4, 5, 6))
    out = total_loss(Tensor(logits), labels, Tensor(ra), Tensor(rv), SaoConfig(0.1))
    ce = np.mean([-(logits[i, labels[i]] - np.log(np.exp(logits[i]).sum())) for i in range(4)])

    def feats(r):
        m = r.mean(axis=2)
        return m / np.linalg.norm(m, axis=-1, keepdims=True)

    sao = sao_oracle(feats(ra), feats(rv), 0.1)
    assert out.ce.item() == pytest.approx(ce, abs=1e-12)
    assert out.sao.item() == pytest.approx(sao, abs=1e-10)
    assert out.total.item() == pytest.approx(ce + sao, abs=1e-10)
    assert set(out.values()) == {"ce", "sao", "total"}


def test_total_gradient_is_sum_of_term_gradients(rng, f64):
    logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    ra = Tensor(rng.normal(size=(2, 3, 2, 5)), requires_grad=True)
    rv = Tensor(rng.normal(size=(2, 3, 2, 5)))
    labels = [0, 3, 1]
    total_loss(logits, labels, ra, rv).total.backward()
    g_total = ra.grad.copy(), logits.grad.copy()
    ra.zero_grad()
    logits.zero_grad()
    parts = total_loss(logits, labels, ra, rv)
    parts.ce.backward()
    parts.sao.backward()
    assert np.allclose(ra.grad, g_total[0]) and np.allclose(logits.grad, g_total[1])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SaoConfig(0.1)
    with pytest.raises(ValueError):
        SaoConfig(0.0)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rattlab import ratt
from rattlab.errors import DomainError, ShapeError, TaskError
from rattlab.linalg import Rng
from rattlab.model import FIELDS, LSTM_H, LSTM_X, Example, ModelDims, forward_teacher_forced, greedy_decode
from rattlab.optim import SGD, Adam
from rattlab.ratt import (
    AnnealSchedule, CumulativeMasks, MaskSet, TaskEmbeddings, anneal_s, apply_masked_update,
    backward_masks, compensate_embedding_gradients, compensation_scale, compute_masks,
    mask_preactivation_grad, sparsity_loss, sparsity_loss_grad, update_cumulative,
)

from conftest import random_params

unit = st.floats(0.0, 1.0)


def emb_with(A_x, A_h):
    return TaskEmbeddings(np.asarray(A_x, float), np.asarray(A_h, float))


def mask(a_x, a_h, a_s=(True,)):
    return MaskSet(np.asarray(a_x, float), np.asarray(a_h, float), np.asarray(a_s, bool), 0, 1.0)


def cum(a_x, a_h, a_s=(False,)):
    return CumulativeMasks(np.asarray(a_x, float), np.asarray(a_h, float), np.asarray(a_s, bool))


def test_zero_embeddings_give_half():
    m = compute_masks(emb_with(np.zeros((3, 2)), np.zeros((4, 2))), 1, 7.0, [1, 0, 1])
    assert np.all(m.a_x == 0.5) and np.all(m.a_h == 0.5)
    assert m.a_s.tolist() == [True, False, True]


def test_large_scale_masks_are_nearly_binary():
    A = np.array([[0.1, -0.1], [-0.1, 0.1]])
    m = compute_masks(emb_with(A, A), 0, 2000.0, [1])
    assert np.all(np.abs(m.a_x - np.array([1.0, 0.0])) <= 1e-12)


def test_preactivation_clamped():
    m = compute_masks(emb_with([[10.0]], [[-10.0]]), 0, 2000.0, [1])
    assert m.a_x[0] == 1.0 / (1.0 + math.exp(-50.0))
    assert m.a_h[0] == math.exp(-50.0) / (1.0 + math.exp(-50.0))


def test_compute_masks_errors():
    e = emb_with(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(TaskError):
        compute_masks(e, 2, 1.0, [1])
    with pytest.raises(DomainError):
        compute_masks(e, 0, 0.0, [1])


def test_anneal_hand_value_and_endpoints():
    sched = AnnealSchedule(400.0, 3)
    assert anneal_s(2, sched) == pytest.approx(200.00125, rel=1e-15)
    assert anneal_s(1, sched) == 1 / 400
    assert anneal_s(3, sched) == 400.0
    assert anneal_s(1, AnnealSchedule(400.0, 1)) == 400.0
    with pytest.raises(DomainError):
        anneal_s(4, sched)
    with pytest.raises(DomainError):
        anneal_s(0, sched)


@given(st.floats(1.0, 5000.0), st.integers(2, 500))
def test_anneal_monotone_within_bounds(s_max, B):
    sched = AnnealSchedule(s_max, B)
    vals = [anneal_s(b, sched) for b in range(1, B + 1)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[0] == 1 / s_max and vals[-1] == s_max


def test_update_cumulative_examples():
    prev = cum([0.0, 0.0], [0.0], [False, False])
    cur = mask([0.3, 0.9], [0.2], [True, False])
    out = update_cumulative(prev, cur)
    assert out.a_x.tolist() == [0.3, 0.9] and out.a_s.tolist() == [True, False]
    out2 = update_cumulative(out, mask([0.7, 0.1], [0.1], [False, True]))
    assert out2.a_x.tolist() == [0.7, 0.9] and out2.a_h.tolist() == [0.2]
    assert out2.a_s.tolist() == [True, True]


@given(arrays(np.float64, 5, elements=unit), arrays(np.float64, 5, elements=unit))
def test_update_cumulative_monotone(a, b):
    out = update_cumulative(cum(a, a, [False]), mask(b, b, [True]))
    assert np.all(out.a_x >= a) and np.all(out.a_x >= b)


def test_update_cumulative_grows_vocab_and_checks_shapes():
    out = update_cumulative(cum([0.0], [0.0], [True]), mask([0.5], [0.5], [False, True, True]))
    assert out.a_s.tolist() == [True, True, True]
    with pytest.raises(ShapeError):
        update_cumulative(cum([0.0, 0.0], [0.0], [True]), mask([0.5], [0.5], [True]))


def test_backward_mask_hand_example():
    B = backward_masks(cum([1.0, 1.0], [1.0, 0.0], [False]), d_feat=3)
    assert B.W_ix.tolist() == [[0.0, 0.0], [1.0, 1.0]]
    assert B.W_gh.tolist() == [[0.0, 1.0], [1.0, 1.0]]
    assert B.V.tolist() == [[0.0] * 3, [0.0] * 3]
    assert B.b_f.tolist() == [0.0, 1.0]


def test_backward_mask_extremes():
    full = backward_masks(cum(np.ones(2), np.ones(3), np.ones(4, bool)), d_feat=2)
    assert all(not full[k].any() for k in FIELDS)
    none = backward_masks(cum(np.zeros(2), np.zeros(3), np.zeros(4, bool)), d_feat=2)
    assert all(np.all(none[k] == 1.0) for k in FIELDS)


@given(arrays(np.float64, 3, elements=unit), arrays(np.float64, 4, elements=unit), arrays(np.bool_, 5))
def test_backward_mask_entry_formula(ax, ah, a_s):
    B = backward_masks(cum(ax, ah, a_s), d_feat=2)
    s = a_s.astype(float)
    for i in range(4):
        for j in range(4):
            assert B.W_oh[i, j] == 1.0 - min(ah[i], ah[j])
        for j in range(3):
            assert B.W_fx[i, j] == 1.0 - min(ah[i], ax[j])
    for i in range(3):
        for j in range(5):
            assert B.S[i, j] == 1.0 - min(ax[i], s[j])
    for i in range(5):
        for j in range(4):
            assert B.C[i, j] == 1.0 - min(s[i], ah[j])
    # zero exactly when both incident attentions are 1
    assert np.array_equal(B.W_ih == 0.0, np.outer(ah == 1.0, ah == 1.0))


def test_apply_masked_update_cases():
    r = np.random.default_rng(0)
    W, g = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    assert np.array_equal(apply_masked_update(W, g, np.zeros((3, 4)), 0.1), W)
    assert np.array_equal(apply_masked_update(W, g, np.ones((3, 4)), 0.1), W - 0.1 * g)
    B = (r.random((3, 4)) < 0.5).astype(float)
    out = apply_masked_update(W, g, B, 0.1)
    plain = W - 0.1 * g
    assert np.array_equal(out[B == 0], W[B == 0]) and np.array_equal(out[B == 1], plain[B == 1])
    with pytest.raises(ShapeError):
        apply_masked_update(W, g, np.ones((4, 3)), 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["sgd", "adam"]))
def test_optimizers_leave_protected_entries_bit_identical(seed, name):
    r = np.random.default_rng(seed)
    W0 = r.normal(size=(4, 5))
    B = r.random((4, 5))
    B[r.random((4, 5)) < 0.4] = 0.0
    opt = SGD(0.05) if name == "sgd" else Adam(0.01)
    params = {"W": W0.copy()}
    for _ in range(20):
        opt.step(params, {"W": r.normal(size=(4, 5))}, masks={"W": B})
    assert np.array_equal(params["W"][B == 0], W0[B == 0])


def test_sparsity_loss_examples():
    assert sparsity_loss(mask(np.ones(3), np.ones(2)), cum(np.zeros(3), np.zeros(2))) == 2.0
    assert sparsity_loss(mask(np.zeros(3), np.zeros(2)), cum(np.zeros(3), np.zeros(2))) == 0.0
    # attending only already-attended units is free
    cur = mask([0.9, 0.0, 0.0], [1.0, 0.0])
    assert sparsity_loss(cur, cum([1.0, 0.0, 0.2], [1.0, 0.5])) == 0.0
    # no free units left: the term is defined as 0
    assert sparsity_loss(mask([0.4], [0.3]), cum([1.0], [1.0])) == 0.0


def test_sparsity_grad_matches_finite_differences():
    r = np.random.default_rng(2)
    cur = mask(r.random(4), r.random(3))
    c = cum(r.random(4), r.random(3))
    gx, gh = sparsity_loss_grad(cur, c)
    eps = 1e-6
    for i in range(4):
        up, dn = cur.a_x.copy(), cur.a_x.copy()
        up[i] += eps
        dn[i] -= eps
        fd = (sparsity_loss(mask(up, cur.a_h), c) - sparsity_loss(mask(dn, cur.a_h), c)) / (2 * eps)
        assert gx[i] == pytest.approx(fd, abs=1e-8)


def test_mask_preactivation_grad_matches_finite_differences():
    r = np.random.default_rng(3)
    A = r.uniform(-0.5, 0.5, size=(5, 2))
    da = r.normal(size=5)
    s = 7.0
    g = mask_preactivation_grad(da, A, 1, s)
    eps = 1e-6
    for i in range(5):
        up, dn = A.copy(), A.copy()
        up[i, 1] += eps
        dn[i, 1] -= eps
        f = lambda M: float(da @ compute_masks(emb_with(M, M), 1, s, [1]).a_x)
        assert g[i] == pytest.approx((f(up) - f(dn)) / (2 * eps), abs=1e-7)
    # saturated (clamped) entries pass no gradient
    assert mask_preactivation_grad(np.ones(1), np.array([[1.0]]), 0, 400.0)[0] == 0.0


def test_compensation_examples():
    assert compensation_scale(np.zeros(3), 400.0, 400.0).tolist() == [1.0, 1.0, 1.0]
    a = np.array([-0.1, -0.02, 0.0, 0.05, 0.11])
    got = compensation_scale(a, 400.0, 400.0)
    oracle = [(math.cosh(400.0 * v) + 1.0) / (math.cosh(v) + 1.0) for v in a]
    assert np.allclose(got, oracle, rtol=1e-13, atol=0)


@given(arrays(np.float64, 6, elements=st.floats(-3, 3)), st.floats(1e-3, 400.0))
def test_compensation_positive(a, s):
    assert np.all(compensation_scale(a, s, 400.0) > 0)


def test_compensate_embedding_gradients_scales_rows():
    e = emb_with(np.zeros((2, 1)), np.zeros((3, 1)))
    gx, gh = compensate_embedding_gradients(np.ones(2), np.ones(3), 400.0, AnnealSchedule(400.0, 5), e, 0)
    assert gx.tolist() == [1.0, 1.0] and gh.tolist() == [1.0, 1.0, 1.0]


def test_all_ones_masks_match_unmasked_forward(small_params):
    ex = Example(np.linspace(-1, 1, 5), [0, 4, 2, 1])
    sup = np.ones(10, bool)
    plain = forward_teacher_forced(ex, small_params, sup)
    ones = forward_teacher_forced(ex, small_params, sup, a_x=np.ones(4), a_h=np.ones(6))
    assert np.array_equal(plain.logits, ones.logits) and plain.loss() == ones.loss()


def test_zero_hidden_mask_unit_is_cut_off(small_params):
    ex = Example(np.linspace(-1, 1, 5), [0, 4, 2, 1])
    a_h = np.ones(6)
    a_h[2] = 0.0
    base = forward_teacher_forced(ex, small_params, np.ones(10, bool), a_h=a_h)
    p = small_params.copy()
    p["C"][:, 2] = 123.0
    for k in LSTM_H:
        p[k][:, 2] = -55.0
    other = forward_teacher_forced(ex, p, np.ones(10, bool), a_h=a_h)
    assert np.array_equal(base.logits, other.logits)


def test_vocab_mask_blocks_word_in_decode(small_params):
    sup = np.ones(10, bool)
    w = greedy_decode(np.ones(5), small_params, sup, 6)[0]
    sup[w] = False
    assert w not in greedy_decode(np.ones(5), small_params, sup, 6)


def test_binarized_masks():
    m = mask([0.2, 0.5, 0.9], [0.49, 0.51]).binarized()
    assert m.a_x.tolist() == [0.0, 1.0, 1.0] and m.a_h.tolist() == [0.0, 1.0]


def test_export_mask_usage(tmp_path):
    masks = {0: mask([0.9, 0.1], [1.0, 1.0, 0.0], [True, True, False])}
    path = ratt.export_mask_usage(masks, tmp_path / "usage.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("task,x_units")
    assert lines[1].split(",")[:3] == ["0", "1", "2"]


def test_task_embeddings_init_range():
    e = TaskEmbeddings.init(4, 6, 3, Rng(0))
    assert e.A_x.shape == (4, 3) and e.A_h.shape == (6, 3)
    assert np.all(e.A_x >= -1) and np.all(e.A_h < 1)

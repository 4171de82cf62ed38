import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamloc import autodiff as ad
from hamloc.errors import FormatError
from hamloc.model import (HamNetParams, drop_mask, forward, forward_attention, forward_classification, hard,
                          load_checkpoint, modulate, save_checkpoint, semi_soft, video_scores)

from oracles import conv_oracle


def lrelu(z, s=0.2):
    return np.where(z > 0, z, s * z)


def softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def random_params(seed, F=4, c=2, H=5, Ha=3):
    p = HamNetParams.init(F, c, H, Ha, seed=seed)
    r = np.random.default_rng(seed + 100)
    for t in p.tensors():
        t.data[...] = r.normal(scale=0.5, size=t.shape)  # nonzero biases too
    return p


def test_zero_params_give_zero_cas_and_half_attention():
    p = HamNetParams.zeros_like(6, 3, 8, 8)
    x = np.random.default_rng(0).normal(size=(9, 6))
    np.testing.assert_array_equal(forward_classification(x, p).data, 0.0)
    np.testing.assert_array_equal(forward_attention(x, p).data, 0.5)


def test_cas_shape():
    p = HamNetParams.init(7, 4, seed=0)
    assert forward_classification(np.zeros((10, 7)), p).shape == (10, 5)
    assert forward_attention(np.zeros((10, 7)), p).shape == (10,)


def test_default_hidden_widths():
    p = HamNetParams.init(6, 3)
    assert (p.hidden, p.attn_hidden) == (12, 12)


def test_init_is_seeded_and_glorot_bounded():
    a, b = HamNetParams.init(5, 2, seed=4), HamNetParams.init(5, 2, seed=4)
    for (n, x), (_, y) in zip(a.named(), b.named()):
        np.testing.assert_array_equal(x.data, y.data)
    bound = np.sqrt(6 / (5 * 3 + 10 * 3))
    assert np.abs(a.cls_conv1_w.data).max() <= bound
    np.testing.assert_array_equal(a.cls_conv1_b.data, 0.0)


def test_branches_match_composition_oracle():
    p = random_params(1)
    x = np.random.default_rng(2).normal(size=(8, 4))
    h = lrelu(conv_oracle(x, p.cls_conv1_w.data, p.cls_conv1_b.data))
    h = lrelu(conv_oracle(h, p.cls_conv2_w.data, p.cls_conv2_b.data))
    cas = h @ p.cls_linear_w.data.T + p.cls_linear_b.data
    np.testing.assert_allclose(forward_classification(x, p).data, cas, atol=1e-12, rtol=0)
    g = lrelu(conv_oracle(x, p.attn_conv1_w.data, p.attn_conv1_b.data))
    z = conv_oracle(g, p.attn_conv2_w.data, p.attn_conv2_b.data)[:, 0]
    np.testing.assert_allclose(forward_attention(x, p).data, 1 / (1 + np.exp(-z)), atol=1e-12, rtol=0)


def test_feature_dim_mismatch_is_reported():
    with pytest.raises(ValueError, match="F=3"):
        forward(np.zeros((5, 3)), HamNetParams.init(4, 2))


# -------------------------------------------------------------- attentions


def test_modulate_cases():
    r = np.random.default_rng(0)
    cas = r.normal(size=(4, 3))
    np.testing.assert_array_equal(modulate(cas, np.ones(4)).data, cas)
    np.testing.assert_array_equal(modulate(cas, np.zeros(4)).data, 0.0)
    a = np.array([0.5, 1, 0, 0.25])
    np.testing.assert_array_equal(modulate(cas, a).data, cas * a[:, None])


def test_semi_soft_and_hard_rules():
    a = np.array([0.1, 0.5, 0.9])
    np.testing.assert_array_equal(semi_soft(a, 0.2).data, [0.1, 0, 0])
    np.testing.assert_array_equal(hard(a, 0.2).data, [1, 0, 0])
    np.testing.assert_array_equal(semi_soft(a, 0.0).data, 0.0)
    np.testing.assert_array_equal(hard(a, 0.0).data, 0.0)
    np.testing.assert_array_equal(semi_soft(a, 1.0).data, a)
    np.testing.assert_array_equal(hard(a, 1.0).data, 1.0)


def test_semi_soft_detached_unless_requested():
    a = ad.Tensor(np.array([0.1, 0.15]), requires_grad=True)
    assert not semi_soft(a, 0.2).requires_grad
    out = semi_soft(a, 0.2, grad_flow=True)
    ad.backward(ad.tsum(out))
    np.testing.assert_array_equal(a.grad, [1.0, 1.0])


def test_drop_modes():
    a = np.array([0.1, 0.5, 0.05, 0.9])
    np.testing.assert_array_equal(drop_mask(a, 0.2, "inverse"), [False, True, False, True])
    m = drop_mask(a, 0.2, "random", np.random.default_rng(0))
    assert m.sum() == 2
    with pytest.raises(ValueError, match="unknown drop mode"):
        drop_mask(a, 0.2, "bogus")
    with pytest.raises(ValueError, match="rng"):
        drop_mask(a, 0.2, "random")


@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=30), st.floats(0, 1))
def test_coupling(values, gamma):
    a = np.array(values)
    semi, hd = semi_soft(a, gamma).data, hard(a, gamma).data
    below = a < gamma
    # a_i = 0 is retained with value 0, so positivity is checked only where a_i > 0
    pos = a > 0
    np.testing.assert_array_equal((semi > 0)[pos], below[pos])
    np.testing.assert_array_equal(hd == 1, below)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_dropped_set_monotone_in_gamma(values, g1, g2):
    lo, hi = sorted((g1, g2))
    a = np.array(values)
    assert np.all(hard(a, lo).data <= hard(a, hi).data)


# ----------------------------------------------------------- video scores


def test_video_scores_single_snippet_and_constant():
    row = np.array([[0.3, -1.0, 2.0]])
    np.testing.assert_allclose(video_scores(row, 5).data, softmax(row[0]), atol=1e-15)
    np.testing.assert_allclose(video_scores(np.full((6, 4), 1.7), 3).data, 0.25, atol=1e-15)


def test_video_scores_composition(rng):
    s = rng.normal(size=(6, 3))
    pooled = np.sort(s, axis=0)[-2:].mean(axis=0)
    np.testing.assert_allclose(video_scores(s, 2).data, softmax(pooled), atol=1e-12)


def test_zero_attention_params_drop_everything():
    p = HamNetParams.init(4, 3, seed=0)
    for t in (p.attn_conv1_w, p.attn_conv1_b, p.attn_conv2_w, p.attn_conv2_b):
        t.data[...] = 0.0
    out = forward(np.random.default_rng(0).normal(size=(7, 4)), p, gamma=0.2, k=3)
    np.testing.assert_array_equal(out.attn_hard.data, 0.0)
    np.testing.assert_allclose(out.p_semisoft.data, 0.25)
    np.testing.assert_allclose(out.p_hard.data, 0.25)


@pytest.mark.parametrize("seed", range(10))
def test_gamma_one_identities(seed):
    p = HamNetParams.init(5, 3, seed=seed)
    x = np.random.default_rng(seed).normal(size=(11, 5))
    out = forward(x, p, gamma=1.0, k=3)
    np.testing.assert_array_equal(out.p_semisoft.data, out.p_attn.data)
    np.testing.assert_array_equal(out.p_hard.data, out.p_base.data)


@pytest.mark.parametrize("seed", range(10))
def test_probabilities_sum_to_one(seed):
    out = forward(np.random.default_rng(seed).normal(size=(9, 5)), HamNetParams.init(5, 4, seed=seed), k=2)
    for p in (out.p_base, out.p_attn, out.p_semisoft, out.p_hard):
        assert abs(p.data.sum() - 1) <= 1e-12
        assert p.shape == (5,)


def test_random_drop_mode_shares_mask():
    p = HamNetParams.init(4, 2, seed=0)
    out = forward(np.random.default_rng(0).normal(size=(12, 4)), p, gamma=0.6, k=2, drop_mode="random",
                  rng=np.random.default_rng(5))
    np.testing.assert_array_equal(out.attn_semisoft.data > 0, out.attn_hard.data == 1)


@given(st.integers(0, 10 ** 6), st.integers(1, 8))
def test_shift_equivariance_on_interior(seed, shift):
    p = random_params(seed % 97)
    x = np.random.default_rng(seed).normal(size=(20, 4))
    a, b = forward(x, p, k=2), forward(np.roll(x, shift, axis=0), p, k=2)
    # two stacked K=3 convs see 2 snippets on each side; skip those near either end and the wrap seam
    interior = [i for i in range(20) if 2 <= i < 18 and 2 <= (i + shift) % 20 < 18]
    for t_a, t_b in ((a.cas, b.cas), (a.attn, b.attn)):
        shifted = np.roll(t_a.data, shift, axis=0)
        idx = [(i + shift) % 20 for i in interior]
        np.testing.assert_allclose(t_b.data[idx], shifted[idx], atol=1e-12)


# -------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    p = random_params(3)
    path = tmp_path / "m.hamn"
    save_checkpoint(p, path, {"k": 4, "note": "x"})
    q, meta = load_checkpoint(path)
    assert meta == {"k": 4, "note": "x"}
    for (n, a), (_, b) in zip(p.named(), q.named()):
        np.testing.assert_array_equal(a.data, b.data)
    x = np.random.default_rng(0).normal(size=(9, 4))
    np.testing.assert_array_equal(forward(x, p, k=3).p_attn.data, forward(x, q, k=3).p_attn.data)


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"HAMX" + b[4:], "magic"),
    (lambda b: b[:8], "header"),
    (lambda b: b[:-8], "truncated"),
    (lambda b: b[:4] + b"\x09\x00\x00\x00" + b[8:], "version"),
    (lambda b: b[:40], "truncated"),
])
def test_checkpoint_corruption_rejected(tmp_path, mutate, match):
    path = tmp_path / "m.hamn"
    save_checkpoint(HamNetParams.init(3, 2, seed=0), path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError, match=match):
        load_checkpoint(path)

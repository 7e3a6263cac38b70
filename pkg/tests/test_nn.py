import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shaped import autodiff as ad
from shaped.autodiff import ShapeError, Tensor
from shaped.nn import (
    AttentionParams, EmbeddingParams, GruParams, OutputNetParams, attend, encode_bidir, gru_cell, init_uniform,
    output_logits,
)


def const_gru(n_in, n_h, value=0.0):
    return GruParams(**{k: Tensor(np.full(s, value)) for k, s in GruParams.shapes(n_in, n_h).items()})


def random_gru(rng, n_in, n_h, scale=0.5):
    return GruParams(**init_uniform(GruParams.shapes(n_in, n_h), rng, scale))


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_gru(x, h, p):
    """Plain-Python GRU step over lists, one coordinate at a time."""
    W = {k: getattr(p, k).value.tolist() for k in ("W_update", "W_reset", "W_cand", "U_update", "U_reset", "U_cand",
                                                    "b_update", "b_reset", "b_cand")}
    n = len(h)

    def lin(Wk, Uk, bk, i, hv):
        return sum(W[Wk][i][j] * x[j] for j in range(len(x))) + sum(W[Uk][i][j] * hv[j] for j in range(n)) + W[bk][i]

    z = [sig(lin("W_update", "U_update", "b_update", i, h)) for i in range(n)]
    r = [sig(lin("W_reset", "U_reset", "b_reset", i, h)) for i in range(n)]
    rh = [r[i] * h[i] for i in range(n)]
    c = [math.tanh(lin("W_cand", "U_cand", "b_cand", i, rh)) for i in range(n)]
    return [(1 - z[i]) * h[i] + z[i] * c[i] for i in range(n)]


# -------------------------------------------------------------------- GRU


def test_zero_params_halve_state():
    v = np.array([[0.4, -1.0, 2.0]])
    out = gru_cell(Tensor(np.ones((1, 2))), Tensor(v), const_gru(2, 3))
    npt.assert_array_equal(out.value, 0.5 * v)


def test_zero_params_zero_state():
    out = gru_cell(Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))), const_gru(2, 3))
    npt.assert_array_equal(out.value, np.zeros((1, 3)))


def test_two_unit_cell_hand_values():
    p = GruParams(
        W_update=Tensor([[0.5], [-0.3]]), W_reset=Tensor([[0.2], [0.1]]), W_cand=Tensor([[1.0], [-1.0]]),
        U_update=Tensor([[0.1, 0.0], [0.0, 0.2]]), U_reset=Tensor([[0.0, 0.3], [0.4, 0.0]]),
        U_cand=Tensor([[0.5, -0.5], [0.25, 0.25]]),
        b_update=Tensor([0.0, 0.1]), b_reset=Tensor([0.0, 0.0]), b_cand=Tensor([0.1, 0.0]),
    )
    x, h = [2.0], [0.5, -0.5]
    out = gru_cell(Tensor([x]), Tensor([h]), p).value[0]
    npt.assert_allclose(out, scalar_gru(x, h, p), rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_gru_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_gru(rng, 3, 4, scale=1.0)
    x, h = rng.normal(size=3), rng.uniform(-1, 1, size=4)
    out = gru_cell(Tensor(x[None]), Tensor(h[None]), p).value[0]
    npt.assert_allclose(out, scalar_gru(x.tolist(), h.tolist(), p), rtol=1e-12, atol=1e-14)
    assert np.all(np.abs(out) <= np.maximum(np.abs(h), 1.0) + 1e-15)


def test_gru_rejects_wrong_width():
    with pytest.raises(ShapeError, match="gru state"):
        gru_cell(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 4))), const_gru(2, 3))


# -------------------------------------------------------------- encoder


def test_length_one_input():
    rng = np.random.default_rng(0)
    fwd, bwd = random_gru(rng, 4, 3), random_gru(rng, 4, 3)
    e = EmbeddingParams(Tensor(rng.normal(size=(10, 4))))
    enc = encode_bidir([7], fwd, bwd, e)
    assert enc.states.shape == (1, 1, 6)
    x = Tensor(e.E.value[[7]])
    h0 = Tensor(np.zeros((1, 3)))
    npt.assert_allclose(enc.states.value[0, 0, :3], gru_cell(x, h0, fwd).value[0])
    npt.assert_allclose(enc.states.value[0, 0, 3:], gru_cell(x, h0, bwd).value[0])


def test_palindrome_with_tied_directions():
    rng = np.random.default_rng(1)
    p = random_gru(rng, 4, 3)
    e = EmbeddingParams(Tensor(rng.normal(size=(10, 4))))
    H = encode_bidir([5, 2, 8, 2, 5], p, p, e).states.value[0]
    for j in range(5):
        npt.assert_allclose(H[j, :3], H[4 - j, 3:], rtol=1e-14)


def test_encoder_matches_unrolled_recurrence():
    rng = np.random.default_rng(2)
    fwd, bwd = random_gru(rng, 2, 3), random_gru(rng, 2, 3)
    E = rng.normal(size=(6, 2))
    ids = [4, 1, 3]
    enc = encode_bidir(ids, fwd, bwd, EmbeddingParams(Tensor(E)))
    hf, hb = [0.0] * 3, [0.0] * 3
    f_states, b_states = [], [None] * 3
    for t in range(3):
        hf = scalar_gru(E[ids[t]].tolist(), hf, fwd)
        f_states.append(hf)
    for t in reversed(range(3)):
        hb = scalar_gru(E[ids[t]].tolist(), hb, bwd)
        b_states[t] = hb
    expected = np.array([f + b for f, b in zip(f_states, b_states)])
    npt.assert_allclose(enc.states.value[0], expected, rtol=1e-12)
    npt.assert_allclose(enc.finals.value[0], f_states[-1] + b_states[0], rtol=1e-12)


def test_encoder_rejects_empty_and_bad_ids():
    rng = np.random.default_rng(0)
    p = random_gru(rng, 2, 2)
    e = EmbeddingParams(Tensor(np.zeros((5, 2))))
    with pytest.raises(ValueError):
        encode_bidir([], p, p, e)
    with pytest.raises(ValueError, match="token ids"):
        encode_bidir([9], p, p, e)


# ------------------------------------------------------------- attention


def attn_params(W, U, v):
    return AttentionParams(Tensor(np.atleast_2d(W)), Tensor(np.atleast_2d(U)), Tensor(np.atleast_1d(v)))


def test_single_state_gets_full_weight():
    H = Tensor(np.array([[[0.3, -0.7]]]))
    rng = np.random.default_rng(0)
    a = attn_params(rng.normal(size=(3, 2)), rng.normal(size=(3, 4)), rng.normal(size=3))
    alpha, c = attend(H, Tensor(rng.normal(size=(1, 4))), a)
    npt.assert_array_equal(alpha.value, [[1.0]])
    npt.assert_allclose(c.value, H.value[:, 0], rtol=1e-15)


def test_identical_states_split_evenly():
    H = Tensor(np.array([[[0.3, -0.7], [0.3, -0.7]]]))
    rng = np.random.default_rng(1)
    a = attn_params(rng.normal(size=(3, 2)), rng.normal(size=(3, 4)), rng.normal(size=3))
    alpha, c = attend(H, Tensor(rng.normal(size=(1, 4))), a)
    npt.assert_allclose(alpha.value, [[0.5, 0.5]])
    npt.assert_allclose(c.value, [[0.3, -0.7]])


def test_scalar_attention_hand_values():
    # one-dimensional states, attention width 1: q_j = v * tanh(w h_j + u s)
    h, s, w, u, v = [1.0, -2.0, 0.5], 0.4, 0.8, -1.5, 2.0
    q = [v * math.tanh(w * hj + u * s) for hj in h]
    den = sum(math.exp(x) for x in q)
    alpha_ref = [math.exp(x) / den for x in q]
    c_ref = sum(a * hj for a, hj in zip(alpha_ref, h))
    alpha, c = attend(Tensor(np.array(h).reshape(1, 3, 1)), Tensor([[s]]), attn_params([[w]], [[u]], [v]))
    npt.assert_allclose(alpha.value[0], alpha_ref, rtol=1e-14)
    npt.assert_allclose(c.value[0, 0], c_ref, rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), T=st.integers(1, 6))
def test_attention_is_a_distribution_and_permutation_equivariant(seed, T):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(2, T, 3))
    a = attn_params(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=4))
    s = Tensor(rng.normal(size=(2, 2)))
    alpha, c = attend(Tensor(H), s, a)
    assert np.all(alpha.value > 0)
    npt.assert_allclose(alpha.value.sum(axis=1), 1.0, atol=1e-12)
    perm = rng.permutation(T)
    alpha_p, c_p = attend(Tensor(H[:, perm]), s, a)
    npt.assert_allclose(alpha_p.value, alpha.value[:, perm], rtol=1e-12)
    npt.assert_allclose(c_p.value, c.value, rtol=1e-12, atol=1e-14)


def test_attention_rejects_wrong_state_width():
    a = attn_params(np.ones((2, 3)), np.ones((2, 2)), np.ones(2))
    with pytest.raises(ShapeError, match="decoder state"):
        attend(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 5))), a)


# ---------------------------------------------------------- output network


def test_zero_output_params_give_uniform():
    g = OutputNetParams(Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)), Tensor(np.zeros(7)))
    e = EmbeddingParams(Tensor(np.random.default_rng(0).normal(size=(7, 4))))
    logits = output_logits(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 2))), g, e)
    npt.assert_allclose(ad.softmax(logits).value, np.full((1, 7), 1 / 7), atol=1e-15)


def test_output_logits_hand_values():
    W = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    g = OutputNetParams(Tensor(W), Tensor([0.0, 0.5]), Tensor([0.1, 0.2, 0.3]))
    E = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    c, s = np.array([[0.2, 0.3]]), np.array([[0.9]])
    hidden = np.tanh(np.array([0.2, 0.3 + 0.5]))
    expected = E @ hidden + np.array([0.1, 0.2, 0.3])
    out = output_logits(Tensor(c), Tensor(s), g, EmbeddingParams(Tensor(E)))
    npt.assert_allclose(out.value[0], expected, rtol=1e-15)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000), V=st.integers(4, 30))
def test_output_width_is_vocab(seed, V):
    rng = np.random.default_rng(seed)
    g = OutputNetParams(Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=3)), Tensor(rng.normal(size=V)))
    e = EmbeddingParams(Tensor(rng.normal(size=(V, 3))))
    assert output_logits(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 2))), g, e).shape == (2, V)


# --------------------------------------------------------------- gradients


def test_layer_gradients_pass_grad_check():
    rng = np.random.default_rng(4)
    store = init_uniform({
        "gru.W_update": (3, 2), "gru.W_reset": (3, 2), "gru.W_cand": (3, 2),
        "gru.U_update": (3, 3), "gru.U_reset": (3, 3), "gru.U_cand": (3, 3),
        "gru.b_update": (3,), "gru.b_reset": (3,), "gru.b_cand": (3,),
        "attn.W_a": (4, 3), "attn.U_a": (4, 3), "attn.v_a": (4,),
        "out.W_hidden": (2, 6), "out.b_hidden": (2,), "out.b_vocab": (5,), "E": (5, 2),
    }, rng, 1.5)  # wide enough that no gradient sits at round-off level
    gru = GruParams.from_store(store, "gru")
    a, g = AttentionParams.from_store(store), OutputNetParams.from_store(store)
    ids = np.array([[1, 4, 2, 0]])

    def loss(_):
        e = EmbeddingParams(store["E"])
        H = encode_bidir(ids, gru, gru, e).states
        H = ad.slice_axis(H, 0, 3)
        s = gru_cell(ad.embedding_lookup(store["E"], np.array([3])), Tensor(np.zeros((1, 3))), gru)
        _, c = attend(H, s, a)
        logp = ad.log_softmax(output_logits(c, s, g, e))
        return ad.negate(ad.tensor_sum(ad.mul(logp, Tensor(np.eye(5)[[2]]))))

    assert ad.grad_check(loss, store).max_error < 1e-4

import numpy as np
import pytest

from modalsplit import learners as L
from modalsplit import tensor as T
from modalsplit.gradcheck import grad_check
from modalsplit.partitioner import HardGate
from modalsplit.tensor import Tensor

D = 8
HEADS = 2


@pytest.fixture
def block():
    return L.init_attention_block(D, D, np.random.default_rng(0))


@pytest.fixture
def x():
    return Tensor(np.random.default_rng(1).normal(size=(2, 4, D)))


def test_all_ones_gate_matches_unmasked_block(block, x):
    ones = Tensor(np.ones(D))
    masked = L.masked_attention_block(x, ones, block, HEADS)
    plain = L.masked_attention_block(x, None, block, HEADS)
    assert np.max(np.abs(masked.data - plain.data)) < 1e-9


def test_hard_gate_zeroes_masked_channels(block, x):
    g_hat = np.ones(D)
    g_hat[4:6] = 0.0
    hard = HardGate(g_hat=g_hat, cut=4, role="uni")
    out = L.masked_attention_block(x, hard, block, HEADS)
    assert np.array_equal(out.data[..., 4:6], np.zeros((2, 4, 2)))
    assert np.abs(out.data[..., :4]).min() > 0


def test_hard_exclusion_through_stacked_learner(x):
    rng = np.random.default_rng(7)
    blocks = L.init_learner(D, D, 3, rng)
    g_hat = np.zeros(D)
    g_hat[:3] = 1.0
    out = L.run_learner(x, HardGate(g_hat=g_hat, cut=3, role="uni"), blocks, HEADS)
    assert np.array_equal(out.data[..., 3:], np.zeros((2, 4, D - 3)))


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(3)
    s = 5
    q = Tensor(rng.normal(size=(1, 1, s, s)))
    k = Tensor(rng.normal(size=(1, 1, s, s)))
    eye = Tensor(np.broadcast_to(np.eye(s), (1, 1, s, s)).copy())
    weights = T.attention(q, k, eye).data  # A @ I recovers the weight matrix
    assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) < 1e-9


def test_complementary_gates_give_complementary_supports(block, x):
    g_u = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    g_p = 1.0 - g_u
    out_u = L.masked_attention_block(x, HardGate(g_u, 5, "uni"), block, HEADS)
    out_p = L.masked_attention_block(x, HardGate(g_p, 6, "paired"), block, HEADS)
    assert np.array_equal(out_u.data * g_p, np.zeros_like(out_u.data))
    assert np.array_equal(out_p.data * g_u, np.zeros_like(out_p.data))


def test_permutation_equivariance_over_positions(block, x):
    perm = np.array([3, 1, 0, 2])
    out = L.masked_attention_block(x, None, block, HEADS)
    out_perm = L.masked_attention_block(Tensor(x.data[:, perm]), None, block, HEADS)
    assert np.max(np.abs(out.data[:, perm] - out_perm.data)) < 1e-12


def test_soft_gate_attenuates_but_keeps_gradients(block, x):
    soft = Tensor(np.linspace(1.0, 0.1, D), requires_grad=True)

    def f(g):
        out = L.masked_attention_block(x, g, block, HEADS)
        return T.sum_squared_error(out, Tensor(np.zeros(out.shape)))

    assert grad_check(f, soft, eps=1e-5) < 1e-4


def test_block_grad_check(block, x):
    def f(w):
        block["wq"] = w
        out = L.masked_attention_block(x, Tensor(np.linspace(1, 0.2, D)), block, HEADS)
        return T.sum_squared_error(out, Tensor(np.zeros(out.shape)))

    assert grad_check(f, block["wq"], eps=1e-5) < 1e-4


def test_literal_additive_mask_mode_still_excludes(block, x):
    g_hat = np.ones(D)
    g_hat[5:] = 0.0
    hard = HardGate(g_hat=g_hat, cut=5, role="uni")
    out = L.masked_attention_block(x, hard, block, HEADS, literal_additive_mask=True)
    assert np.array_equal(out.data[..., 5:], np.zeros((2, 4, 3)))
    assert np.isfinite(out.data).all()


def test_decode_shape_contract():
    rng = np.random.default_rng(11)
    dec = L.init_decoder(D, D, rng)
    u = Tensor(rng.normal(size=(3, 4, D)))
    p = Tensor(rng.normal(size=(3, 4, D)))
    out = L.decode(u, p, dec, HEADS)
    assert out.shape == (3, 4, D)


def test_decode_zero_inputs_zero_biases_give_zero():
    dec = L.init_decoder(D, D, np.random.default_rng(13))
    z = Tensor(np.zeros((2, 3, D)))
    out = L.decode(z, z, dec, HEADS)
    assert np.array_equal(out.data, np.zeros((2, 3, D)))


def test_decode_rejects_mismatched_shapes():
    dec = L.init_decoder(D, D, np.random.default_rng(17))
    with pytest.raises(ValueError):
        L.decode(Tensor(np.zeros((1, 2, D))), Tensor(np.zeros((1, 3, D))), dec, HEADS)


def test_learner_decoder_composite_grad_check():
    rng = np.random.default_rng(19)
    blocks = L.init_learner(D, D, 1, rng)
    dec = L.init_decoder(D, D, rng)
    x = Tensor(rng.normal(size=(2, 3, D)))
    gate = Tensor(np.linspace(1.0, 0.3, D))

    def f(w):
        dec["merge_w"] = w
        feat = L.run_learner(x, gate, blocks, HEADS)
        recon = L.decode(feat, feat, dec, HEADS)
        return T.sum_squared_error(recon, x)

    assert grad_check(f, dec["merge_w"], eps=1e-5) < 1e-4


def test_bad_head_count_rejected(block, x):
    with pytest.raises(ValueError):
        L.masked_attention_block(x, None, block, n_heads=3)

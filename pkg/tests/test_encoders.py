import math

import numpy as np
import pytest

from compnli import autodiff as ad
from compnli.autodiff import DimensionError, Tensor, backward, gradcheck
from compnli.encoders import (
    BiLstmEncoder,
    BtreeEncoder,
    BtreeLstmParams,
    LstmCellParams,
    bilstm_encode,
    btree_encode,
    btree_states,
    enhance,
    lstm_step,
    pairing_schedule,
    run_lstm,
)


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def words(rng, n, d):
    return [Tensor(rng.standard_normal(d)) for _ in range(n)]


# -- plain-loop oracles -------------------------------------------------------


def ref_lstm(p: LstmCellParams, xs):
    W = {g: p.W[g].data for g in p.W}
    U = {g: p.U[g].data for g in p.U}
    b = {g: p.b[g].data for g in p.b}
    h = np.zeros(p.hidden)
    c = np.zeros(p.hidden)
    out = []
    for x in xs:
        i = sig(x @ W["i"] + h @ U["i"] + b["i"])
        f = sig(x @ W["f"] + h @ U["f"] + b["f"])
        o = sig(x @ W["o"] + h @ U["o"] + b["o"])
        c = f * c + i * np.tanh(x @ W["c"] + h @ U["c"] + b["c"])
        h = o * np.tanh(c)
        out.append(h)
    return out


def ref_btree(p: BtreeLstmParams, xs):
    """Node-by-node recursion following the schedule; returns emitted hidden states."""
    H = p.hidden
    W = {g: p.W[g].data for g in p.W}
    U = {g: {k: p.U[g][k].data for k in "LR"} for g in p.U}
    Uf = {kl: m.data for kl, m in p.Uf.items()}
    b = {g: p.b[g].data for g in p.b}
    bf = {k: p.bf[k].data for k in "LR"}

    def node(x, kids):
        hs = {k: h for k, (h, _) in zip("LR", kids)} if kids else {"L": np.zeros(H), "R": np.zeros(H)}
        cs = {k: c for k, (_, c) in zip("LR", kids)} if kids else {"L": np.zeros(H), "R": np.zeros(H)}
        gate = {g: (x @ W[g] if x is not None else 0) + sum(hs[k] @ U[g][k] for k in "LR") + b[g] for g in "ioc"}
        f = {k: sig((x @ W["f"] if x is not None and "f" in W else 0)
                    + sum(hs[l] @ Uf[(k, l)] for l in "LR") + bf[k]) for k in "LR"}
        c = sum(f[k] * cs[k] for k in "LR") + sig(gate["i"]) * np.tanh(gate["c"])
        return sig(gate["o"]) * np.tanh(c), c

    level = [node(x, None) for x in xs]
    emitted = [h for h, _ in level]
    for groups in pairing_schedule(len(xs)):
        nxt = []
        for grp in groups:
            if len(grp) == 1:
                nxt.append(level[grp[0]])
            else:
                state = node(None, [level[grp[0]], level[grp[1]]])
                nxt.append(state)
                emitted.append(state[0])
        level = nxt
    return emitted


# -- lstm_step ------------------------------------------------------------------


def zero_cell(hidden=1, input_dim=1):
    p = LstmCellParams(input_dim, hidden, np.random.default_rng(0), forget_bias=0.0)
    for t in p.parameters():
        t.data[...] = 0.0
    return p


def test_lstm_step_zero():
    h, c = lstm_step(zero_cell(3, 2), Tensor(np.ones(2)), Tensor(np.zeros(3)), Tensor(np.zeros(3)))
    assert h.data.tolist() == [0.0] * 3 and c.data.tolist() == [0.0] * 3


def test_lstm_step_hand_evaluated():
    h, c = lstm_step(zero_cell(), Tensor([0.7]), Tensor([0.0]), Tensor([1.0]))
    # i = f = o = 1/2, candidate = tanh(0) = 0
    assert c.data[0] == 0.5
    assert h.data[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
    assert h.data[0] == pytest.approx(0.23106, abs=1e-5)


def test_lstm_step_dimension_error():
    p = LstmCellParams(3, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        lstm_step(p, Tensor(np.zeros(4)), Tensor(np.zeros(2)), Tensor(np.zeros(2)))


def test_lstm_three_steps_gradcheck():
    rng = np.random.default_rng(1)
    p = LstmCellParams(3, 2, rng)
    xs = [Tensor(rng.standard_normal(3)) for _ in range(3)]

    def f(*params):
        for t, new in zip(p.parameters(), params):
            t.data = new.data
        h, c = Tensor(np.zeros(2)), Tensor(np.zeros(2))
        for x in xs:
            h, c = lstm_step(p, x, h, c)
        return ad.concat([h, c])

    assert gradcheck(f, p.parameters() + xs) < 1e-6


def test_run_lstm_matches_loop_oracle():
    rng = np.random.default_rng(2)
    p = LstmCellParams(4, 3, rng)
    xs = rng.standard_normal((6, 4))
    states, final = run_lstm(p, Tensor(xs[None]), np.ones((1, 6), dtype=bool))
    ref = ref_lstm(p, xs)
    np.testing.assert_allclose(states.data[0], np.stack(ref), atol=1e-12)
    np.testing.assert_allclose(final.data[0], ref[-1], atol=1e-12)


# -- bi-LSTM --------------------------------------------------------------------


def test_bilstm_single_word():
    rng = np.random.default_rng(3)
    enc = BiLstmEncoder(4, 3, rng)
    w = Tensor(rng.standard_normal(4))
    (out,) = bilstm_encode(enc.fwd, enc.bwd, [w])
    zero = Tensor(np.zeros(3))
    hf, _ = lstm_step(enc.fwd, w, zero, zero)
    hb, _ = lstm_step(enc.bwd, w, zero, zero)
    np.testing.assert_allclose(out.data, np.concatenate([hf.data, hb.data]), atol=1e-15)


def test_bilstm_matches_loop_oracle():
    rng = np.random.default_rng(4)
    enc = BiLstmEncoder(4, 3, rng)
    xs = rng.standard_normal((5, 4))
    out = bilstm_encode(enc.fwd, enc.bwd, [Tensor(x) for x in xs])
    fwd = ref_lstm(enc.fwd, xs)
    bwd = ref_lstm(enc.bwd, xs[::-1])[::-1]
    for t in range(5):
        np.testing.assert_allclose(out[t].data, np.concatenate([fwd[t], bwd[t]]), atol=1e-12)


def test_bilstm_palindrome_symmetry():
    rng = np.random.default_rng(5)
    enc = BiLstmEncoder(4, 3, rng)
    a, b, c = (rng.standard_normal(4) for _ in range(3))
    seq = [Tensor(v) for v in (a, b, c, b, a)]
    out = bilstm_encode(enc.fwd, enc.fwd, seq)
    for t in range(5):
        mirrored = out[4 - t].data
        swapped = np.concatenate([mirrored[3:], mirrored[:3]])
        np.testing.assert_allclose(out[t].data, swapped, atol=1e-14)


def test_bilstm_empty():
    enc = BiLstmEncoder(4, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        bilstm_encode(enc.fwd, enc.bwd, [])


@pytest.mark.parametrize("pad_to", [8, 64])
def test_bilstm_padding_invariance(pad_to):
    rng = np.random.default_rng(6)
    enc = BiLstmEncoder(4, 3, rng)
    real = rng.standard_normal((5, 4))

    def encode(length):
        x = np.zeros((1, length, 4))
        x[0, :5] = real
        mask = np.zeros((1, length), dtype=bool)
        mask[0, :5] = True
        return enc(Tensor(x), mask).states.data[0, :5]

    reference = bilstm_encode(enc.fwd, enc.bwd, [Tensor(r) for r in real])
    got = encode(pad_to)
    np.testing.assert_allclose(got[:, 4:], np.stack([r.data for r in reference]), atol=1e-12)
    assert got.tobytes() == encode(5).tobytes()


def test_enhance():
    rng = np.random.default_rng(7)
    ws = [Tensor(rng.standard_normal(300)) for _ in range(7)]
    vs = [Tensor(rng.standard_normal(600)) for _ in range(7)]
    enc = enhance(ws, vs)
    assert len(enc) == 7 and enc.encodings[0].shape == (900,)
    assert enc.encodings[3].data[:300].tobytes() == ws[3].data.tobytes()
    assert enc.encodings[3].data[300:].tobytes() == vs[3].data.tobytes()
    with pytest.raises(DimensionError):
        enhance(ws, vs[:-1])


# -- btree-LSTM -------------------------------------------------------------------


def test_schedule_five():
    levels = pairing_schedule(5)
    assert levels == [[(0, 1), (2, 3), (4,)], [(0, 1), (2,)], [(0, 1)]]
    assert sum(len(g) == 2 for lvl in levels for g in lvl) == 4


def test_btree_one_word():
    p = BtreeLstmParams(4, 3, np.random.default_rng(0))
    assert len(btree_encode(p, words(np.random.default_rng(1), 1, 4))) == 1


def test_btree_five_words_count():
    p = BtreeLstmParams(4, 3, np.random.default_rng(0))
    assert len(btree_encode(p, words(np.random.default_rng(1), 5, 4))) == 9


def test_btree_empty():
    p = BtreeLstmParams(4, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        btree_encode(p, [])


@pytest.mark.parametrize("internal", ["zero", "children_mean"])
@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 11])
def test_btree_matches_recursive_oracle(n, internal):
    rng = np.random.default_rng(n)
    p = BtreeLstmParams(4, 3, rng, internal_input=internal)
    xs = rng.standard_normal((n, 4))
    got = btree_encode(p, [Tensor(x) for x in xs])
    if internal == "zero":
        ref = ref_btree(p, xs)
        assert len(got) == len(ref) == 2 * n - 1
        for g, r in zip(got.encodings, ref):
            np.testing.assert_allclose(g.data, r, atol=1e-12)
    else:
        assert len(got) == 2 * n - 1


def test_btree_count_exhaustive_batched():
    rng = np.random.default_rng(9)
    p = BtreeLstmParams(3, 2, rng)
    n = np.arange(1, 65)
    mask = np.arange(64)[None, :] < n[:, None]
    enc = btree_states(p, Tensor(rng.standard_normal((64, 64, 3))), mask)
    assert enc.lengths.tolist() == (2 * n - 1).tolist()


def test_btree_batched_equals_single():
    rng = np.random.default_rng(10)
    p = BtreeLstmParams(4, 3, rng)
    lengths = [3, 7, 1, 6]
    x = rng.standard_normal((4, 7, 4))
    mask = np.arange(7)[None, :] < np.array(lengths)[:, None]
    batched = btree_states(p, Tensor(x), mask)
    for b, n in enumerate(lengths):
        single = btree_encode(p, [Tensor(v) for v in x[b, :n]])
        np.testing.assert_allclose(batched.states.data[b, : 2 * n - 1], np.stack([e.data for e in single.encodings]),
                                   atol=1e-12)


def test_promotion_is_identity():
    rng = np.random.default_rng(11)
    p = BtreeLstmParams(4, 3, rng)
    xs = [Tensor(x) for x in rng.standard_normal((3, 4))]
    enc = btree_encode(p, xs)
    # n = 3: leaves 0,1,2; node (0,1); then (node, leaf 2 promoted)
    leaf2 = enc.encodings[2].data
    ref = ref_btree(p, np.stack([x.data for x in xs]))
    np.testing.assert_allclose(ref[2], leaf2, atol=1e-15)
    assert len(enc) == 5


def test_btree_depth_three_gradcheck():
    rng = np.random.default_rng(12)
    p = BtreeLstmParams(3, 2, rng)
    xs = [Tensor(x) for x in rng.standard_normal((5, 3))]
    params = p.parameters()

    def f(*args):
        return ad.stack(btree_encode(p, xs).encodings)

    assert gradcheck(f, params + xs) < 1e-6


@pytest.mark.parametrize("internal", ["zero", "children_mean"])
def test_every_tree_gate_parameter_gets_gradient(internal):
    rng = np.random.default_rng(13)
    p = BtreeLstmParams(4, 3, rng, internal_input=internal)
    xs = [Tensor(x) for x in rng.standard_normal((6, 4))]
    out = ad.stack(btree_encode(p, xs).encodings)
    backward(ad.sum(ad.scale(out, rng.standard_normal(out.shape))), p.parameters())
    for t in p.parameters():
        assert np.any(t.grad != 0), t.name


def test_every_chain_gate_parameter_gets_gradient():
    rng = np.random.default_rng(14)
    enc = BiLstmEncoder(4, 3, rng)
    out = ad.stack(bilstm_encode(enc.fwd, enc.bwd, [Tensor(x) for x in rng.standard_normal((4, 4))]))
    backward(ad.sum(ad.scale(out, rng.standard_normal(out.shape))), enc.parameters())
    for t in enc.parameters():
        assert np.any(t.grad != 0), t.name


def test_btree_encoder_kind_and_dims():
    enc = BtreeEncoder(4, 3, np.random.default_rng(0))
    mask = np.ones((2, 4), dtype=bool)
    mask[1, 2:] = False
    out = enc(Tensor(np.random.default_rng(1).standard_normal((2, 4, 4))), mask)
    assert out.kind == "btree" and out.states.shape[-1] == 3
    assert out.lengths.tolist() == [7, 3]

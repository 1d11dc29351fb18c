import math

import pytest
import torch
from hypothesis import assume, given, settings, strategies as st

from ssdvae.diffcore import DTYPE, ContractViolation, ParameterSet, backward_gradients
from ssdvae.encoder import (EncoderWeights, beta_enc, check_observation, encode_event_step,
                            encode_sequence, inject_observation, observation_mask, raw_frame_logits,
                            uniform_frame)
from ssdvae.gumbel import gumbel_noise
from ssdvae.seqnets import EmbeddingTable, GruStack, bigru_encode


def t(x):
    return torch.tensor(x, dtype=DTYPE)


def weights(F=3, d_h=2, d_e=2, seed=0, attention="additive", scale=0.7):
    frames = EmbeddingTable(F, d_e)
    w = EncoderWeights(d_h, d_e, frames, attention)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in w.parameters():
            p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 - 1) * scale)
    return w


def test_zero_weights_give_zero_gamma():
    w = EncoderWeights(4, 2, EmbeddingTable(3, 2))
    noise = t([0.3, -1.0, 2.0])
    st_ = encode_event_step(uniform_frame(3), torch.zeros(3, dtype=DTYPE), torch.randn(5, 4, dtype=DTYPE),
                            w, 0.5, noise)
    assert torch.equal(st_.gamma, torch.zeros(3, dtype=DTYPE))
    assert torch.allclose(st_.normalized, torch.full((3,), 1 / 3, dtype=DTYPE))
    assert torch.allclose(st_.sample, torch.softmax(noise / 0.5, -1))


def test_injection_arithmetic():
    assert inject_observation(t([3.0, 4.0, 0.0]), t([0.0, 0.0, 1.0])).tolist() == [3.0, 4.0, 5.0]


def test_zero_gamma_injection_is_noop_and_gradient_finite():
    g = torch.zeros(3, dtype=DTYPE, requires_grad=True)
    out = inject_observation(g, t([0.0, 1.0, 0.0]))
    assert out.tolist() == [0.0, 0.0, 0.0]
    P = ParameterSet([("g", g)])
    grads = backward_gradients(torch.softmax(out, -1)[1], P)
    assert torch.isfinite(grads["g"]).all()


def test_hand_attention_case():
    frames = EmbeddingTable(2, 2)
    w = EncoderWeights(2, 2, frames)
    with torch.no_grad():
        frames.weight.copy_(torch.eye(2, dtype=DTYPE))
        w.w_in.copy_(torch.eye(2, dtype=DTYPE))
    H = torch.eye(2, dtype=DTYPE)
    _, alpha = raw_frame_logits(t([1.0, 0.0]), H, w)
    a = math.exp(1) / (math.exp(1) + 1)
    assert alpha.tolist() == pytest.approx([a, 1 - a], abs=1e-12)
    assert (alpha @ H).tolist() == pytest.approx([0.7311, 0.2689], abs=1e-4)


def test_full_step_by_hand():
    w = weights(F=3, d_h=2, d_e=2, seed=3)
    H = t([[0.5, -0.2], [0.1, 0.9], [-0.4, 0.3]])
    f_prev = t([0.2, 0.5, 0.3])
    obs = t([0.0, 1.0, 0.0])
    noise = t([0.1, -0.3, 0.7])
    E, Win, Wout = w.frames.weight.detach(), w.w_in.detach(), w.w_out.detach()
    e = sum(f_prev[k] * E[k] for k in range(3))
    q = Win @ e
    s = [float(H[i] @ q) for i in range(3)]
    mx = max(s)
    ex = [math.exp(v - mx) for v in s]
    alpha = [v / sum(ex) for v in ex]
    c = sum(alpha[i] * H[i] for i in range(3))
    gp = Wout @ (torch.tanh(q) + torch.tanh(c))
    gamma = gp + gp.norm() * obs
    st_ = encode_event_step(f_prev, obs, H, w, 0.5, noise)
    assert torch.allclose(st_.gamma, gamma, atol=1e-14)
    assert torch.allclose(st_.sample, torch.softmax((gamma + noise) / 0.5, -1), atol=1e-14)
    assert torch.allclose(st_.normalized, torch.softmax(gamma, -1), atol=1e-14)


def test_bad_observation_rejected():
    w = weights()
    for bad in ([1.0, 1.0, 0.0], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]):
        with pytest.raises(ContractViolation):
            encode_event_step(uniform_frame(3), t(bad), torch.randn(2, 2, dtype=DTYPE), w, 0.5,
                              torch.zeros(3, dtype=DTYPE))


def test_observation_mask():
    obs = observation_mask(torch.tensor([[2, -1]]), 3)
    assert obs.tolist() == [[[0, 0, 1], [0, 0, 0]]]
    check_observation(obs)


@settings(max_examples=1000)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=12), st.data())
def test_injection_monotone_and_never_forbids(values, data):
    g = t(values)
    # strict increase needs a shift that float64 softmax can resolve
    assume(float(g.norm()) > 1e-6)
    k = data.draw(st.integers(0, len(values) - 1))
    obs = torch.zeros(len(values), dtype=DTYPE)
    obs[k] = 1
    before = torch.softmax(g, -1)
    after = torch.softmax(inject_observation(g, obs), -1)
    # p_k = 1 - 1e-17 rounds to 1.0 in float64, so p_k is compared through its
    # complement, the mass of the other entries, which stays representable
    rest_before = torch.cat([before[:k], before[k + 1:]]).sum()
    rest_after = torch.cat([after[:k], after[k + 1:]]).sum()
    assert rest_after < rest_before
    assert (after > 0).all() and rest_after > 0


def _stack_and_H(T=6, seed=0):
    stack = GruStack(3, 2, 1, bidirectional=True)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in stack.parameters():
            p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) - 0.5)
    x = torch.randn(T, 3, generator=gen, dtype=DTYPE)
    return stack, x


def test_sequence_m1_is_single_step():
    w = weights(F=3, d_h=4, d_e=2, seed=1)
    stack, x = _stack_and_H(4)
    noise = gumbel_noise((1, 3), torch.Generator().manual_seed(2))
    obs = torch.zeros(1, 3, dtype=DTYPE)
    [s] = encode_sequence(x, obs, w, stack, 0.5, noise)
    one = encode_event_step(uniform_frame(3), obs[0], bigru_encode(x, stack), w, 0.5, noise[0])
    assert torch.equal(s.sample, one.sample) and torch.equal(s.gamma, one.gamma)


def test_sequence_m3_composes():
    w = weights(F=3, d_h=4, d_e=2, seed=1)
    stack, x = _stack_and_H(12)
    noise = gumbel_noise((3, 3), torch.Generator().manual_seed(2))
    obs = observation_mask(torch.tensor([-1, 2, -1]), 3)
    states = encode_sequence(x, obs, w, stack, 0.5, noise)
    H = bigru_encode(x, stack)
    f = uniform_frame(3)
    for m in range(3):
        s = encode_event_step(f, obs[m], H, w, 0.5, noise[m])
        assert torch.equal(s.sample, states[m].sample)
        f = s.sample


def test_sequence_deterministic_with_generator():
    w = weights(F=3, d_h=4, d_e=2, seed=1)
    stack, x = _stack_and_H(8)
    obs = torch.zeros(2, 3, dtype=DTYPE)
    a = encode_sequence(x, obs, w, stack, 0.5, torch.Generator().manual_seed(5))
    b = encode_sequence(x, obs, w, stack, 0.5, torch.Generator().manual_seed(5))
    assert all(torch.equal(p.sample, q.sample) for p, q in zip(a, b))


def test_w_out_gradient_survives_full_observation():
    w = weights(F=3, d_h=4, d_e=2, seed=4)
    stack, x = _stack_and_H(8)
    obs = observation_mask(torch.tensor([0, 2]), 3)
    noise = gumbel_noise((2, 3), torch.Generator().manual_seed(3))
    states = encode_sequence(x, obs, w, stack, 0.5, noise)
    target = torch.randn(3, dtype=DTYPE, generator=torch.Generator().manual_seed(9))
    loss = sum((s.sample * target).sum() for s in states)
    g = backward_gradients(loss, ParameterSet([("w_out", w.w_out)]))
    assert g["w_out"].abs().max() > 0


def test_concat_variant_runs():
    w = weights(F=3, d_h=4, d_e=2, seed=1, attention="concat")
    assert w.w_cat.shape == (4, 8)
    stack, x = _stack_and_H(4)
    [s] = encode_sequence(x, torch.zeros(1, 3, dtype=DTYPE), w, stack, 0.5,
                          torch.zeros(1, 3, dtype=DTYPE))
    assert abs(s.sample.sum().item() - 1) < 1e-12


def test_pad_mask_ignores_padding():
    w = weights(F=3, d_h=2, d_e=2, seed=2)
    H = torch.randn(4, 2, dtype=DTYPE)
    Hpad = torch.cat([H, torch.full((2, 2), 50.0, dtype=DTYPE)])
    mask = torch.tensor([True] * 4 + [False] * 2)
    a, _ = raw_frame_logits(uniform_frame(3), H, w)
    b, alpha = raw_frame_logits(uniform_frame(3), Hpad, w, pad_mask=mask)
    assert torch.allclose(a, b, atol=1e-14) and alpha[4:].abs().max() == 0


def test_beta_enc():
    w_out = t([[1.0, 2.0], [0.5, -1.0]])
    assert torch.equal(beta_enc(torch.zeros(3, 2, dtype=DTYPE), w_out), torch.zeros(2, 3, dtype=DTYPE))
    H = t([[0.3, -0.2], [1.0, 0.5]])
    expect = [[1.0 * math.tanh(0.3) + 2.0 * math.tanh(-0.2), 1.0 * math.tanh(1.0) + 2.0 * math.tanh(0.5)],
              [0.5 * math.tanh(0.3) - math.tanh(-0.2), 0.5 * math.tanh(1.0) - math.tanh(0.5)]]
    assert torch.allclose(beta_enc(H, w_out), t(expect), atol=1e-14)
    assert beta_enc(torch.zeros(20, 8, dtype=DTYPE), torch.zeros(500, 8, dtype=DTYPE)).shape == (500, 20)
    with pytest.raises(ContractViolation):
        beta_enc(torch.zeros(3, 4, dtype=DTYPE), w_out)


def test_shared_frame_table():
    frames = EmbeddingTable(3, 2)
    from ssdvae.decoder import DecoderWeights
    enc = EncoderWeights(4, 2, frames)
    dec = DecoderWeights(5, 2, 7, frames)
    assert enc.frames is dec.frames

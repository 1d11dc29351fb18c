import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from ssdvae.diffcore import DTYPE, ContractViolation
from ssdvae.objective import (ObjectiveConfig, classification_loss, entropy_regularizer,
                              reconstruction_loss, total_loss, uniform_prior_term)


def t(x):
    return torch.tensor(x, dtype=DTYPE)


def test_reconstruction():
    assert reconstruction_loss(torch.full((4,), -math.log(10), dtype=DTYPE)).item() == pytest.approx(9.2103, abs=1e-4)
    assert reconstruction_loss(torch.zeros(5, dtype=DTYPE)).item() == 0.0
    with pytest.raises(ContractViolation):
        reconstruction_loss(torch.zeros(0, dtype=DTYPE))


def test_entropy_cases():
    u = torch.full((2, 4), 0.25, dtype=DTYPE)
    assert entropy_regularizer(u).item() == pytest.approx(2 * math.log(4), abs=1e-12)
    p = torch.softmax(t([10.0, 0, 0, 0]), -1)
    direct = -sum(v * math.log(v) for v in p.tolist())
    assert entropy_regularizer(p.unsqueeze(0)).item() == pytest.approx(direct, rel=1e-12)
    assert direct == pytest.approx(1.50e-3, rel=0.01)


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 10_000))
def test_entropy_bounds(M, F, seed):
    logits = torch.randn(M, F, dtype=DTYPE, generator=torch.Generator().manual_seed(seed)) * 5
    L_q = entropy_regularizer(torch.softmax(logits, -1)).item()
    assert 0 <= L_q <= M * math.log(F) + 1e-12


def test_classification_cases():
    obs0 = torch.zeros(2, 4, dtype=DTYPE)
    assert classification_loss(torch.full((2, 4), 0.25, dtype=DTYPE), obs0).item() == 0.0
    obs = t([[0, 0, 0, 0], [1, 0, 0, 0]])
    assert classification_loss(torch.full((2, 4), 0.25, dtype=DTYPE), obs).item() == pytest.approx(math.log(4))
    p = torch.softmax(t([2.0, 0, 0, 0]), -1).unsqueeze(0)
    assert classification_loss(p, t([[1, 0, 0, 0]])).item() == pytest.approx(math.log(1 + 3 * math.exp(-2)), abs=1e-12)
    assert math.log(1 + 3 * math.exp(-2)) == pytest.approx(0.3407, abs=1e-4)


def test_classification_ignores_unobserved_events():
    obs = t([[0, 1, 0], [0, 0, 0]])
    a = torch.softmax(t([[0.1, 0.2, 0.3], [5.0, 0.0, 0.0]]), -1)
    b = torch.softmax(t([[0.1, 0.2, 0.3], [-3.0, 1.0, 9.0]]), -1)
    assert classification_loss(a, obs).item() == classification_loss(b, obs).item()


def test_total_loss_examples():
    cfg = ObjectiveConfig()
    assert (cfg.alpha_q, cfg.alpha_c, cfg.samples) == (0.1, 0.1, 1)
    assert total_loss(9.2103, 2.7726, 1.3863, cfg) == pytest.approx(9.0717, abs=1e-4)
    assert total_loss(9.2103, 2.7726, 1.3863, ObjectiveConfig(0, 0)) == 9.2103
    assert total_loss(1.0, 3.0, 0.5, cfg) < total_loss(1.0, 2.0, 0.5, cfg)
    with pytest.raises(ContractViolation):
        ObjectiveConfig(alpha_q=-0.1)
    with pytest.raises(ContractViolation):
        ObjectiveConfig(samples=0)


def test_uniform_prior_constant_leaves_gradient_unchanged():
    x = torch.randn(3, 4, dtype=DTYPE, requires_grad=True)
    q = torch.softmax(x, -1)
    base = total_loss(torch.tensor(1.0, dtype=DTYPE), entropy_regularizer(q),
                      torch.tensor(0.0, dtype=DTYPE), ObjectiveConfig())
    shifted = base - uniform_prior_term(3, 4)
    g1, = torch.autograd.grad(base, x, retain_graph=True)
    g2, = torch.autograd.grad(shifted, x)
    assert torch.equal(g1, g2)
    assert (shifted - base).item() == pytest.approx(3 * math.log(4))

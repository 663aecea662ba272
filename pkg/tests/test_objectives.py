import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from sparsevt.objectives import (IGNORE_INDEX, ContrastiveBatch, egonce_loss, infonce_loss, mask_tokens,
                                 mlm_loss, vtm_loss)

from oracles import egonce_by_sums, infonce_by_sums, stable_bce


def unit(n, d=6, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return F.normalize(torch.randn(n, d, generator=g, dtype=dtype), dim=-1)


def random_positives(n, seed):
    g = torch.Generator().manual_seed(seed)
    a = torch.rand(n, n, generator=g) < 0.3
    p = a | a.T
    p.fill_diagonal_(True)
    return p


def test_single_pair_zero_loss():
    v = unit(1)
    batch = ContrastiveBatch.diagonal(v, v)
    assert egonce_loss(batch, 0.05).item() == 0.0


def test_two_pair_closed_form():
    eye = torch.eye(2, dtype=torch.float64)
    loss = egonce_loss(ContrastiveBatch.diagonal(eye, eye), tau=1.0)
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert loss.item() == pytest.approx(0.31326168751822286, abs=1e-12)


def test_shared_positive_numerator_against_sums():
    v, t = unit(4, seed=1), unit(4, seed=2)
    pos = torch.eye(4, dtype=torch.bool)
    pos[0, 1] = pos[1, 0] = True
    got = egonce_loss(ContrastiveBatch(v, t, pos), tau=0.3, symmetric=False).item()
    assert got == pytest.approx(egonce_by_sums(v.numpy(), t.numpy(), pos.numpy(), 0.3), abs=1e-10)


def test_symmetric_averages_both_directions():
    v, t = unit(5, seed=3), unit(5, seed=4)
    pos = random_positives(5, 0)
    got = egonce_loss(ContrastiveBatch(v, t, pos), tau=0.5).item()
    expect = 0.5 * (egonce_by_sums(v.numpy(), t.numpy(), pos.numpy(), 0.5)
                    + egonce_by_sums(t.numpy(), v.numpy(), pos.T.numpy(), 0.5))
    assert got == pytest.approx(expect, abs=1e-10)


def test_empty_batch():
    z = torch.zeros(0, 4)
    with pytest.raises(ValueError):
        egonce_loss(ContrastiveBatch.diagonal(z, z), 0.1)
    with pytest.raises(ValueError):
        infonce_loss(z, z, 0.1)


def test_batch_invariants():
    v = unit(3)
    with pytest.raises(ValueError):
        ContrastiveBatch(v, v, torch.zeros(3, 3, dtype=torch.bool))
    with pytest.raises(ValueError):
        ContrastiveBatch(v, v, torch.eye(3, dtype=torch.bool), hard_pairs={0: 2, 1: 2})


def test_infonce_saturates():
    eye = torch.eye(4, dtype=torch.float64)
    assert infonce_loss(eye, eye, tau=1e-3).item() < 1e-12


def test_infonce_against_sums():
    v, t = unit(4, seed=5), unit(4, seed=6)
    assert infonce_loss(v, t, 0.2).item() == pytest.approx(infonce_by_sums(v.numpy(), t.numpy(), 0.2), abs=1e-10)


def test_reduction_identity():
    v, t = unit(6, seed=7), unit(6, seed=8)
    ego = egonce_loss(ContrastiveBatch.diagonal(v, t), 0.07, symmetric=False)
    info = infonce_loss(v, t, 0.07, symmetric=False)
    assert abs(ego.item() - info.item()) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 7), seed=st.integers(0, 500))
def test_anchor_permutation_invariance(n, seed):
    v, t = unit(n, seed=seed), unit(n, seed=seed + 1)
    pos = random_positives(n, seed)
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed))
    a = egonce_loss(ContrastiveBatch(v, t, pos), 0.1)
    b = egonce_loss(ContrastiveBatch(v[perm], t[perm], pos[perm][:, perm]), 0.1)
    assert abs(a.item() - b.item()) <= 1e-12


def test_directional_derivatives():
    # loss as a function of the raw similarity matrix
    n, tau = 5, 0.4
    pos = random_positives(n, 3)
    s = (unit(n, seed=9) @ unit(n, seed=10).T).requires_grad_()

    def loss_of(sim):
        numer = torch.logsumexp((sim / tau).masked_fill(~pos, -math.inf), 1)
        return (torch.logsumexp(sim / tau, 1) - numer).mean()

    # same expression as egonce_loss once sim = V T^T
    eye = torch.eye(n, dtype=torch.float64)
    ref = egonce_loss(ContrastiveBatch(s.detach(), eye, pos), tau, symmetric=False)
    assert loss_of(s).item() == pytest.approx(ref.item(), abs=1e-12)
    h = 1e-5
    for i in range(n):
        for k in range(n):
            bump = torch.zeros_like(s)
            bump[i, k] = h
            delta = (loss_of(s.detach() + bump) - loss_of(s.detach() - bump)).item() / (2 * h)
            if pos[i, k]:
                assert delta < 0
            else:
                assert delta > 0


def test_hard_negative_raises_anchor_loss():
    v = unit(3, seed=11)
    t = unit(3, seed=12)
    base = egonce_loss(ContrastiveBatch(v, t, torch.eye(3, dtype=torch.bool)), 0.1, symmetric=False)
    # hard negative for anchor 0: text nearly identical to v_0, video far away
    neg_t = F.normalize(v[0] + 0.01 * t[0], dim=0)
    v2 = torch.cat([v, -v[:1]])
    t2 = torch.cat([t, neg_t[None]])
    pos2 = torch.eye(4, dtype=torch.bool)
    aug = ContrastiveBatch(v2, t2, pos2, hard_pairs={0: 3}, n_original=3)
    logits = v2 @ t2.T / 0.1
    per_anchor = torch.logsumexp(logits, 1) - logits.diagonal()
    base_logits = v @ t.T / 0.1
    base_anchor = torch.logsumexp(base_logits, 1) - base_logits.diagonal()
    assert per_anchor[0] > base_anchor[0]
    assert egonce_loss(aug, 0.1, symmetric=False).item() == pytest.approx(per_anchor.mean().item(), abs=1e-12)
    assert base.item() == pytest.approx(base_anchor.mean().item(), abs=1e-12)


def test_contrastive_gradients():
    n = 4
    pos = random_positives(n, 1)
    v, t = unit(n, seed=13).requires_grad_(), unit(n, seed=14).requires_grad_()
    assert torch.autograd.gradcheck(lambda a, b: egonce_loss(ContrastiveBatch(a, b, pos), 0.3), (v, t),
                                    eps=1e-4, atol=1e-6, rtol=1e-4)
    assert torch.autograd.gradcheck(lambda a, b: infonce_loss(a, b, 0.3), (v, t), eps=1e-4, atol=1e-6, rtol=1e-4)


def _head(d=3, weight=None, bias=0.0):
    head = torch.nn.Linear(d, 1).double()
    with torch.no_grad():
        head.weight.copy_(torch.zeros(1, d) if weight is None else weight)
        head.bias.fill_(bias)
    return head


def test_vtm_zero_logit_is_ln2():
    feats = torch.randn(6, 3, dtype=torch.float64)
    labels = torch.tensor([1, 0, 1, 0, 1, 0.0], dtype=torch.float64)
    assert vtm_loss(feats, labels, _head()).item() == pytest.approx(math.log(2), abs=1e-15)


def test_vtm_saturated():
    feats = torch.tensor([[1.0], [-1.0]], dtype=torch.float64)
    head = _head(1, torch.tensor([[20.0]]))
    assert vtm_loss(feats, torch.tensor([1.0, 0.0], dtype=torch.float64), head).item() < 1e-8


def test_vtm_against_stable_oracle():
    g = torch.Generator().manual_seed(0)
    feats = torch.randn(8, 3, generator=g, dtype=torch.float64) * 5
    labels = (torch.rand(8, generator=g) < 0.5).double()
    head = _head(3, torch.randn(1, 3, generator=g, dtype=torch.float64), 0.3)
    logits = head(feats).squeeze(-1).tolist()
    assert vtm_loss(feats, labels, head).item() == pytest.approx(stable_bce(logits, labels.tolist()), abs=1e-10)


def test_vtm_length_mismatch():
    with pytest.raises(ValueError):
        vtm_loss(torch.zeros(3, 2), torch.zeros(2), _head(2))


def test_vtm_and_mlm_gradients():
    g = torch.Generator().manual_seed(1)
    feats = torch.randn(6, 3, generator=g, dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([1, 0, 1, 1, 0, 0.0], dtype=torch.float64)
    head = _head(3, torch.randn(1, 3, generator=g, dtype=torch.float64), 0.1)
    assert torch.autograd.gradcheck(lambda f: vtm_loss(f, labels, head), (feats,), eps=1e-4, atol=1e-6, rtol=1e-4)
    logits = torch.randn(2, 5, 7, generator=g, dtype=torch.float64, requires_grad=True)
    tgt = torch.full((2, 5), IGNORE_INDEX)
    tgt[0, 1], tgt[1, 3] = 4, 2
    assert torch.autograd.gradcheck(lambda x: mlm_loss(x, tgt), (logits,), eps=1e-4, atol=1e-6, rtol=1e-4)


SPECIAL = (0, 1, 2, 3, 4)


def test_mlm_uniform_logits_give_log_vocab():
    vocab = 30
    ids = torch.randint(5, vocab, (4, 9), generator=torch.Generator().manual_seed(0))
    _, labels = mask_tokens(ids, 0.15, vocab, SPECIAL, 3, torch.Generator().manual_seed(1))
    assert mlm_loss(torch.zeros(4, 9, vocab), labels).item() == pytest.approx(math.log(vocab), abs=1e-6)


def test_mask_one_of_five():
    ids = torch.tensor([[1, 10, 11, 12, 13, 14, 2]])
    _, labels = mask_tokens(ids, 0.15, 20, SPECIAL, 3, torch.Generator().manual_seed(0))
    assert int((labels != IGNORE_INDEX).sum()) == 1
    assert labels[0, 0] == IGNORE_INDEX and labels[0, -1] == IGNORE_INDEX


def test_mask_is_seeded():
    ids = torch.randint(5, 40, (6, 10), generator=torch.Generator().manual_seed(2))
    runs = [mask_tokens(ids, 0.3, 40, SPECIAL, 3, torch.Generator().manual_seed(9)) for _ in range(2)]
    assert torch.equal(runs[0][0], runs[1][0]) and torch.equal(runs[0][1], runs[1][1])
    # golden mask positions for this seed
    assert (runs[0][1] != IGNORE_INDEX).nonzero().tolist() == [
        [0, 0], [0, 5], [0, 8], [1, 4], [1, 5], [1, 7], [2, 2], [2, 6], [2, 7],
        [3, 2], [3, 3], [3, 8], [4, 1], [4, 2], [4, 8], [5, 1], [5, 6], [5, 9]]


def test_mask_corruption_split():
    ids = torch.randint(5, 50, (400, 20), generator=torch.Generator().manual_seed(3))
    corrupted, labels = mask_tokens(ids, 0.5, 50, SPECIAL, 3, torch.Generator().manual_seed(4))
    sel = labels != IGNORE_INDEX
    frac_mask = (corrupted[sel] == 3).float().mean().item()
    assert 0.77 < frac_mask < 0.83
    assert bool((corrupted[~sel] == ids[~sel]).all())


def test_mask_needs_maskable_tokens():
    with pytest.raises(ValueError):
        mask_tokens(torch.tensor([[1, 2, 0]]), 0.15, 10, SPECIAL, 3, torch.Generator())
    with pytest.raises(ValueError):
        mlm_loss(torch.zeros(1, 2, 5), torch.full((1, 2), IGNORE_INDEX))

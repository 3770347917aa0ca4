import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from abxi.errors import DataError, NumericalError
from abxi.model import ModelConfig
from abxi.objective import info_nce, info_nce_from_scores, sample_negatives, sample_position_candidates, total_loss
from oracles import brute_info_nce


def test_sample_negatives_contract(rng):
    history = {3, 5, 7}
    cs = sample_negatives(4, history, range(1, 21), 10, rng, domain="A")
    assert len(cs.negatives) == 10
    assert len(set(cs.negatives.tolist())) == 10
    assert not set(cs.negatives.tolist()) & history
    assert 4 not in cs.negatives
    assert cs.items[0] == 4


def test_sample_negatives_forced_pool(rng):
    cs = sample_negatives(1, [2], [1, 2, 3, 4, 5], 3, rng)
    assert sorted(cs.negatives.tolist()) == [3, 4, 5]


def test_sample_negatives_insufficient_pool(rng):
    with pytest.raises(DataError, match="3 items"):
        sample_negatives(1, [2], [1, 2, 3, 4, 5], 4, rng)


def test_sample_negatives_is_roughly_uniform():
    rng = np.random.default_rng(0)
    counts = np.zeros(11)
    for _ in range(4000):
        counts[sample_negatives(0, [], range(1, 11), 3, rng).negatives] += 1
    # each of 10 items expected 1200 times
    assert np.abs(counts[1:] - 1200).max() < 150


def test_default_negative_count():
    assert ModelConfig(n_items=1).n_neg == 128


def test_position_candidates_only_at_supervised_slots(rng):
    targets = np.array([11, 2, 12, 3])
    masks = {"A": np.array([False, True, False, True]), "B": np.array([False, False, True, False])}
    pools = {"A": np.arange(4, 10), "B": np.arange(13, 20)}
    c = sample_position_candidates(targets, masks, pools, 3, rng)
    assert c["A"][[1, 3], 0].tolist() == [2, 3]
    assert np.all(c["A"][[0, 2]] == 0)
    assert c["B"][2, 0] == 12 and np.all(np.isin(c["B"][2, 1:], pools["B"]))


def test_info_nce_single_candidate_is_zero():
    h = torch.tensor([0.3, -1.0], dtype=torch.float64)
    e = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
    assert info_nce(h, e[0], e, 0.75).item() == 0.0


def test_info_nce_uniform_scores():
    h = torch.zeros(4, dtype=torch.float64)
    E = torch.randn(129, 4, dtype=torch.float64)
    assert info_nce(h, E[0], E, 0.75).item() == pytest.approx(math.log(129), abs=1e-12)
    assert math.log(129) == pytest.approx(4.85981, abs=1e-5)


def test_info_nce_hand_value():
    h = torch.tensor([1.0, 0.0], dtype=torch.float64)
    E = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    assert info_nce(h, E[0], E, 1.0).item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert math.log(1 + math.exp(-1)) == pytest.approx(0.313262, abs=1e-6)


def test_info_nce_rejects_non_finite():
    E = torch.tensor([[1.0, float("nan")]], dtype=torch.float64)
    with pytest.raises(NumericalError):
        info_nce(torch.ones(2, dtype=torch.float64), E[0], E, 1.0)


def test_info_nce_requires_positive_first():
    E = torch.eye(2, dtype=torch.float64)
    with pytest.raises(ValueError):
        info_nce(torch.ones(2, dtype=torch.float64), E[1], E, 1.0)


def test_info_nce_matches_high_precision_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        d, n = int(rng.integers(1, 9)), int(rng.integers(1, 20))
        h = rng.normal(size=d) * 3
        E = rng.normal(size=(n + 1, d)) * 3
        tau = float(rng.uniform(0.1, 2.0))
        got = info_nce(torch.tensor(h), torch.tensor(E[0]), torch.tensor(E), tau).item()
        assert got == pytest.approx(brute_info_nce(E @ h, tau), abs=1e-10)


scores_st = st.lists(st.floats(-20, 20), min_size=2, max_size=30)


@settings(max_examples=200, deadline=None)
@given(scores_st, st.floats(-50, 50), st.floats(0.1, 5))
def test_shift_invariance(scores, shift, tau):
    s = torch.tensor(scores, dtype=torch.float64)
    a = info_nce_from_scores(s, tau).item()
    b = info_nce_from_scores(s + shift, tau).item()
    assert a == pytest.approx(b, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(scores_st, st.floats(0.01, 5), st.floats(0.1, 5))
def test_monotone_in_positive_score_and_positive(scores, bump, tau):
    s = torch.tensor(scores, dtype=torch.float64)
    base = info_nce_from_scores(s, tau).item()
    s2 = s.clone()
    s2[0] += bump
    after = info_nce_from_scores(s2, tau).item()
    assert after <= base
    if base > 1e-6:
        assert after < base
    assert after >= 0


def _loss_inputs(mask_A, mask_B, scores_A, scores_B, d=3):
    """Build hidden states / embeddings whose dot products equal given scores.

    Candidate ``k`` at a supervised slot gets embedding ``e_k`` with ``h @ e_k``
    equal to the requested score via ``h = unit vector``.
    """
    B, T = mask_A.shape
    rows = [np.zeros(d)]
    cA = np.zeros((B, T, 3), dtype=np.int64)
    cB = np.zeros((B, T, 3), dtype=np.int64)
    for cands, mask, scores in ((cA, mask_A, scores_A), (cB, mask_B, scores_B)):
        it = iter(scores)
        for b, t in zip(*np.nonzero(mask)):
            for k, sc in enumerate(next(it)):
                rows.append(np.array([sc, 0.0, 0.0]))
                cands[b, t, k] = len(rows) - 1
    h = torch.zeros(B, T, d, dtype=torch.float64)
    h[..., 0] = 1.0
    return h, torch.tensor(np.array(rows)), torch.from_numpy(cA), torch.from_numpy(cB)


def nce(scores, tau):
    z = np.array(scores) / tau
    return float(np.log(np.exp(z).sum()) - z[0])


def test_total_loss_hand_values():
    tau = 0.75
    mask_A = torch.tensor([[True, False, True, False]])
    mask_B = torch.tensor([[False, True, False, False]])
    sA = [[1.0, 0.0, 0.5], [0.2, 0.3, -1.0]]
    sB = [[2.0, 1.0, 1.0]]
    h, emb, cA, cB = _loss_inputs(mask_A.numpy(), mask_B.numpy(), sA, sB)
    got = total_loss(h, h, mask_A, mask_B, cA, cB, emb, tau).item()
    expected = (nce(sA[0], tau) + nce(sA[1], tau)) / 2 + nce(sB[0], tau)
    assert got == pytest.approx(expected, abs=1e-12)


def test_total_loss_without_B_positions():
    tau = 1.0
    mask_A = torch.tensor([[True, True]])
    mask_B = torch.tensor([[False, False]])
    sA = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    h, emb, cA, cB = _loss_inputs(mask_A.numpy(), mask_B.numpy(), sA, [])
    got = total_loss(h, h, mask_A, mask_B, cA, cB, emb, tau).item()
    assert got == pytest.approx((nce(sA[0], tau) + nce(sA[1], tau)) / 2, abs=1e-12)


def test_total_loss_averages_over_sequences():
    tau = 1.0
    mask_A = torch.tensor([[True], [True]])
    mask_B = torch.tensor([[False], [True]])
    sA = [[1.0, 0.0, 0.0], [3.0, 0.0, 1.0]]
    sB = [[0.0, 0.5, 0.5]]
    h, emb, cA, cB = _loss_inputs(mask_A.numpy(), mask_B.numpy(), sA, sB)
    got = total_loss(h, h, mask_A, mask_B, cA, cB, emb, tau).item()
    expected = (nce(sA[0], tau) + nce(sA[1], tau) + nce(sB[0], tau)) / 2
    assert got == pytest.approx(expected, abs=1e-12)

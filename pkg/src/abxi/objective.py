"""Negative sampling and the sampled InfoNCE loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import Domain
from .errors import DataError, NumericalError


@dataclass(frozen=True)
class CandidateSet:
    positive: int
    negatives: np.ndarray
    domain: Domain | None = None

    @property
    def items(self) -> np.ndarray:
        """Positive first, then negatives."""
        return np.concatenate([[self.positive], self.negatives]).astype(np.int64)


def negative_pool(positive: int, user_history, domain_items) -> np.ndarray:
    excluded = np.append(np.fromiter(user_history, dtype=np.int64), positive)
    return np.setdiff1d(np.asarray(domain_items, dtype=np.int64), excluded)


def sample_negatives(positive: int, user_history, domain_items, n_neg: int,
                     rng: np.random.Generator, domain=None) -> CandidateSet:
    """Uniformly draw ``n_neg`` distinct items from the domain, excluding history and positive."""
    pool = negative_pool(positive, user_history, domain_items)
    return CandidateSet(int(positive), _draw(pool, n_neg, rng),
                        Domain.parse(domain) if domain is not None else None)


def _draw(pool: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(pool) < n:
        raise DataError(f"negative pool has {len(pool)} items, need {n}")
    return rng.choice(pool, size=n, replace=False)


def sample_position_candidates(targets: np.ndarray, masks: dict, pools: dict, n_neg: int,
                               rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Candidate ids ``(T, 1 + n_neg)`` per domain for one sequence; unsupervised rows are 0.

    ``pools`` maps domain name to the user's negative pool (domain items minus
    the user's full history), so the positive is excluded automatically.
    """
    T = len(targets)
    out = {}
    for name in ("A", "B"):
        cands = np.zeros((T, 1 + n_neg), dtype=np.int64)
        pool = pools[name]
        for t in np.flatnonzero(masks[name]):
            cands[t, 0] = targets[t]
            cands[t, 1:] = _draw(pool, n_neg, rng)
        out[name] = cands
    return out


def _check_finite(*tensors):
    for x in tensors:
        if not torch.isfinite(x).all():
            raise NumericalError("non-finite input to InfoNCE")


def info_nce_from_scores(scores: torch.Tensor, tau: float) -> torch.Tensor:
    """Per-row loss for ``scores[..., 0]`` being the positive."""
    z = scores / tau
    return torch.logsumexp(z, dim=-1) - z[..., 0]


def info_nce(h, e_pos, E_cands, tau: float) -> torch.Tensor:
    """``-log softmax`` of the positive's score; ``e_pos`` must be row 0 of ``E_cands``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    h, e_pos, E_cands = (torch.as_tensor(x, dtype=torch.float64) if not torch.is_tensor(x) else x
                         for x in (h, e_pos, E_cands))
    _check_finite(h, e_pos, E_cands)
    if not torch.equal(E_cands[0], e_pos):
        raise ValueError("e_pos must be the first row of E_cands")
    return info_nce_from_scores(E_cands @ h, tau)


def total_loss(rec_A: torch.Tensor, rec_B: torch.Tensor, mask_A: torch.Tensor, mask_B: torch.Tensor,
               cands_A: torch.Tensor, cands_B: torch.Tensor, item_weight: torch.Tensor,
               tau: float) -> torch.Tensor:
    """Mean InfoNCE over supervised A positions plus the same for B, averaged over sequences.

    A sequence with no supervised position in a domain contributes 0 for it.
    """
    n_seq = rec_A.shape[0]
    total = rec_A.new_zeros(n_seq)
    for rec, mask, cands in ((rec_A, mask_A, cands_A), (rec_B, mask_B, cands_B)):
        b, t = mask.nonzero(as_tuple=True)
        if len(b) == 0:
            continue
        h = rec[b, t]
        emb = item_weight[cands[b, t]]
        scores = torch.einsum("md,mkd->mk", h, emb)
        f = info_nce_from_scores(scores, tau)
        sums = rec.new_zeros(n_seq).index_add(0, b, f)
        counts = mask.sum(dim=1).to(rec.dtype)
        total = total + torch.where(counts > 0, sums / counts.clamp(min=1), torch.zeros_like(sums))
    return total.mean()

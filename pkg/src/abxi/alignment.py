"""Cross-domain / domain-specific sequence construction and batching.

All sequences here share one target stream: position ``t`` of ``seq_X``,
``seq_A`` and ``seq_B`` is supervised by ``gt_X[t]``. Domain-specific inputs
are re-aligned so that the token sitting at a domain-``d`` target slot is the
latest domain-``d`` item seen so far.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Domain

ALIGNMENTS = ("task", "timestamp")


@dataclass(frozen=True, eq=False)
class Tokens:
    """Parallel item / domain arrays. Item 0 is PAD and pairs with Domain.PAD."""

    items: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64)
        domains = np.asarray(self.domains, dtype=np.int8)
        if items.shape != domains.shape or items.ndim != 1:
            raise ValueError("items and domains must be 1-d arrays of equal length")
        if np.any((items == 0) != (domains == Domain.PAD)):
            raise ValueError("item 0 must coincide with the PAD domain")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "domains", domains)

    @classmethod
    def from_pairs(cls, pairs) -> "Tokens":
        pairs = list(pairs)
        items = [int(i) for i, _ in pairs]
        doms = [int(Domain[d] if isinstance(d, str) else d) for _, d in pairs]
        return cls(np.array(items, dtype=np.int64), np.array(doms, dtype=np.int8))

    @classmethod
    def pad(cls, n: int) -> "Tokens":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int8))

    def to_pairs(self) -> list[tuple[int, str]]:
        return [(int(i), Domain(int(d)).name) for i, d in zip(self.items, self.domains)]

    def __len__(self):
        return len(self.items)

    def __getitem__(self, key) -> "Tokens":
        if isinstance(key, slice):
            return Tokens(self.items[key], self.domains[key])
        raise TypeError("Tokens supports slicing only")

    def __eq__(self, other):
        if not isinstance(other, Tokens):
            return NotImplemented
        return np.array_equal(self.items, other.items) and np.array_equal(self.domains, other.domains)

    def __repr__(self):
        body = ", ".join("PAD" if d == 0 else f"{Domain(int(d)).name}{i}" for i, d in zip(self.items, self.domains))
        return f"Tokens([{body}])"


def make_cross_sequences(merged: Tokens) -> tuple[Tokens, Tokens]:
    """Shift a merged history into (input, target) streams."""
    if len(merged) < 2:
        raise ValueError(f"need at least 2 interactions, got {len(merged)}")
    return merged[:-1], merged[1:]


def mask_ground_truth(gt_x: Tokens, domain) -> Tokens:
    keep = gt_x.domains == Domain.parse(domain)
    return Tokens(np.where(keep, gt_x.items, 0), np.where(keep, gt_x.domains, 0))


def task_align(seq_x: Tokens, gt_d: Tokens, domain) -> tuple[Tokens, np.ndarray]:
    """Place the latest domain-``d`` input at every domain-``d`` target slot.

    Returns the aligned sequence and the loss mask. Target slots with no
    earlier domain-``d`` input stay PAD and are left out of the loss.
    """
    if len(seq_x) != len(gt_d):
        raise ValueError(f"length mismatch: seq {len(seq_x)} vs gt {len(gt_d)}")
    dom = Domain.parse(domain)
    n = len(seq_x)
    items = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    last = 0
    for t in range(n):
        if seq_x.domains[t] == dom:
            last = seq_x.items[t]
        if gt_d.items[t] != 0 and last != 0:
            items[t] = last
            mask[t] = True
    return Tokens(items, np.where(mask, int(dom), 0)), mask


def timestamp_align(seq_x: Tokens, domain) -> Tokens:
    """In-place domain masking that keeps the original timeline."""
    keep = seq_x.domains == Domain.parse(domain)
    return Tokens(np.where(keep, seq_x.items, 0), np.where(keep, seq_x.domains, 0))


def assign_positions(seq: Tokens, max_len: int) -> np.ndarray:
    """Reverse-chronological indices over non-PAD tokens; PAD gets ``max_len``."""
    real = seq.items != 0
    # count of real tokens strictly after each slot
    after = np.cumsum(real[::-1])[::-1] - real
    return np.where(real, after, max_len).astype(np.int64)


@dataclass(eq=False)
class SequenceBundle:
    seq_X: Tokens
    seq_A: Tokens
    seq_B: Tokens
    gt_X: Tokens
    gt_A: Tokens
    gt_B: Tokens
    pos_X: np.ndarray
    pos_A: np.ndarray
    pos_B: np.ndarray
    loss_mask_A: np.ndarray
    loss_mask_B: np.ndarray

    def __len__(self):
        return len(self.seq_X)

    def to_dict(self) -> dict:
        out = {}
        for name in ("seq_X", "seq_A", "seq_B", "gt_X", "gt_A", "gt_B"):
            out[name] = getattr(self, name).to_pairs()
        for name in ("pos_X", "pos_A", "pos_B"):
            out[name] = getattr(self, name).tolist()
        out["loss_mask_A"] = self.loss_mask_A.tolist()
        out["loss_mask_B"] = self.loss_mask_B.tolist()
        return out


def _timestamp_mask(seq_d: Tokens, gt_d: Tokens) -> np.ndarray:
    seen = np.cumsum(seq_d.items != 0) > 0
    return (gt_d.items != 0) & seen


def build_bundle(merged: Tokens, max_len: int, alignment: str = "task") -> SequenceBundle:
    """Build all aligned streams for one merged history (at most ``max_len`` long)."""
    if alignment not in ALIGNMENTS:
        raise ValueError(f"unknown alignment {alignment!r}")
    if len(merged) > max_len:
        merged = merged[-max_len:]
    seq_x, gt_x = make_cross_sequences(merged)
    gt_a = mask_ground_truth(gt_x, Domain.A)
    gt_b = mask_ground_truth(gt_x, Domain.B)
    if alignment == "task":
        seq_a, mask_a = task_align(seq_x, gt_a, Domain.A)
        seq_b, mask_b = task_align(seq_x, gt_b, Domain.B)
    else:
        seq_a = timestamp_align(seq_x, Domain.A)
        seq_b = timestamp_align(seq_x, Domain.B)
        mask_a = _timestamp_mask(seq_a, gt_a)
        mask_b = _timestamp_mask(seq_b, gt_b)
    return SequenceBundle(
        seq_x, seq_a, seq_b, gt_x, gt_a, gt_b,
        assign_positions(seq_x, max_len),
        assign_positions(seq_a, max_len),
        assign_positions(seq_b, max_len),
        mask_a, mask_b,
    )


@dataclass(eq=False)
class Batch:
    """Left-padded stack of bundles; every array is (batch, T)."""

    items_X: np.ndarray
    items_A: np.ndarray
    items_B: np.ndarray
    pos_X: np.ndarray
    pos_A: np.ndarray
    pos_B: np.ndarray
    targets: np.ndarray
    loss_mask_A: np.ndarray
    loss_mask_B: np.ndarray

    def __len__(self):
        return len(self.items_X)


def collate(bundles: list[SequenceBundle], max_len: int, length: int | None = None) -> Batch:
    T = length or max(len(b) for b in bundles)
    n = len(bundles)

    def stack(get, fill, dtype):
        out = np.full((n, T), fill, dtype=dtype)
        for i, b in enumerate(bundles):
            v = get(b)
            if len(v) > T:
                raise ValueError(f"bundle longer than batch length {T}")
            if len(v):
                out[i, T - len(v):] = v
        return out

    return Batch(
        stack(lambda b: b.seq_X.items, 0, np.int64),
        stack(lambda b: b.seq_A.items, 0, np.int64),
        stack(lambda b: b.seq_B.items, 0, np.int64),
        stack(lambda b: b.pos_X, max_len, np.int64),
        stack(lambda b: b.pos_A, max_len, np.int64),
        stack(lambda b: b.pos_B, max_len, np.int64),
        stack(lambda b: b.gt_X.items, 0, np.int64),
        stack(lambda b: b.loss_mask_A, False, bool),
        stack(lambda b: b.loss_mask_B, False, bool),
    )

"""Synthetic dual-domain interaction logs with known generative rules.

Items are named ``A0000``/``B0000``; their numeric suffix is the item's local
index, split into clusters of ``cluster_size`` consecutive indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Domain, Interaction

PROFILES = ("shared-interest", "mismatch-heavy", "random")


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 200
    cluster_size: int = 10
    n_interests: int = 10
    min_len: int = 12
    max_len: int = 30

    @property
    def n_clusters(self) -> int:
        return self.n_items // self.cluster_size


def item_name(domain: Domain, index: int) -> str:
    return f"{domain.name}{index:04d}"


def shared_interest_next(last_domain: Domain, last_index: int, interest: int, target: Domain,
                         spec: SyntheticSpec = SyntheticSpec()) -> int:
    """Deterministic next item given the user's interest and the last item (any domain)."""
    c = last_index // spec.cluster_size
    shift = 1 if target is Domain.A else 2
    cluster = (c + shift * (interest + 1)) % spec.n_clusters
    slot = (interest + (3 if target is Domain.B else 0)) % spec.cluster_size
    return cluster * spec.cluster_size + slot


def mismatch_next(prev_same: int, step: int, spec: SyntheticSpec = SyntheticSpec()) -> int:
    """Next item continues the user's walk through the same domain."""
    return (prev_same + step) % spec.n_items


def generate_synthetic(profile: str, n_users: int, seed: int = 0,
                       spec: SyntheticSpec = SyntheticSpec()) -> list[Interaction]:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    rng = np.random.default_rng(seed)
    out = []
    width = len(str(max(n_users - 1, 1)))
    for u in range(n_users):
        uid = f"u{u:0{width}d}"
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        for t, (dom, idx) in enumerate(_user_sequence(profile, length, rng, spec)):
            out.append(Interaction(uid, item_name(dom, idx), dom, 1_000_000 + 100 * u + t))
    return out


def _user_sequence(profile, length, rng, spec):
    if profile == "random":
        doms = rng.integers(1, 3, size=length)
        idx = rng.integers(0, spec.n_items, size=length)
        return [(Domain(int(d)), int(i)) for d, i in zip(doms, idx)]

    if profile == "shared-interest":
        interest = int(rng.integers(spec.n_interests))
        dom = Domain(int(rng.integers(1, 3)))
        idx = int(rng.integers(spec.n_items))
        seq = [(dom, idx)]
        for _ in range(length - 1):
            target = Domain(int(rng.integers(1, 3)))
            idx = shared_interest_next(dom, idx, interest, target, spec)
            dom = target
            seq.append((dom, idx))
        # both domains must appear
        if len({d for d, _ in seq}) < 2:
            d, i = seq[-1]
            other = Domain.B if d is Domain.A else Domain.A
            seq[-1] = (other, shared_interest_next(*seq[-2], interest, other, spec))
        return seq

    # mismatch-heavy: strict alternation, per-domain walks with user-specific steps
    steps = {Domain.A: int(rng.integers(1, spec.n_interests + 1)),
             Domain.B: int(rng.integers(1, spec.n_interests + 1))}
    last = {Domain.A: int(rng.integers(spec.n_items)), Domain.B: int(rng.integers(spec.n_items))}
    dom = Domain(int(rng.integers(1, 3)))
    seq = []
    started = set()
    for _ in range(length):
        if dom in started:
            last[dom] = mismatch_next(last[dom], steps[dom], spec)
        started.add(dom)
        seq.append((dom, last[dom]))
        dom = Domain.B if dom is Domain.A else Domain.A
    return seq

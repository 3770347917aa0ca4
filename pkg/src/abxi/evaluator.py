"""Leave-one-out ranking evaluation against sampled same-domain negatives."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import torch

from .alignment import Tokens, build_bundle, collate
from .corpus import Domain, Split
from .objective import negative_pool

METRICS = ("HR@5", "HR@10", "NDCG@10", "MRR")
MODES = ("val", "test")


def hr_at_k(rank, k: int):
    return (np.asarray(rank) <= k).astype(float) if np.ndim(rank) else float(rank <= k)


def ndcg_at_k(rank, k: int):
    r = np.asarray(rank, dtype=float)
    out = np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)
    return out if np.ndim(rank) else float(out)


def mrr(rank):
    out = 1.0 / np.asarray(rank, dtype=float)
    return out if np.ndim(rank) else float(out)


def exact_mean(values) -> float:
    """Correctly rounded mean, independent of summation order."""
    values = np.asarray(values, dtype=float)
    return float(sum(map(Fraction, values.tolist()), Fraction(0)) / len(values))


def metric_values(ranks) -> dict[str, float]:
    ranks = np.asarray(ranks)
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    return {
        "HR@5": exact_mean(hr_at_k(ranks, 5)),
        "HR@10": exact_mean(hr_at_k(ranks, 10)),
        "NDCG@10": exact_mean(ndcg_at_k(ranks, 10)),
        "MRR": exact_mean(mrr(ranks)),
    }


def rank_of_positive(scores) -> np.ndarray:
    """Pessimistic rank of column 0: ties with negatives count against it."""
    s = torch.as_tensor(scores)
    return (1 + (s[..., 1:] >= s[..., :1]).sum(dim=-1)).cpu().numpy()


def _user_key(user_id: str) -> int:
    return zlib.crc32(user_id.encode("utf-8"))


def eval_negatives(split: Split, mode: str, seed: int, n_negatives: int = 999) -> list[np.ndarray]:
    """Fixed candidate negatives per user; depends only on (seed, user, mode)."""
    corpus = split.corpus
    out = []
    for i, user in enumerate(split.train):
        item, dom = (split.val_gt if mode == "val" else split.test_gt)[i]
        rng = np.random.default_rng([seed, _user_key(user.user_id), MODES.index(mode)])
        pool = negative_pool(item, split.histories[i], corpus.domain_items(dom))
        if len(pool) < n_negatives:
            raise ValueError(f"user {user.user_id!r}: only {len(pool)} eval negatives available, need {n_negatives}")
        out.append(rng.choice(pool, size=n_negatives, replace=False))
    return out


def eval_history(split: Split, index: int, mode: str) -> Tokens:
    """Merged input history ending with the ground truth being predicted."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    u = split.train[index]
    items, doms = list(u.items), list(u.domains)
    if mode == "test":
        it, d = split.val_gt[index]
        items.append(it)
        doms.append(int(d))
    it, d = (split.val_gt if mode == "val" else split.test_gt)[index]
    items.append(it)
    doms.append(int(d))
    return Tokens(np.array(items), np.array(doms))


@dataclass
class EvalReport:
    """Per-domain metric means; ``None`` marks a domain with no evaluated GT."""

    metrics: dict
    counts: dict
    skipped: dict
    seeds: list
    std: dict | None = None
    mode: str = "test"
    config: dict | None = None
    ranks: dict | None = field(default=None, repr=False, compare=False)

    def mrr_sum(self) -> float:
        return sum(m["MRR"] for m in self.metrics.values() if m is not None)

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "seeds": list(self.seeds),
            "metrics": self.metrics,
            "std": self.std,
            "counts": self.counts,
            "skipped": self.skipped,
        }
        if self.config is not None:
            out["config"] = self.config
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(data["metrics"], data["counts"], data["skipped"], data["seeds"],
                   data.get("std"), data.get("mode", "test"), data.get("config"))

    def to_table(self, label: str = "ABXI", domain_names=("A", "B")) -> str:
        return format_table([(label, self)], domain_names)


def format_cell(mean, std=None) -> str:
    if mean is None:
        return "-"
    return f"{mean:.4f}" if std is None else f"{mean:.4f}±{std:.4f}"


def format_table(rows, domain_names=("A", "B")) -> str:
    """Aligned text table: one row per labelled report, four metrics per domain."""
    header = ["Method"] + [f"{n} {m}" for n in domain_names for m in METRICS]
    lines = []
    for label, rep in rows:
        cells = [label]
        for dom in ("A", "B"):
            m = rep.metrics.get(dom)
            s = (rep.std or {}).get(dom)
            for name in METRICS:
                cells.append(format_cell(None if m is None else m[name],
                                         None if not s else s[name]))
        lines.append(cells)
    widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in lines])


@torch.no_grad()
def score_user(model, history: Tokens, negatives: np.ndarray) -> int | None:
    """Rank the last item of ``history`` among ``negatives``; ``None`` if it cannot be scored."""
    ranks = _score_many(model, [history], [negatives])
    return None if ranks[0] < 0 else int(ranks[0])


def _score_many(model, histories, negatives) -> np.ndarray:
    cfg = model.cfg
    bundles = [build_bundle(h, cfg.max_len, cfg.alignment) for h in histories]
    out = np.full(len(bundles), -1, dtype=np.int64)
    ok = []
    for i, b in enumerate(bundles):
        dom = Domain(int(b.gt_X.domains[-1]))
        mask = b.loss_mask_A if dom is Domain.A else b.loss_mask_B
        if mask[-1]:
            ok.append(i)
    if not ok:
        return out
    was_training = model.training
    model.eval()
    try:
        batch = collate([bundles[i] for i in ok], cfg.max_len)
        rec_A, rec_B = model.forward_batch(batch)
        doms = np.array([bundles[i].gt_X.domains[-1] for i in ok])
        h = torch.where(torch.from_numpy(doms == Domain.A)[:, None], rec_A[:, -1], rec_B[:, -1])
        cands = np.stack([np.concatenate([[bundles[i].gt_X.items[-1]], negatives[i]]) for i in ok])
        emb = model.item_emb.weight[torch.from_numpy(cands)]
        scores = torch.einsum("bd,bkd->bk", h, emb)
        out[ok] = rank_of_positive(scores)
    finally:
        model.train(was_training)
    return out


def evaluate(model, split: Split, mode: str = "test", seed: int = 3407, n_negatives: int = 999,
             batch_size: int = 256, negatives: list | None = None) -> EvalReport:
    """Rank every user's ground truth; metrics are averaged separately per GT domain."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if negatives is None:
        negatives = eval_negatives(split, mode, seed, n_negatives)
    gts = split.val_gt if mode == "val" else split.test_gt
    ranks = np.full(len(split), -1, dtype=np.int64)
    for start in range(0, len(split), batch_size):
        idx = range(start, min(start + batch_size, len(split)))
        hist = [eval_history(split, i, mode) for i in idx]
        ranks[start:start + len(hist)] = _score_many(model, hist, [negatives[i] for i in idx])
    return report_from_ranks(ranks, [d for _, d in gts], mode=mode, seeds=[seed])


def report_from_ranks(ranks, domains, mode="test", seeds=()) -> EvalReport:
    ranks = np.asarray(ranks)
    doms = np.array([int(Domain.parse(d)) for d in domains])
    metrics, counts, skipped, by_dom = {}, {}, {}, {}
    for d in (Domain.A, Domain.B):
        sel = doms == d
        valid = ranks[sel & (ranks >= 1)]
        counts[d.name] = int(len(valid))
        skipped[d.name] = int((sel & (ranks < 1)).sum())
        metrics[d.name] = metric_values(valid) if len(valid) else None
        by_dom[d.name] = valid
    return EvalReport(metrics, counts, skipped, list(seeds), mode=mode, ranks=by_dom)


def aggregate_reports(reports: list[EvalReport]) -> EvalReport:
    """Mean and sample standard deviation (n-1; 0 for a single report) across seeds."""
    if not reports:
        raise ValueError("no reports to aggregate")
    metrics, std = {}, {}
    for dom in ("A", "B"):
        vals = [r.metrics.get(dom) for r in reports]
        if any(v is None for v in vals):
            metrics[dom] = std[dom] = None
            continue
        metrics[dom], std[dom] = {}, {}
        for name in METRICS:
            xs = np.array([v[name] for v in vals])
            metrics[dom][name] = float(xs.mean())
            std[dom][name] = float(xs.std(ddof=1)) if len(xs) > 1 else 0.0
    seeds = [s for r in reports for s in r.seeds]
    first = reports[0]
    return EvalReport(metrics, first.counts, first.skipped, seeds, std, first.mode, first.config)


def harmonic_mrr(n_candidates: int) -> float:
    """Expected MRR of a uniformly random ranking over ``n_candidates``."""
    return sum(1.0 / r for r in range(1, n_candidates + 1)) / n_candidates


def harmonic_mrr_std(n_candidates: int) -> float:
    mean = harmonic_mrr(n_candidates)
    second = sum(1.0 / r ** 2 for r in range(1, n_candidates + 1)) / n_candidates
    return math.sqrt(second - mean ** 2)

"""Raw interaction ingestion, dual-domain filtering and leave-one-out splits."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from .errors import DataError, EmptyCorpusError, ParseError

FIELDS = ("user_id", "item_id", "domain", "timestamp")


class Domain(IntEnum):
    PAD = 0
    A = 1
    B = 2

    @classmethod
    def parse(cls, value) -> "Domain":
        if isinstance(value, Domain):
            return value
        try:
            dom = cls[str(value)]
        except KeyError:
            raise ValueError(f"unknown domain {value!r}") from None
        if dom is cls.PAD:
            raise ValueError("PAD is not a valid interaction domain")
        return dom


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    domain: Domain
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.domain not in (Domain.A, Domain.B):
            raise ValueError(f"invalid domain {self.domain!r}")


@dataclass
class UserSequence:
    """One user's chronological history; items are global indices (0 = PAD)."""

    user_id: str
    items: np.ndarray
    domains: np.ndarray
    timestamps: np.ndarray

    def __len__(self):
        return len(self.items)

    def __eq__(self, other):
        if not isinstance(other, UserSequence):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.domains, other.domains)
            and np.array_equal(self.timestamps, other.timestamps)
        )


@dataclass
class Corpus:
    """Filtered users plus the per-domain item vocabulary.

    Global item index layout: 0 is PAD, ``1..n_items_A`` are domain A items,
    ``n_items_A+1..n_items`` are domain B items.
    """

    users: list[UserSequence]
    item_ids_A: list[str]
    item_ids_B: list[str]

    @property
    def n_items_A(self) -> int:
        return len(self.item_ids_A)

    @property
    def n_items_B(self) -> int:
        return len(self.item_ids_B)

    @property
    def n_items(self) -> int:
        return self.n_items_A + self.n_items_B

    def domain_items(self, domain) -> np.ndarray:
        if Domain.parse(domain) is Domain.A:
            return np.arange(1, self.n_items_A + 1)
        return np.arange(self.n_items_A + 1, self.n_items + 1)

    def raw_item_id(self, index: int) -> str:
        if 1 <= index <= self.n_items_A:
            return self.item_ids_A[index - 1]
        if self.n_items_A < index <= self.n_items:
            return self.item_ids_B[index - self.n_items_A - 1]
        raise IndexError(index)

    def to_interactions(self) -> list[Interaction]:
        out = []
        for u in self.users:
            for it, dom, ts in zip(u.items, u.domains, u.timestamps):
                out.append(Interaction(u.user_id, self.raw_item_id(int(it)), Domain(int(dom)), int(ts)))
        return out

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.item_ids_A == other.item_ids_A
            and self.item_ids_B == other.item_ids_B
            and self.users == other.users
        )

    def stats(self) -> dict:
        """Counts laid out like the dataset statistics table."""
        per = {d: Counter() for d in ("A", "B")}
        a2b = b2a = 0
        for u in self.users:
            doms = u.domains
            for d in ("A", "B"):
                per[d]["interactions"] += int((doms == Domain[d]).sum())
            prev, nxt = doms[:-1], doms[1:]
            a2b += int(((prev == Domain.A) & (nxt == Domain.B)).sum())
            b2a += int(((prev == Domain.B) & (nxt == Domain.A)).sum())
            if len(u) >= 2:
                per[Domain(int(doms[-2])).name]["val_gts"] += 1
                per[Domain(int(doms[-1])).name]["test_gts"] += 1
        return {
            "users": len(self.users),
            "A": {
                "items": self.n_items_A,
                "interactions": per["A"]["interactions"],
                "val_gts": per["A"]["val_gts"],
                "test_gts": per["A"]["test_gts"],
                "transitions_out": a2b,
            },
            "B": {
                "items": self.n_items_B,
                "interactions": per["B"]["interactions"],
                "val_gts": per["B"]["val_gts"],
                "test_gts": per["B"]["test_gts"],
                "transitions_out": b2a,
            },
        }

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "item_ids_A": self.item_ids_A,
            "item_ids_B": self.item_ids_B,
            "users": [
                {
                    "user_id": u.user_id,
                    "items": u.items.tolist(),
                    "domains": u.domains.tolist(),
                    "timestamps": u.timestamps.tolist(),
                }
                for u in self.users
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Corpus":
        users = [
            UserSequence(
                u["user_id"],
                np.asarray(u["items"], dtype=np.int64),
                np.asarray(u["domains"], dtype=np.int8),
                np.asarray(u["timestamps"], dtype=np.int64),
            )
            for u in data["users"]
        ]
        return cls(users, list(data["item_ids_A"]), list(data["item_ids_B"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "Corpus":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt corpus file {path}: {exc}") from exc


@dataclass
class Split:
    """Leave-one-out split; ground truths are ``(item, domain)`` pairs."""

    corpus: Corpus
    train: list[UserSequence]
    val_gt: list[tuple[int, Domain]]
    test_gt: list[tuple[int, Domain]]
    histories: list[np.ndarray] = field(repr=False, default_factory=list)

    def __len__(self):
        return len(self.train)

    def gt_counts(self, which: str) -> dict[str, int]:
        gts = self.val_gt if which == "val" else self.test_gt
        c = Counter(d.name for _, d in gts)
        return {"A": c["A"], "B": c["B"]}


# ingestion -----------------------------------------------------------------


def _row_to_interaction(row: Mapping, line: int, domain_map: Mapping | None) -> Interaction:
    missing = [f for f in FIELDS if f not in row or row[f] is None or row[f] == ""]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(missing)}", line)
    dom = str(row["domain"])
    if domain_map:
        dom = domain_map.get(dom, dom)
    try:
        domain = Domain.parse(dom)
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    try:
        ts = int(row["timestamp"])
    except (TypeError, ValueError):
        raise ParseError(f"bad timestamp {row['timestamp']!r}", line) from None
    if ts < 0:
        raise ParseError(f"negative timestamp {ts}", line)
    return Interaction(str(row["user_id"]), str(row["item_id"]), domain, ts)


def load_interactions(source, domain_map: Mapping[str, str] | None = None) -> list[Interaction]:
    """Parse CSV (with header) or JSON-lines records.

    ``source`` may be a path, raw bytes, or a text/binary stream. Records are
    returned in input order; nothing is sorted or deduplicated.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_bytes().decode("utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    stripped = text.lstrip()
    if not stripped:
        return []

    out = []
    if stripped.startswith("{"):
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(row, dict):
                raise ParseError("expected a JSON object", lineno)
            out.append(_row_to_interaction(row, lineno, domain_map))
        return out

    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not set(FIELDS) <= set(reader.fieldnames):
        raise ParseError(f"CSV header must contain {','.join(FIELDS)}", 1)
    for row in reader:
        if None in row:
            raise ParseError("too many columns", reader.line_num)
        out.append(_row_to_interaction(row, reader.line_num, domain_map))
    return out


def write_interactions(interactions: Iterable[Interaction], fp: IO[str], fmt: str = "jsonl") -> None:
    if fmt == "jsonl":
        for it in interactions:
            fp.write(json.dumps({"user_id": it.user_id, "item_id": it.item_id,
                                 "domain": it.domain.name, "timestamp": it.timestamp}))
            fp.write("\n")
    elif fmt == "csv":
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(FIELDS)
        for it in interactions:
            w.writerow([it.user_id, it.item_id, it.domain.name, it.timestamp])
    else:
        raise ValueError(f"unknown format {fmt!r}")


# filtering -----------------------------------------------------------------


def _has_both(records) -> bool:
    doms = {r.domain for r in records}
    return Domain.A in doms and Domain.B in doms


def preprocess(
    log: list[Interaction],
    min_item_count: int = 5,
    max_len: int = 50,
    min_len: int = 3,
) -> Corpus:
    """Filter raw interactions into a dual-domain corpus.

    Order: keep users active in both domains, sort each user chronologically
    (stable on input order), drop items seen fewer than ``min_item_count``
    times among those users (single pass), keep the latest ``max_len``
    interactions, then drop users left without both domains or with fewer
    than ``min_len`` interactions.
    """
    if min_item_count < 1:
        raise ValueError("min_item_count must be >= 1")
    if max_len < 2:
        raise ValueError("max_len must be >= 2")

    by_user: dict[str, list[Interaction]] = defaultdict(list)
    for rec in log:
        by_user[rec.user_id].append(rec)

    kept = {u: recs for u, recs in by_user.items() if _has_both(recs)}
    for u in kept:
        # sorted() is stable, so equal timestamps keep input order
        kept[u] = sorted(kept[u], key=lambda r: r.timestamp)

    counts = Counter((r.domain, r.item_id) for recs in kept.values() for r in recs)
    frequent = {key for key, c in counts.items() if c >= min_item_count}

    final: dict[str, list[Interaction]] = {}
    for u, recs in kept.items():
        recs = [r for r in recs if (r.domain, r.item_id) in frequent][-max_len:]
        if len(recs) >= min_len and _has_both(recs):
            final[u] = recs

    if not final:
        raise EmptyCorpusError("empty corpus after filtering")

    items_A = sorted({r.item_id for recs in final.values() for r in recs if r.domain is Domain.A})
    items_B = sorted({r.item_id for recs in final.values() for r in recs if r.domain is Domain.B})
    index = {(Domain.A, it): i + 1 for i, it in enumerate(items_A)}
    index.update({(Domain.B, it): len(items_A) + i + 1 for i, it in enumerate(items_B)})

    users = []
    for u in sorted(final):
        recs = final[u]
        users.append(
            UserSequence(
                u,
                np.array([index[(r.domain, r.item_id)] for r in recs], dtype=np.int64),
                np.array([int(r.domain) for r in recs], dtype=np.int8),
                np.array([r.timestamp for r in recs], dtype=np.int64),
            )
        )
    return Corpus(users, items_A, items_B)


def split_leave_one_out(corpus: Corpus) -> Split:
    train, val_gt, test_gt, histories = [], [], [], []
    for u in corpus.users:
        if len(u) < 3:
            raise DataError(f"user {u.user_id!r} has {len(u)} interactions; leave-one-out needs >= 3")
        train.append(UserSequence(u.user_id, u.items[:-2], u.domains[:-2], u.timestamps[:-2]))
        val_gt.append((int(u.items[-2]), Domain(int(u.domains[-2]))))
        test_gt.append((int(u.items[-1]), Domain(int(u.domains[-1]))))
        histories.append(np.unique(u.items))
    return Split(corpus, train, val_gt, test_gt, histories)

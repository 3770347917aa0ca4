import io
import os
from pathlib import Path

import numpy as np
import pytest

from abxi.corpus import (
    Corpus,
    Domain,
    Interaction,
    load_interactions,
    preprocess,
    split_leave_one_out,
    write_interactions,
)
from abxi.errors import DataError, EmptyCorpusError, ParseError
from abxi.synthetic import generate_synthetic


def rec(u, i, d, t):
    return Interaction(u, i, Domain[d], t)


def test_load_csv_three_rows():
    src = b"user_id,item_id,domain,timestamp\nu1,a,A,3\nu1,b,B,1\nu2,a,A,2\n"
    out = load_interactions(io.BytesIO(src))
    assert len(out) == 3
    # input order kept, no sorting at load time
    assert [r.timestamp for r in out] == [3, 1, 2]


def test_load_jsonl():
    src = '{"user_id": "u", "item_id": "x", "domain": "B", "timestamp": 7}\n\n'
    (r,) = load_interactions(io.StringIO(src))
    assert r == Interaction("u", "x", Domain.B, 7)


def test_unknown_domain_names_the_row():
    src = b"user_id,item_id,domain,timestamp\nu1,a,A,3\nu1,b,C,1\n"
    with pytest.raises(ParseError, match="line 3"):
        load_interactions(src)


@pytest.mark.parametrize("body", [
    b"user_id,item_id,domain,timestamp\nu1,a,A,notanumber\n",
    b"user_id,item_id,domain,timestamp\nu1,a,A,-1\n",
    b"user_id,item_id\nu1,a\n",
    b'{"user_id": "u", "item_id": "x"}\n',
    b'{"user_id": "u", \n',
])
def test_malformed_rows(body):
    with pytest.raises(ParseError):
        load_interactions(body)


def test_empty_source_is_empty_list():
    assert load_interactions(b"") == []
    assert load_interactions(b"  \n") == []


def test_domain_map():
    src = b"user_id,item_id,domain,timestamp\nu1,a,Food,3\nu1,b,Kitchen,1\n"
    out = load_interactions(src, domain_map={"Food": "A", "Kitchen": "B"})
    assert [r.domain for r in out] == [Domain.A, Domain.B]


def test_roundtrip_writer(tmp_path):
    log = generate_synthetic("random", 5, seed=0)
    for fmt in ("jsonl", "csv"):
        buf = io.StringIO()
        write_interactions(log, buf, fmt)
        assert load_interactions(io.StringIO(buf.getvalue())) == log


def _user_log(user, doms, start=0, item_prefix="i"):
    return [rec(user, f"{item_prefix}{k}", d, start + k) for k, d in enumerate(doms)]


def test_item_below_threshold_removed():
    log = []
    for u in range(5):
        log += [rec(f"u{u}", "common_a", "A", 1), rec(f"u{u}", "common_b", "B", 2),
                rec(f"u{u}", "common_a2", "A", 3)]
    for u in range(4):
        log.append(rec(f"u{u}", "rare", "A", 4))
    c = preprocess(log, min_item_count=5)
    assert "rare" not in c.item_ids_A
    assert c.item_ids_A == ["common_a", "common_a2"]


def test_user_without_both_domains_after_truncation_removed():
    log = []
    for u in range(5):
        log += [rec(f"u{u}", "b0", "B", 0)] + [rec(f"u{u}", f"a{k}", "A", k + 1) for k in range(50)]
    log += [rec("keep", "b0", "B", 100)] + [rec("keep", f"a{k}", "A", k) for k in range(49)]
    c = preprocess(log, min_item_count=1, max_len=50)
    assert [u.user_id for u in c.users] == ["keep"]


def test_single_domain_user_dropped_first():
    log = [rec("solo", "a", "A", k) for k in range(5)] + _user_log("both", "ABAB")
    c = preprocess(log, min_item_count=1)
    assert [u.user_id for u in c.users] == ["both"]


def test_stable_tie_break():
    log = [rec("u", "x", "A", 5), rec("u", "y", "B", 5), rec("u", "z", "A", 1)]
    c = preprocess(log, min_item_count=1)
    seq = [c.raw_item_id(int(i)) for i in c.users[0].items]
    assert seq == ["z", "x", "y"]


def test_empty_corpus_error():
    with pytest.raises(EmptyCorpusError):
        preprocess([rec("u", "a", "A", 1)], min_item_count=1)


def test_item_indexing_layout():
    c = preprocess(generate_synthetic("random", 200, seed=3))
    for u in c.users:
        a = u.domains == Domain.A
        assert np.all((u.items[a] >= 1) & (u.items[a] <= c.n_items_A))
        assert np.all(u.items[~a] > c.n_items_A) and np.all(u.items[~a] <= c.n_items)
    assert [u.user_id for u in c.users] == sorted(u.user_id for u in c.users)


def test_corpus_invariants_on_synthetic():
    c = preprocess(generate_synthetic("shared-interest", 300, seed=5), max_len=20)
    for u in c.users:
        assert set(u.domains.tolist()) == {Domain.A, Domain.B}
        assert np.all(np.diff(u.timestamps) >= 0)
        assert len(u) <= 20


def test_idempotence_via_reserialisation():
    c = preprocess(generate_synthetic("shared-interest", 300, seed=5))
    again = preprocess(c.to_interactions())
    assert again == c


def test_single_pass_filter_breaks_idempotence_when_truncation_bites():
    def rec(u, item, t):
        return Interaction(u, item, Domain.A if item[0] == "a" else Domain.B, t)

    log = [rec("u1", it, t) for t, it in enumerate(["a1", "a2", "b1", "b2", "a2"])]
    log += [rec("u2", it, 10 + t) for t, it in enumerate(["a1", "a2", "b1", "b2"])]
    once = preprocess(log, min_item_count=2, max_len=4)
    # truncation leaves a1 with a single occurrence, so a second pass removes it
    assert "a1" in once.item_ids_A
    twice = preprocess(once.to_interactions(), min_item_count=2, max_len=4)
    assert "a1" not in twice.item_ids_A and twice != once


def test_corpus_file_roundtrip(tmp_path):
    c = preprocess(generate_synthetic("random", 100, seed=2))
    c.save(tmp_path / "c.json")
    assert Corpus.load(tmp_path / "c.json") == c


def test_corrupt_corpus_file(tmp_path):
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(DataError):
        Corpus.load(tmp_path / "bad.json")


# leave-one-out ---------------------------------------------------------------


def test_split_hand_trace():
    log = [rec("u", "a1", "A", 1), rec("u", "b1", "B", 2), rec("u", "a2", "A", 3),
           rec("u", "b2", "B", 4), rec("u", "a3", "A", 5)]
    c = preprocess(log, min_item_count=1)
    s = split_leave_one_out(c)
    names = [c.raw_item_id(int(i)) for i in s.train[0].items]
    assert names == ["a1", "b1", "a2"]
    item, dom = s.val_gt[0]
    assert (c.raw_item_id(item), dom) == ("b2", Domain.B)
    item, dom = s.test_gt[0]
    assert (c.raw_item_id(item), dom) == ("a3", Domain.A)


def test_split_length_three_boundary():
    c = preprocess(_user_log("u", "ABA"), min_item_count=1)
    assert len(split_leave_one_out(c).train[0]) == 1


def test_split_rejects_short_user():
    c = preprocess(_user_log("u", "AB"), min_item_count=1, min_len=2)
    with pytest.raises(DataError, match="'u'"):
        split_leave_one_out(c)


def test_split_conservation_and_gt_counts():
    c = preprocess(generate_synthetic("random", 400, seed=8))
    s = split_leave_one_out(c)
    for u, full in zip(s.train, c.users):
        assert len(u) + 2 == len(full)
    for which in ("val", "test"):
        counts = s.gt_counts(which)
        assert counts["A"] + counts["B"] == len(c.users)
    stats = c.stats()
    assert stats["A"]["val_gts"] == s.gt_counts("val")["A"]
    assert stats["B"]["test_gts"] == s.gt_counts("test")["B"]


def test_split_reassembles_full_sequence():
    c = preprocess(generate_synthetic("shared-interest", 100, seed=9))
    s = split_leave_one_out(c)
    for k, full in enumerate(c.users):
        items = list(s.train[k].items) + [s.val_gt[k][0], s.test_gt[k][0]]
        doms = list(s.train[k].domains) + [s.val_gt[k][1], s.test_gt[k][1]]
        assert items == full.items.tolist()
        assert doms == full.domains.tolist()


FK_PATH = os.environ.get("ABXI_FK_DATA")


@pytest.mark.skipif(not FK_PATH, reason="set ABXI_FK_DATA to a Food-Kitchen interaction file")
def test_food_kitchen_statistics():
    c = preprocess(load_interactions(Path(FK_PATH)))
    st = c.stats()
    assert st["users"] == 7144
    assert (st["A"]["items"], st["B"]["items"]) == (11837, 16258)
    assert (st["A"]["val_gts"], st["B"]["val_gts"]) == (2837, 4307)
    assert (st["A"]["test_gts"], st["B"]["test_gts"]) == (2419, 4725)

import random
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simscore.data import (CLS, PAD, SEP, UNK, FoldAssignment, Record, Vocabulary, anchor_groups, audit_folds,
                           build_vocab, encode_records, ingest, make_folds, sector_of, shuffle_targets,
                           tokenize_pad, write_records)
from simscore.errors import ConfigError, ContractError, FormatError, IngestError
from simscore.synthetic import fold_fixture

FIXTURE = Path(__file__).parent / "fixtures" / "five_rows.csv"


def rec(i, anchor, target="thing", context="F21", score=0.5):
    return Record(f"r{i}", anchor, target, context, score)


class TestRecord:
    @pytest.mark.parametrize("kw", [dict(score=1.2), dict(score=-0.1), dict(context="21F"), dict(target=" ")])
    def test_invalid(self, kw):
        args = dict(i=0, anchor="a")
        args.update(kw)
        with pytest.raises(FormatError):
            rec(**args)

    @pytest.mark.parametrize("code,sym", [("F21", "F"), ("a01", "A"), ("H04", "H")])
    def test_sector_of(self, code, sym):
        assert sector_of(code) == sym

    def test_sector_of_bad(self):
        with pytest.raises(FormatError):
            sector_of("21")


class TestIngest:
    def test_fixture_verbatim(self):
        rs = ingest(FIXTURE)
        assert len(rs) == 5
        assert rs[3] == Record("p4", "motor housing", "housing, cast", "F16", 0.25)
        assert rs[4].score == 0.0

    def test_score_out_of_range(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,anchor,target,context,score\nx,a,b,F21,1.2\ny,a,b,F21,0.5\nz,a,b,21,0.5\n")
        with pytest.raises(IngestError) as exc:
            ingest(p)
        lines = [line for line, _ in exc.value.errors]
        assert lines == [2, 4]
        assert "outside" in exc.value.errors[0][1]

    def test_skip_bad(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,anchor,target,context,score\nx,a,b,F21,1.2\ny,a,b,F21,0.5\n")
        with pytest.warns(UserWarning):
            rs = ingest(p, skip_bad=True)
        assert [r.id for r in rs] == ["y"]

    def test_missing_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,anchor,target,score\nx,a,b,0.5\n")
        with pytest.raises(IngestError):
            ingest(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.warns(UserWarning):
            assert ingest(p) == []

    def test_round_trip(self, tmp_path):
        rs = fold_fixture(0, n_anchors=10)
        write_records(tmp_path / "x.csv", rs)
        assert ingest(tmp_path / "x.csv") == rs

    def test_sectors_in_range(self):
        assert all("A" <= sector_of(r.context) <= "Z" for r in ingest(FIXTURE))


class TestVocab:
    def test_single_word(self):
        # the sector letter is a corpus token too; min_freq 2 keeps only the repeated word
        v = build_vocab([Record("x", "abatement", "abatement", "F21", 0.5)], min_freq=2)
        assert v.to_list() == ["abatement"]
        assert len(v) == 5

    def test_min_freq_above_all(self):
        assert build_vocab(ingest(FIXTURE), min_freq=100).to_list() == []

    def test_order_independent(self):
        rs = fold_fixture(1)
        ref = build_vocab(rs)
        rnd = random.Random(0)
        for _ in range(10):
            shuffled = rs[:]
            rnd.shuffle(shuffled)
            assert build_vocab(shuffled).stoi == ref.stoi

    def test_sorted_by_count(self):
        v = build_vocab(ingest(FIXTURE))
        assert v.to_list()[:2] == ["abatement", "a"]

    def test_bijective(self):
        v = build_vocab(fold_fixture(0))
        assert all(v.stoi[t] == i for i, t in enumerate(v.itos))

    def test_duplicate(self):
        with pytest.raises(ContractError):
            Vocabulary(["a", "a"])


class TestTokenize:
    def test_layout(self):
        v = Vocabulary(["a", "b", "f"])
        ids, mask = tokenize_pad(v, "a", "b", "f", 8)
        a, b, f = v.id("a"), v.id("b"), v.id("f")
        assert ids.tolist() == [CLS, a, SEP, b, SEP, f, SEP, PAD]
        assert mask.tolist() == [1, 1, 1, 1, 1, 1, 1, 0]

    def test_unknown(self):
        v = Vocabulary(["a"])
        ids, _ = tokenize_pad(v, "a", "zebra", "f", 8)
        assert ids[3] == UNK

    def test_decode_round_trip(self):
        v = build_vocab(ingest(FIXTURE))
        ids, _ = tokenize_pad(v, "Motor Shaft", "ROTATING shaft", "F", 12)
        assert v.decode(ids) == ["[CLS]", "motor", "shaft", "[SEP]", "rotating", "shaft", "[SEP]", "f", "[SEP]"]

    def test_truncates_target_first(self):
        v = Vocabulary(["a", "b", "c", "d", "f"])
        ids, mask = tokenize_pad(v, "a b", "c d c d", "f", 8)
        assert mask.sum() == 8
        assert v.decode(ids) == ["[CLS]", "a", "b", "[SEP]", "c", "[SEP]", "f", "[SEP]"]

    def test_too_small(self):
        with pytest.raises(ConfigError):
            tokenize_pad(Vocabulary(["a"]), "a", "a", "f", 4)

    @settings(max_examples=100)
    @given(st.lists(st.sampled_from(["a", "b", "c", "zz"]), min_size=1, max_size=6),
           st.lists(st.sampled_from(["a", "b", "c", "zz"]), min_size=1, max_size=6),
           st.integers(8, 20))
    def test_length_and_mask(self, aw, tw, max_len):
        v = Vocabulary(["a", "b", "c", "f"])
        ids, mask = tokenize_pad(v, " ".join(aw), " ".join(tw), "f", max_len)
        assert len(ids) == len(mask) == max_len
        assert mask.sum() == min(len(aw) + len(tw) + 5, max_len)
        assert np.all((ids != PAD) == (mask == 1))

    def test_encode_records(self):
        rs = ingest(FIXTURE)
        ds = encode_records(rs, build_vocab(rs), 16)
        assert ds.batch.token_ids.shape == (5, 16)
        assert ds.batch.sector_ids.tolist() == [0, 0, 5, 5, 7]
        assert ds.subset([4, 0]).ids == ["p5", "p1"]


class TestFolds:
    def test_shared_word_same_fold(self):
        rs = [rec(0, "electric motor"), rec(1, "motor housing"), rec(2, "gear"), rec(3, "spring"),
              rec(4, "lamp")]
        for seed in range(10):
            f = make_folds(rs, k=2, seed=seed)
            assert f["r0"] == f["r1"]

    def test_transitive_merge(self):
        rs = [rec(0, "a b"), rec(1, "b c"), rec(2, "c d"), rec(3, "e")]
        groups = anchor_groups(rs)
        assert sorted(map(len, groups)) == [1, 3]

    def test_single_record_rejected(self):
        with pytest.raises(ConfigError):
            make_folds([rec(0, "a")], k=2)

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            make_folds([rec(0, "a"), rec(1, "b")], k=1)

    def test_empty(self):
        with pytest.raises(ContractError):
            make_folds([], k=2)

    @pytest.mark.parametrize("seed", range(5))
    def test_synthetic_fixture_audit(self, seed):
        rs = fold_fixture(seed)
        assert len(rs) == 200
        folds = make_folds(rs, k=5, seed=seed)
        audit = audit_folds(rs, folds)
        assert audit.ok, audit.to_dict()
        assert audit.unassigned == 0 and audit.anchor_splits == 0 and audit.shared_word_splits == 0
        assert audit.size_ratio <= 1.5
        assert audit.max_mean_deviation <= 0.1
        assert sorted(folds) == sorted(r.id for r in rs)

    def test_fixture_has_shared_word_pairs(self):
        rs = fold_fixture(0)
        heads = Counter(r.anchor.split()[0] for r in rs)
        assert any(c > 5 for c in heads.values())

    def test_deterministic(self):
        rs = fold_fixture(2)
        assert make_folds(rs, seed=7) == make_folds(rs, seed=7)

    def test_audit_catches_split(self):
        rs = fold_fixture(0, n_anchors=10)
        folds = make_folds(rs, k=2)
        broken = FoldAssignment(folds, k=2)
        first = rs[0].id
        broken[first] = 1 - broken[first]
        audit = audit_folds(rs, broken)
        assert audit.anchor_splits == 1 and not audit.ok

    def test_audit_catches_shared_word_split(self):
        rs = [rec(0, "motor a"), rec(1, "motor b"), rec(2, "c"), rec(3, "d")]
        audit = audit_folds(rs, FoldAssignment({"r0": 0, "r1": 1, "r2": 0, "r3": 1}, k=2))
        assert audit.anchor_splits == 0 and audit.shared_word_splits == 1

    def test_csv_round_trip(self, tmp_path):
        folds = make_folds(fold_fixture(0), seed=0)
        folds.to_csv(tmp_path / "f.csv")
        back = FoldAssignment.from_csv(tmp_path / "f.csv", k=5)
        assert back == folds and back.k == 5
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "id,fold"


class TestShuffle:
    def test_single(self):
        assert shuffle_targets(["x"], 3, 0) == ["x"]

    def test_empty(self):
        with pytest.raises(ContractError):
            shuffle_targets([], 0, 0)

    @settings(max_examples=100)
    @given(st.integers(1, 40), st.integers(0, 10**6), st.integers(0, 2**32 - 1))
    def test_multiset_preserved(self, n, step, seed):
        batch = [(f"a{i}", f"t{i}", i / 40) for i in range(n)]
        out = shuffle_targets(batch, step, seed)
        assert sorted(out) == sorted(batch)

    def test_replay(self):
        batch = list(range(30))
        assert shuffle_targets(batch, 5, 11) == shuffle_targets(batch, 5, 11)
        assert shuffle_targets(batch, 5, 11) != shuffle_targets(batch, 6, 11)

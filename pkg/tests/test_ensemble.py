import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simscore.data import Record, build_vocab
from simscore.ensemble import (MemberSpec, blend, ensemble_evaluate, load_manifest, normalized_weights,
                               read_predictions, save_manifest, write_predictions)
from simscore.errors import AlignmentError, CheckpointError, ConfigError
from simscore.model import SimilarityModel, save_checkpoint, tiny_config
from simscore.objectives import PredictionSet, mse_metric

MAX_LEN = 12


def constant_member(tmp_path, name, value, vocab, variant="standard"):
    cfg = tiny_config(0, vocab_size=len(vocab), max_seq_len=MAX_LEN, head_variant=variant)
    m = SimilarityModel(cfg)
    m.params["fc.w"].data[:] = 0.0
    m.params["fc.b"].data[...] = value
    path = tmp_path / f"{name}.ckpt"
    save_checkpoint(path, m, {"vocab": vocab.to_list(), "max_len": MAX_LEN})
    return MemberSpec(str(path), head_variant=variant)


def random_member(tmp_path, name, seed, vocab):
    m = SimilarityModel(tiny_config(seed, vocab_size=len(vocab), max_seq_len=MAX_LEN))
    path = tmp_path / f"{name}.ckpt"
    save_checkpoint(path, m, {"vocab": vocab.to_list(), "max_len": MAX_LEN})
    return MemberSpec(str(path))


@pytest.fixture
def records():
    words = ["gear", "shaft", "lamp", "rotor", "seal", "valve"]
    return [Record(f"e{i}", f"{words[i % 6]} unit", f"{words[(i * 5) % 6]} part", "F21",
                   [0.0, 0.25, 0.5, 0.75, 1.0][i % 5]) for i in range(15)]


class TestBlend:
    def test_single(self):
        a = np.array([0.1, 0.7, 0.3])
        np.testing.assert_array_equal(blend([(a, 2.0)]), a)

    def test_idempotent(self):
        a = np.random.default_rng(0).uniform(size=50)
        np.testing.assert_array_equal(blend([(a, 0.3), (a.copy(), 0.9), (a.copy(), 1.7)]), a)

    def test_weights_one_three(self):
        a, b = np.array([0.2, 0.9]), np.array([0.6, 0.1])
        np.testing.assert_allclose(blend([(a, 1), (b, 3)]), 0.25 * a + 0.75 * b, rtol=0, atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(AlignmentError):
            blend([(np.zeros(3), 1.0), (np.zeros(4), 1.0)])

    @pytest.mark.parametrize("w", [[0.0, 0.0], [-1.0, 2.0], []])
    def test_bad_weights(self, w):
        with pytest.raises(ConfigError):
            normalized_weights(w)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            blend([(np.zeros(2), 1.0)], method="median")

    @settings(max_examples=100)
    @given(st.integers(0, 2**31), st.integers(1, 5))
    def test_convex_hull_and_permutation(self, seed, k):
        rng = np.random.default_rng(seed)
        preds = [rng.uniform(-1, 2, size=20) for _ in range(k)]
        weights = rng.uniform(0.01, 3.0, size=k)
        out = blend(list(zip(preds, weights)))
        stacked = np.stack(preds)
        assert np.all(out >= stacked.min(axis=0)) and np.all(out <= stacked.max(axis=0))
        for perm in itertools.islice(itertools.permutations(range(k)), 6):
            again = blend([(preds[i], weights[i]) for i in perm])
            np.testing.assert_allclose(again, out, rtol=0, atol=1e-14)
        assert normalized_weights(weights).sum() == pytest.approx(1.0, abs=1e-12)

    def test_rank_method(self):
        a = np.array([0.1, 0.5, 0.9])
        b = np.array([10.0, 20.0, 30.0])
        np.testing.assert_allclose(blend([(a, 1), (b, 1)], method="rank"), [0.0, 0.5, 1.0])

    def test_anticorrelated_errors_cancel(self):
        y = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 0.5])
        e = np.array([0.125, -0.25, 0.0625, 0.125, -0.5, 0.25])
        a, b = y + e, y - e
        out = blend([(a, 1.0), (b, 1.0)])
        assert mse_metric(PredictionSet(out, y)) == 0.0
        assert mse_metric(PredictionSet(a, y)) > 0 and mse_metric(PredictionSet(b, y)) > 0


class TestFiles:
    def test_manifest_round_trip(self, tmp_path):
        specs = [MemberSpec("a.ckpt", weight=1.0), MemberSpec("b.ckpt", "wide", weight=3.0)]
        save_manifest(tmp_path / "m.json", specs)
        back = load_manifest(tmp_path / "m.json")
        assert [s.weight for s in back] == [1.0, 3.0]
        assert back[1].checkpoint == str(tmp_path / "b.ckpt")

    def test_manifest_empty(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"members": []}))
        with pytest.raises(ConfigError):
            load_manifest(tmp_path / "m.json")

    def test_predictions_round_trip(self, tmp_path):
        preds = np.random.default_rng(0).uniform(size=5)
        ids = [f"x{i}" for i in range(5)]
        write_predictions(tmp_path / "p.csv", ids, preds)
        back = read_predictions(tmp_path / "p.csv")
        assert [back[i] for i in ids] == preds.tolist()


class TestEnsembleEvaluate:
    def test_single_member_matches_solo(self, tmp_path, records):
        vocab = build_vocab(records)
        spec = random_member(tmp_path, "solo", 1, vocab)
        rep, out = ensemble_evaluate([spec], records)
        assert rep.blend.to_dict() == rep.members[0].to_dict()
        np.testing.assert_array_equal(out.blended, out.members[0])

    def test_anticorrelated_fixture(self, tmp_path, records):
        flat = [Record(r.id, r.anchor, r.target, r.context, 0.5) for r in records]
        vocab = build_vocab(flat)
        specs = [constant_member(tmp_path, "hi", 0.75, vocab), constant_member(tmp_path, "lo", 0.25, vocab)]
        rep, out = ensemble_evaluate(specs, flat)
        assert rep.blend.mse == 0.0
        assert all(m.mse > 0 for m in rep.members)

    def test_order_independent_member_reports(self, tmp_path, records):
        vocab = build_vocab(records)
        specs = [random_member(tmp_path, f"m{i}", i, vocab) for i in range(3)]
        fwd, _ = ensemble_evaluate(specs, records, threads=3)
        rev, _ = ensemble_evaluate(specs[::-1], records)
        assert [m.to_dict() for m in fwd.members] == [m.to_dict() for m in rev.members][::-1]
        assert fwd.blend.pearson == pytest.approx(rev.blend.pearson, abs=1e-12)

    def test_variant_mismatch_names_member(self, tmp_path, records):
        vocab = build_vocab(records)
        spec = random_member(tmp_path, "solo", 1, vocab)
        spec.head_variant = "wide"
        with pytest.raises(CheckpointError, match="solo.ckpt"):
            ensemble_evaluate([spec], records)

    def test_missing_checkpoint(self, tmp_path, records):
        with pytest.raises(CheckpointError, match="nope.ckpt"):
            ensemble_evaluate([MemberSpec(str(tmp_path / "nope.ckpt"))], records)

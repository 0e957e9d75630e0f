import csv
import json
import textwrap

import numpy as np
import pytest

from simscore.cli import derive_seed, main
from simscore.data import ingest


def tiny_toml(tmp_path, data, folds, out="run", epochs=2, extra_train=""):
    text = textwrap.dedent(f"""\
        data = "{data}"
        folds = "{folds}"
        out = "{out}"
        seed = 3
        fold = 0
        max_len = 16

        [model]
        embed_dim = 16
        n_heads = 2
        n_layers = 1
        ffn_dim = 32
        lstm_hidden = 8
        max_rel_dist = 4
        init_scale = 0.1

        [train]
        epochs = {epochs}
        batch_size = 16
        lr_transformer = 1e-3
        lr_head = 1e-2
        {extra_train}
        """)
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


@pytest.fixture
def overlap(tmp_path):
    data = tmp_path / "overlap.csv"
    assert main(["make-fixture", "--kind", "overlap", "--out", str(data)]) == 0
    return data, tmp_path / "overlap.folds.csv"


@pytest.fixture
def trained(tmp_path, overlap):
    data, folds = overlap
    cfg = tiny_toml(tmp_path, data, folds)
    assert main(["train", "--config", str(cfg)]) == 0
    return tmp_path / "run" / "fold0", data


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == 1

    def test_unknown_flag(self):
        assert main(["prepare-folds", "--bogus"]) == 1

    def test_missing_data(self, tmp_path, capsys):
        assert main(["prepare-folds", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f.csv")]) == 1
        assert "nope.csv" in capsys.readouterr().err

    def test_derive_seed(self):
        assert derive_seed(0, "model") != derive_seed(0, "training")
        assert derive_seed(5, "model") == derive_seed(5, "model")


class TestFolds:
    def test_prepare(self, tmp_path):
        data = tmp_path / "d.csv"
        main(["make-fixture", "--kind", "folds", "--out", str(data)])
        outs = []
        for i in range(2):
            out = tmp_path / f"f{i}.csv"
            assert main(["prepare-folds", "--data", str(data), "--k", "5", "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        audit = json.loads((tmp_path / "f0.csv.audit.json").read_text())
        assert audit["ok"] and audit["k"] == 5 and min(audit["sizes"]) > 0
        with open(tmp_path / "f0.csv") as fh:
            assert {int(r["fold"]) for r in csv.DictReader(fh)} == set(range(5))

    def test_k1_rejected(self, tmp_path):
        data = tmp_path / "d.csv"
        main(["make-fixture", "--out", str(data)])
        assert main(["prepare-folds", "--data", str(data), "--k", "1", "--out", str(tmp_path / "f.csv")]) == 1
        assert not (tmp_path / "f.csv").exists()

    def test_failed_audit_writes_no_csv(self, tmp_path):
        data = tmp_path / "d.csv"
        # every score in one anchor group but a second, wildly different group: balance is impossible
        data.write_text("id,anchor,target,context,score\n"
                        + "".join(f"a{i},big gear,t{i},F21,1.0\n" for i in range(20))
                        + "b0,lamp,x,F21,0.0\nb1,lamp,y,F21,0.0\n")
        assert main(["prepare-folds", "--data", str(data), "--k", "2", "--out", str(tmp_path / "f.csv")]) == 1
        assert not (tmp_path / "f.csv").exists()
        assert (tmp_path / "f.csv.audit.json").exists()


class TestTrain:
    def test_artifacts(self, trained):
        run, _ = trained
        for name in ("config.json", "best.ckpt", "report.json", "metrics.csv", "timing.json"):
            assert (run / name).exists(), name
        cfg = json.loads((run / "config.json").read_text())
        assert cfg["model"]["embed_dim"] == 16 and cfg["seed"] == 3

    def test_deterministic(self, tmp_path, overlap, trained):
        run, _ = trained
        data, folds = overlap
        cfg = tiny_toml(tmp_path, data, folds, out="again")
        assert main(["train", "--config", str(cfg)]) == 0
        again = tmp_path / "again" / "fold0"
        for name in ("best.ckpt", "report.json", "metrics.csv"):
            assert (run / name).read_bytes() == (again / name).read_bytes(), name

    def test_missing_fold_file(self, tmp_path, overlap, capsys):
        data, _ = overlap
        cfg = tiny_toml(tmp_path, data, tmp_path / "nofolds.csv")
        assert main(["train", "--config", str(cfg)]) == 1
        assert "nofolds.csv" in capsys.readouterr().err

    def test_bad_config_value(self, tmp_path, overlap):
        data, folds = overlap
        cfg = tiny_toml(tmp_path, data, folds, extra_train="awp_start_epoch = 0")
        assert main(["train", "--config", str(cfg)]) == 1
        assert not (tmp_path / "run").exists()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_abort_exit_2(self, tmp_path, overlap, capsys):
        data, folds = overlap
        cfg = tiny_toml(tmp_path, data, folds, extra_train="lr_head = 1e308\nlr_transformer = 1e308")
        cfg.write_text(cfg.read_text().replace("lr_transformer = 1e-3\n", "").replace("lr_head = 1e-2\n", ""))
        assert main(["train", "--config", str(cfg)]) == 2
        assert "step" in capsys.readouterr().err


class TestPredictEvaluate:
    def test_predict(self, tmp_path, trained):
        run, data = trained
        outs = []
        for i in range(2):
            out = tmp_path / f"p{i}.csv"
            assert main(["predict", "--checkpoint", str(run / "best.ckpt"), "--data", str(data),
                         "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        with open(tmp_path / "p0.csv") as fh:
            preds = [float(r["prediction"]) for r in csv.DictReader(fh)]
        assert len(preds) == len(ingest(data))
        assert all(0.0 <= p <= 1.0 for p in preds)

    def test_predict_matches_in_process(self, tmp_path, trained):
        from simscore.data import Vocabulary, encode_records
        from simscore.model import load_checkpoint
        run, data = trained
        out = tmp_path / "p.csv"
        main(["predict", "--checkpoint", str(run / "best.ckpt"), "--data", str(data), "--out", str(out)])
        model, extra = load_checkpoint(run / "best.ckpt")
        raw = model.predict(encode_records(ingest(data), Vocabulary.from_list(extra["vocab"]),
                                           extra["max_len"]).batch)
        with open(out) as fh:
            written = np.array([float(r["prediction"]) for r in csv.DictReader(fh)])
        inside = (raw >= 0) & (raw <= 1)
        np.testing.assert_array_equal(written[inside], raw[inside])

    def test_vocab_mismatch(self, tmp_path, trained):
        from simscore.model import load_checkpoint, save_checkpoint
        run, data = trained
        model, extra = load_checkpoint(run / "best.ckpt")
        save_checkpoint(tmp_path / "bad.ckpt", model, {"vocab": extra["vocab"][:-1], "max_len": 16})
        assert main(["predict", "--checkpoint", str(tmp_path / "bad.ckpt"), "--data", str(data),
                     "--out", str(tmp_path / "p.csv")]) == 1

    def test_evaluate_constant_predictor(self, tmp_path, overlap):
        data, _ = overlap
        preds = tmp_path / "const.csv"
        preds.write_text("id,prediction\n" + "".join(f"{r.id},0.5\n" for r in ingest(data)))
        out = tmp_path / "rep.json"
        assert main(["evaluate", "--data", str(data), "--predictions", str(preds), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["pearson"] is None and rep["undefined"]["pearson"] is True

    def test_evaluate_checkpoint(self, tmp_path, trained, capsys):
        run, data = trained
        assert main(["evaluate", "--data", str(data), "--checkpoint", str(run / "best.ckpt")]) == 0
        assert "pearson=" in capsys.readouterr().out


class TestEnsembleCommand:
    def test_ensemble(self, tmp_path, trained):
        run, data = trained
        manifest = tmp_path / "m.json"
        ckpt = str(run / "best.ckpt")
        manifest.write_text(json.dumps({"members": [{"checkpoint": ckpt}, {"checkpoint": ckpt, "weight": 2.0}]}))
        assert main(["ensemble", "--manifest", str(manifest), "--data", str(data),
                     "--out", str(tmp_path / "ens")]) == 0
        blend = (tmp_path / "ens" / "blend.csv").read_text()
        assert blend == (tmp_path / "ens" / "member0.csv").read_text()
        rep = json.loads((tmp_path / "ens" / "report.json").read_text())
        assert len(rep["members"]) == 2


class TestOtherCommands:
    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--seeds", "2", "--coords", "3"]) == 0
        assert "max relative error" in capsys.readouterr().out

    def test_gradcheck_fails_on_impossible_tol(self):
        assert main(["gradcheck", "--seeds", "1", "--coords", "2", "--tol", "0"]) == 2

    def test_pretrain_rtd(self, tmp_path):
        out = tmp_path / "rtd.ckpt"
        assert main(["pretrain-rtd", "--steps", "20", "--out", str(out)]) == 0
        summary = json.loads((tmp_path / "rtd.ckpt.losses.json").read_text())
        assert len(summary["losses"]) == 20 and out.exists()

    def test_ablation_one_row(self, tmp_path, overlap):
        data, folds = overlap
        cfg = tiny_toml(tmp_path, data, folds, out="abl", epochs=1)
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps([{"name": "Encoder", "model": {"use_lstm": False, "pooling": "mean"}}]))
        assert main(["ablation", "--config", str(cfg), "--grid", str(grid)]) == 0
        lines = (tmp_path / "abl" / "ablation.csv").read_text().splitlines()
        assert lines[0] == "Model,Pearson (%),MSE,F1-Score (%),AUC (%)"
        assert len(lines) == 2 and lines[1].startswith("Encoder,")
        assert (tmp_path / "abl" / "config.json").exists()

"""Command-line entry point: ``simscore <command> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import synthetic
from .ablation import DEFAULT_GRID, grid_from_json, run_ablation
from .data import (
    FoldAssignment,
    Vocabulary,
    audit_folds,
    build_vocab,
    encode_records,
    ingest,
    make_folds,
    write_records,
)
from .ensemble import ensemble_evaluate, load_manifest, read_predictions, write_predictions
from .errors import NumericalAbort, SimscoreError
from .model import (
    ModelConfig,
    SimilarityModel,
    end_to_end_gradcheck,
    load_checkpoint,
    rtd_pretrain,
    save_checkpoint,
)
from .objectives import PredictionSet, metric_report
from .training import TrainConfig, evaluate, train

log = logging.getLogger("simscore")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def derive_seed(root: int, label: str) -> int:
    """Independent per-subsystem seed from the root seed and a fixed label."""
    ss = np.random.SeedSequence([root, zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


# ------------------------------------------------------------------ run config

@dataclass
class RunConfig:
    data: str | None = None
    folds: str | None = None
    out: str = "runs/default"
    seed: int = 0
    fold: int = 0
    max_len: int = 24
    min_freq: int = 1
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def model_config(self, vocab_size: int) -> ModelConfig:
        d = {**self.model, "vocab_size": vocab_size, "max_seq_len": max(self.max_len, self.model.get("max_seq_len", 0)),
             "seed": derive_seed(self.seed, "model")}
        return ModelConfig.from_dict(d)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": derive_seed(self.seed, "training")})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    raw: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        with p.open("rb") as fh:
            raw = tomllib.load(fh)
        base = p.parent
        for key in ("data", "folds", "out"):
            if key in raw and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    cfg = RunConfig(**raw)
    # validate eagerly so bad configs fail before any output is written
    TrainConfig.from_dict(cfg.train)
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what} path")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


# -------------------------------------------------------------------- commands

def cmd_make_fixture(args) -> int:
    out = Path(args.out)
    if args.kind == "folds":
        write_records(out, synthetic.fold_fixture(args.seed))
    elif args.kind == "overlap":
        tr, va = synthetic.overlap_fixture(args.seed)
        write_records(out, tr + va)
        folds = FoldAssignment([(r.id, 0) for r in va] + [(r.id, 1) for r in tr], k=2)
        folds.to_csv(out.with_suffix(".folds.csv"))
    else:
        _write(out, "\n".join(synthetic.rtd_corpus(args.seed)) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_prepare_folds(args) -> int:
    records = ingest(_require(args.data, "data"))
    folds = make_folds(records, args.k, args.bins, args.seed)
    audit = audit_folds(records, folds)
    out = Path(args.out)
    audit_path = out.with_name(out.name + ".audit.json")
    _write(audit_path, json.dumps(audit.to_dict(), indent=2, sort_keys=True))
    print(f"folds={audit.k} sizes={audit.sizes} ratio={audit.size_ratio:.3f} "
          f"max_mean_dev={audit.max_mean_deviation:.3f} anchor_splits={audit.anchor_splits} "
          f"shared_word_splits={audit.shared_word_splits}")
    if not audit.ok:
        print("fold audit FAILED; no fold file written", file=sys.stderr)
        return 1
    out.parent.mkdir(parents=True, exist_ok=True)
    folds.to_csv(out)
    print(f"wrote {out}")
    return 0


def _prepare_training(cfg: RunConfig):
    records = ingest(_require(cfg.data, "data"))
    folds = FoldAssignment.from_csv(_require(cfg.folds, "fold"))
    train_ids = {rid for rid, f in folds.items() if f != cfg.fold}
    vocab = build_vocab([r for r in records if r.id in train_ids], cfg.min_freq)
    data = encode_records(records, vocab, cfg.max_len)
    return records, folds, vocab, data


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, {"fold": args.fold, "out": args.out, "seed": args.seed})
    run_dir = Path(cfg.out) / f"fold{cfg.fold}"
    _write(run_dir / "config.json", cfg.to_json())
    _, folds, vocab, data = _prepare_training(cfg)
    model = SimilarityModel(cfg.model_config(len(vocab)))
    tcfg = cfg.train_config()
    best, report = train(model, data, folds, cfg.fold, tcfg)
    model.load_state(best)
    save_checkpoint(run_dir / "best.ckpt", model, {"vocab": vocab.to_list(), "max_len": cfg.max_len})
    _write(run_dir / "report.json", report.to_json())
    report.write_series_csv(run_dir / "metrics.csv")
    _write(run_dir / "timing.json", json.dumps({"wall_time": report.wall_time}))
    best_val = report.best or {}
    print(f"fold={cfg.fold} steps={report.steps} best_epoch={report.best_epoch} "
          f"val_pearson={best_val.get('pearson')} wall={report.wall_time:.1f}s")
    print(f"wrote {run_dir}")
    return 0


def _load_member(path):
    model, extra = load_checkpoint(path)
    if "vocab" not in extra:
        raise ValueError(f"checkpoint {path} carries no vocabulary")
    vocab = Vocabulary.from_list(extra["vocab"])
    if len(vocab) != model.config.vocab_size:
        raise ValueError(f"vocabulary size {len(vocab)} does not match model ({model.config.vocab_size})")
    return model, vocab, extra["max_len"]


def cmd_predict(args) -> int:
    model, vocab, max_len = _load_member(_require(args.checkpoint, "checkpoint"))
    records = ingest(_require(args.data, "data"))
    data = encode_records(records, vocab, max_len)
    preds = np.clip(model.predict(data.batch), 0.0, 1.0)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_predictions(args.out, data.ids, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    records = ingest(_require(args.data, "data"))
    if args.predictions:
        table = read_predictions(_require(args.predictions, "predictions"))
        missing = [r.id for r in records if r.id not in table]
        if missing:
            raise ValueError(f"{len(missing)} record(s) lack predictions, e.g. {missing[0]!r}")
        preds = np.array([table[r.id] for r in records])
        rep = metric_report(PredictionSet(preds, [r.score for r in records]), args.threshold)
    else:
        model, vocab, max_len = _load_member(_require(args.checkpoint, "checkpoint"))
        rep, _ = evaluate(model, encode_records(records, vocab, max_len), args.threshold)
    print(rep.to_text())
    if args.out:
        _write(Path(args.out), rep.to_json())
    return 0


def cmd_ensemble(args) -> int:
    specs = load_manifest(_require(args.manifest, "manifest"))
    records = ingest(_require(args.data, "data"))
    report, output = ensemble_evaluate(specs, records, args.threshold, args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = [r.id for r in records]
    write_predictions(out / "blend.csv", ids, output.blended)
    for i, p in enumerate(output.members):
        write_predictions(out / f"member{i}.csv", ids, p)
    _write(out / "report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(report.blend.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        rep, _ = end_to_end_gradcheck(seed, eps=args.eps, max_coords=args.coords)
        worst = max(worst, rep.max_error)
    print(f"max relative error over {args.seeds} seed(s): {worst:.3e} (tol {args.tol:g})")
    return 0 if worst < args.tol else 2


def cmd_pretrain_rtd(args) -> int:
    if args.corpus:
        lines = _require(args.corpus, "corpus").read_text(encoding="utf-8").splitlines()
        sentences = [ln for ln in lines if ln.strip()]
    else:
        sentences = synthetic.rtd_corpus(args.seed)
    vocab = synthetic.sentence_vocab(sentences)
    batch = synthetic.encode_sentences(sentences, vocab, args.max_len)
    cfg = ModelConfig(vocab_size=len(vocab), max_seq_len=args.max_len, encoder_variant="rtd_style",
                      use_lstm=False, seed=derive_seed(args.seed, "model"))
    model = SimilarityModel(cfg)
    result = rtd_pretrain(model, batch, args.steps, args.replace_prob, seed=derive_seed(args.seed, "training"))
    out = Path(args.out)
    save_checkpoint(out, model, {"vocab": vocab.to_list(), "max_len": args.max_len})
    summary = {"initial_loss": result.initial_loss, "final_loss": result.final_loss(),
               "chance_loss": float(np.log(2.0)), "steps": args.steps, "losses": result.losses}
    _write(out.with_name(out.name + ".losses.json"), json.dumps(summary, indent=2))
    print(f"rtd loss {result.initial_loss:.4f} -> {result.final_loss():.4f} (chance {np.log(2):.4f})")
    return 0


def cmd_ablation(args) -> int:
    cfg = load_run_config(args.config, {"fold": args.fold, "out": args.out, "seed": args.seed})
    out = Path(cfg.out)
    _write(out / "config.json", cfg.to_json())
    grid = DEFAULT_GRID
    if args.grid:
        grid = grid_from_json(json.loads(_require(args.grid, "grid").read_text()))
    _, folds, vocab, data = _prepare_training(cfg)
    table = run_ablation(grid, data, folds, cfg.fold, cfg.model_config(len(vocab)), cfg.train_config())
    _write(out / "ablation.md", table.to_markdown())
    table.write_csv(out / "ablation.csv")
    _write(out / "ablation.json", table.to_json())
    print(table.to_markdown())
    print(f"pearson monotone across rows: {table.pearson_monotone} (reported, not required)")
    return 0


# ---------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simscore", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-fixture", help="write a seeded synthetic dataset")
    s.add_argument("--kind", choices=("folds", "overlap", "rtd"), default="folds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_fixture)

    s = sub.add_parser("prepare-folds", help="anchor-grouped stratified folds with audit")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--bins", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare_folds)

    s = sub.add_parser("train", help="train one fold")
    s.add_argument("--config")
    s.add_argument("--fold", type=int)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="score a CSV with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="metrics for a predictions CSV or checkpoint")
    s.add_argument("--data", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--predictions")
    g.add_argument("--checkpoint")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ensemble", help="blend checkpoints listed in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--method", choices=("mean", "rank"), default="mean")
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--coords", type=int, default=6, help="coordinates sampled per tensor")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("pretrain-rtd", help="replaced-token-detection pretraining")
    s.add_argument("--corpus", help="text file, one sentence per line (default: toy corpus)")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--replace-prob", type=float, default=0.15)
    s.add_argument("--max-len", type=int, default=12)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain_rtd)

    s = sub.add_parser("ablation", help="run the ablation grid and emit the table")
    s.add_argument("--config")
    s.add_argument("--grid", help="JSON list of grid entries (default: five-row grid)")
    s.add_argument("--fold", type=int)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"simscore: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"simscore: numerical abort: {exc}", file=sys.stderr)
        return 2
    except (UsageError, SimscoreError, OSError, ValueError, KeyError) as exc:
        print(f"simscore: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

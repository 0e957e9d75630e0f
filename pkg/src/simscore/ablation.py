"""Ablation harness: train each configuration on one fold, tabulate metrics."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import EncodedDataset, FoldAssignment
from .ensemble import blend
from .model.network import ModelConfig, SimilarityModel
from .objectives import PredictionSet, metric_report
from .training import TrainConfig, evaluate, fit, split_by_fold

COLUMNS = ("Model", "Pearson (%)", "MSE", "F1-Score (%)", "AUC (%)")


@dataclass
class AblationEntry:
    name: str
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    # extra model overrides per ensemble member, layered on ``model``
    members: list[dict] | None = None


DEFAULT_GRID = (
    AblationEntry("Encoder", {"use_lstm": False, "pooling": "mean"}, {"shuffle_targets": False}),
    AblationEntry("Encoder + LSTM", {"use_lstm": True, "pooling": "mean"}, {"shuffle_targets": False}),
    AblationEntry("+ Linear Attention Pooling", {"use_lstm": True, "pooling": "attention"},
                  {"shuffle_targets": False}),
    AblationEntry("+ Target Shuffling", {"use_lstm": True, "pooling": "attention"},
                  {"shuffle_targets": True}),
    AblationEntry("Ensemble Model", {"use_lstm": True, "pooling": "attention"},
                  {"shuffle_targets": True},
                  members=[{}, {"head_variant": "wide"}, {"head_variant": "sector"}]),
)


@dataclass
class AblationRow:
    name: str
    pearson: float | None = None
    mse: float | None = None
    f1: float | None = None
    auc: float | None = None
    failed: bool = False
    error: str | None = None

    def cells(self) -> list[str]:
        if self.failed:
            return [self.name, "failed", "failed", "failed", "failed"]

        def pct(v):
            return "undefined" if v is None else f"{100 * v:.1f}"

        mse = "undefined" if self.mse is None else f"{self.mse:.3f}"
        return [self.name, pct(self.pearson), mse, pct(self.f1), pct(self.auc)]


@dataclass
class AblationTable:
    rows: list[AblationRow]

    @property
    def pearson_monotone(self) -> bool:
        vals = [r.pearson for r in self.rows]
        if any(v is None for v in vals):
            return False
        return all(b >= a for a, b in zip(vals, vals[1:]))

    def to_markdown(self) -> str:
        lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "|".join("---" for _ in COLUMNS) + "|"]
        lines += ["| " + " | ".join(r.cells()) + " |" for r in self.rows]
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow(r.cells())

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "pearson_monotone": self.pearson_monotone}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def grid_from_json(raw: list[dict]) -> list[AblationEntry]:
    return [AblationEntry(**e) for e in raw]


def _run_member(model_cfg: ModelConfig, train_cfg: TrainConfig, train_set, val_set) -> np.ndarray:
    model = SimilarityModel(model_cfg)
    best, _ = fit(model, train_set, val_set, train_cfg)
    model.load_state(best)
    return evaluate(model, val_set, train_cfg.threshold)[1]


def run_ablation(grid: Sequence[AblationEntry], data: EncodedDataset, folds: FoldAssignment,
                 fold_index: int, base_model: ModelConfig, base_train: TrainConfig,
                 threads: int | None = None) -> AblationTable:
    """Train every grid entry on the same split and seeds.

    Member runs fan out over ``threads`` workers (``SIMSCORE_THREADS`` by
    default); rows come back in grid order.
    """
    train_set, val_set = split_by_fold(data, folds, fold_index)
    threads = threads or int(os.environ.get("SIMSCORE_THREADS", "1"))
    jobs = []
    for ei, entry in enumerate(grid):
        members = entry.members if entry.members else [{}]
        for mi, extra in enumerate(members):
            mcfg = replace(base_model, **{**entry.model, **extra})
            tcfg = replace(base_train, **entry.train)
            jobs.append((ei, mi, mcfg, tcfg))

    def run(job):
        _, _, mcfg, tcfg = job
        try:
            return _run_member(mcfg, tcfg, train_set, val_set), None
        except Exception as exc:  # a failed member marks its row, it does not stop the table
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(run, jobs))

    rows = []
    for ei, entry in enumerate(grid):
        outs = [res for job, res in zip(jobs, results) if job[0] == ei]
        errors = [err for _, err in outs if err]
        if errors:
            rows.append(AblationRow(entry.name, failed=True, error=errors[0]))
            continue
        preds = [p for p, _ in outs]
        combined = preds[0] if len(preds) == 1 else blend([(p, 1.0) for p in preds])
        rep = metric_report(PredictionSet(combined, val_set.scores), base_train.threshold)
        rows.append(AblationRow(entry.name, rep.pearson, rep.mse, rep.f1, rep.auc))
    return AblationTable(rows)

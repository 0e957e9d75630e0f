"""Blending of member predictions into one ensemble score."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Record, Vocabulary, encode_records
from .errors import AlignmentError, CheckpointError, ConfigError
from .model.checkpoint import load_checkpoint
from .objectives import MetricReport, PredictionSet, metric_report


@dataclass
class MemberSpec:
    checkpoint: str
    head_variant: str = "standard"
    encoder_variant: str = "mlm_style"
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError(f"member weight must be >= 0, got {self.weight}")


@dataclass
class EnsembleOutput:
    members: list[np.ndarray]
    blended: np.ndarray
    weights: np.ndarray


def normalized_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0 or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("ensemble weights must be non-negative with a positive sum")
    return w / w.sum()


def blend(members: Sequence[tuple[np.ndarray, float]], method: str = "mean") -> np.ndarray:
    """Per-example weighted mean of member predictions.

    ``method="rank"`` averages normalized ranks instead of raw scores.
    """
    if not members:
        raise AlignmentError("nothing to blend")
    preds = [np.asarray(p, dtype=np.float64).reshape(-1) for p, _ in members]
    n = preds[0].size
    for i, p in enumerate(preds):
        if p.size != n:
            raise AlignmentError(f"member {i} has {p.size} predictions, expected {n}")
    w = normalized_weights([wt for _, wt in members])
    if method == "rank":
        preds = [(rankdata(p) - 1) / max(n - 1, 1) for p in preds]
    elif method != "mean":
        raise ConfigError(f"unknown blend method {method!r}")
    out = np.zeros(n)
    for p, wi in zip(preds, w):
        out += wi * p
    stacked = np.stack(preds)
    # rounding in the weighted sum must not leave the members' hull
    return np.clip(out, stacked.min(axis=0), stacked.max(axis=0))


def load_manifest(path) -> list[MemberSpec]:
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = raw["members"] if isinstance(raw, dict) else raw
    base = Path(path).parent
    specs = []
    for e in entries:
        spec = MemberSpec(**e)
        if not os.path.isabs(spec.checkpoint):
            spec.checkpoint = str(base / spec.checkpoint)
        specs.append(spec)
    if not specs:
        raise ConfigError("ensemble manifest lists no members")
    normalized_weights([s.weight for s in specs])
    return specs


def save_manifest(path, specs: Sequence[MemberSpec]) -> None:
    Path(path).write_text(json.dumps({"members": [asdict(s) for s in specs]}, indent=2, sort_keys=True))


def write_predictions(path, ids: Sequence[str], preds: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id", "prediction"))
        for rid, p in zip(ids, preds):
            w.writerow((rid, repr(float(p))))


def read_predictions(path) -> dict[str, float]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {r["id"]: float(r["prediction"]) for r in csv.DictReader(fh)}


def member_predictions(spec: MemberSpec, records: Sequence[Record]) -> np.ndarray:
    try:
        model, extra = load_checkpoint(spec.checkpoint)
    except CheckpointError as exc:
        raise CheckpointError(f"member {spec.checkpoint}: {exc}") from exc
    cfg = model.config
    if cfg.head_variant != spec.head_variant or cfg.encoder_variant != spec.encoder_variant:
        raise CheckpointError(
            f"member {spec.checkpoint}: manifest says {spec.head_variant}/{spec.encoder_variant}, "
            f"checkpoint holds {cfg.head_variant}/{cfg.encoder_variant}"
        )
    if "vocab" not in extra or "max_len" not in extra:
        raise CheckpointError(f"member {spec.checkpoint}: checkpoint lacks vocabulary metadata")
    data = encode_records(records, Vocabulary.from_list(extra["vocab"]), extra["max_len"])
    return model.predict(data.batch)


@dataclass
class EnsembleReport:
    blend: MetricReport
    members: list[MetricReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"blend": self.blend.to_dict(), "members": [m.to_dict() for m in self.members]}


def ensemble_evaluate(specs: Sequence[MemberSpec], records: Sequence[Record], threshold: float = 0.5,
                      method: str = "mean", threads: int | None = None):
    """Load, predict and blend every member; metrics for the blend and each member."""
    threads = threads or int(os.environ.get("SIMSCORE_THREADS", "1"))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        preds = list(pool.map(lambda s: member_predictions(s, records), specs))
    y = np.array([r.score for r in records])
    output = EnsembleOutput(
        members=preds,
        blended=blend([(p, s.weight) for p, s in zip(preds, specs)], method),
        weights=normalized_weights([s.weight for s in specs]),
    )
    report = EnsembleReport(
        blend=metric_report(PredictionSet(output.blended, y), threshold),
        members=[metric_report(PredictionSet(p, y), threshold) for p in preds],
    )
    return report, output

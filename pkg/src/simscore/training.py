"""Optimization loop: grouped learning rates, AWP, clipping, evaluation."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import EncodedDataset, FoldAssignment, shuffle_targets
from .errors import ConfigError, ContractError, NumericalAbort
from .model.network import SimilarityModel
from .objectives import MetricReport, PredictionSet, combined_loss, metric_report


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    lr_transformer: float = 2e-5
    lr_head: float = 1e-3
    weight_decay: float = 0.01
    awp_epsilon: float = 1e-3
    awp_start_epoch: int = 2
    use_awp: bool = True
    awp_prefixes: tuple[str, ...] | None = None
    shuffle_targets: bool = True
    lambda_mse: float = 0.0
    seed: int = 0
    eval_every: int = 0
    clip_norm: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.awp_prefixes is not None:
            self.awp_prefixes = tuple(self.awp_prefixes)
        self.validate()

    def validate(self) -> None:
        if self.awp_start_epoch < 1:
            raise ConfigError("awp_start_epoch must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (correlation loss)")
        if self.lr_transformer < 0 or self.lr_head < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.lambda_mse < 0:
            raise ConfigError("lambda_mse must be >= 0")
        if self.use_awp and self.awp_epsilon < 0:
            raise ConfigError("awp_epsilon must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["awp_prefixes"] is not None:
            d["awp_prefixes"] = list(d["awp_prefixes"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _decays(name: str) -> bool:
    return not (name.endswith(".b") or ".ln" in name)


def adam_step(params: dict[str, ad.Tensor], state: AdamState, lrs: dict[str, float],
              weight_decay: float = 0.0) -> None:
    """One AdamW step over ``params`` (decoupled decay skips biases and norms)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"trainable tensor {name!r} has no gradient")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        lr = lrs[name]
        if lr == 0.0:
            continue
        upd = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if weight_decay and _decays(name):
            upd = upd + weight_decay * p.data
        p.data -= lr * upd


def group_lrs(model: SimilarityModel, cfg: TrainConfig) -> dict[str, float]:
    return {
        name: cfg.lr_transformer if model.group_of(name) == "encoder" else cfg.lr_head
        for name in model.trainable()
    }


def update(model: SimilarityModel, state: AdamState, cfg: TrainConfig) -> None:
    """Apply one optimizer step with per-group learning rates; frozen tensors are skipped."""
    adam_step(model.trainable(), state, group_lrs(model, cfg), cfg.weight_decay)


def global_grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def clip_grad_norm(params, max_norm: float) -> float:
    params = list(params)
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ------------------------------------------------------------------------ AWP

def awp_step(model: SimilarityModel, loss_fn: Callable[[], ad.Tensor], epsilon: float,
             prefixes: tuple[str, ...] | None = None) -> float:
    """Adversarial weight perturbation on top of an existing clean backward.

    Each selected tensor ``w`` with gradient ``g`` moves to
    ``w + epsilon * |w| / |g| * g``; a second forward/backward accumulates
    its gradient onto the clean one, then weights are restored bitwise.
    Returns the adversarial loss value.
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    saved: dict[str, np.ndarray] = {}
    for name, p in model.trainable().items():
        if prefixes is not None and not name.startswith(prefixes):
            continue
        if p.grad is None:
            continue
        gnorm = float(np.linalg.norm(p.grad))
        if gnorm == 0.0:
            continue
        saved[name] = p.data.copy()
        p.data = p.data + (epsilon * float(np.linalg.norm(p.data)) / gnorm) * p.grad
    try:
        adv = loss_fn()
        adv.backward()
    finally:
        for name, w in saved.items():
            model.params[name].data = w
    return adv.item()


# ------------------------------------------------------------------ evaluation

def predict(model: SimilarityModel, data: EncodedDataset, batch_size: int = 64) -> np.ndarray:
    return model.predict(data.batch, batch_size)


def evaluate(model: SimilarityModel, data: EncodedDataset, threshold: float = 0.5):
    """Raw predictions and the four-metric report; no graph is recorded."""
    if len(data) == 0:
        raise ContractError("evaluate needs at least one record")
    preds = predict(model, data)
    return metric_report(PredictionSet(preds, data.scores), threshold), preds


# -------------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: dict


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    steps: int = 0
    aborted: bool = False
    series: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def best(self) -> dict | None:
        for e in self.epochs:
            if e.epoch == self.best_epoch:
                return e.val
        return None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "config": self.config,
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "steps": self.steps,
            "aborted": self.aborted,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def write_series_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "loss", "pearson", "mse", "f1", "auc"))
            for row in self.series:
                w.writerow([row.get(k) if row.get(k) is not None else "" for k in
                            ("step", "loss", "pearson", "mse", "f1", "auc")])


def _score_key(val: dict) -> float:
    p = val.get("pearson")
    return -math.inf if p is None else p


def split_by_fold(data: EncodedDataset, folds: FoldAssignment, fold_index: int):
    if not 0 <= fold_index < folds.k:
        raise ConfigError(f"fold_index {fold_index} outside [0, {folds.k})")
    missing = [i for i in data.ids if i not in folds]
    if missing:
        raise ContractError(f"{len(missing)} record(s) without a fold, e.g. {missing[0]!r}")
    val = [i for i, rid in enumerate(data.ids) if folds[rid] == fold_index]
    train = [i for i, rid in enumerate(data.ids) if folds[rid] != fold_index]
    if len(train) < 2 or not val:
        raise ContractError("fold split leaves too few training or validation records")
    return data.subset(train), data.subset(val)


Hook = Callable[[str, int, SimilarityModel], None]


def train(model: SimilarityModel, data: EncodedDataset, folds: FoldAssignment, fold_index: int,
          cfg: TrainConfig, hook: Hook | None = None):
    """Train on every fold except ``fold_index`` and validate on it.

    Returns ``(best_state, report)`` where ``best_state`` holds the
    parameter arrays from the epoch with the highest validation Pearson.
    ``hook(event, step, model)`` fires on ``"clean_backward"`` and
    ``"before_update"``.
    """
    train_set, val_set = split_by_fold(data, folds, fold_index)
    return fit(model, train_set, val_set, cfg, hook)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    n_batches = max(1, math.ceil(n / batch_size))
    # balanced chunks keep every batch >= 2 for the correlation loss
    return [b for b in np.array_split(order, n_batches) if len(b)]


def fit(model: SimilarityModel, train_set: EncodedDataset, val_set: EncodedDataset,
        cfg: TrainConfig, hook: Hook | None = None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    params = model.trainable()
    report = TrainReport(config=cfg.to_dict())
    best_state = model.state()
    best_score = -math.inf
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for rows in _batches(len(train_set), cfg.batch_size, rng):
            if len(rows) < 2:
                continue
            if cfg.shuffle_targets:
                rows = np.asarray(shuffle_targets(list(rows), step, cfg.seed))
            batch = train_set.batch.take(rows)
            y = train_set.scores[rows]

            def loss_fn():
                return combined_loss(model.forward(batch), y, cfg.lambda_mse)

            model.zero_grads()
            loss = loss_fn()
            value = loss.item()
            if not math.isfinite(value):
                report.aborted = True
                raise NumericalAbort("non-finite training loss", {
                    "step": step, "epoch": epoch,
                    "lr_transformer": cfg.lr_transformer, "lr_head": cfg.lr_head,
                })
            loss.backward()
            if hook:
                hook("clean_backward", step, model)
            if cfg.use_awp and epoch >= cfg.awp_start_epoch:
                awp_step(model, loss_fn, cfg.awp_epsilon, cfg.awp_prefixes)
            norm = clip_grad_norm(params.values(), cfg.clip_norm)
            if not math.isfinite(norm):
                report.aborted = True
                raise NumericalAbort("non-finite gradient norm", {
                    "step": step, "epoch": epoch, "grad_norm": norm,
                    "per_tensor": {k: float(np.linalg.norm(p.grad)) for k, p in params.items()
                                   if p.grad is not None},
                })
            if hook:
                hook("before_update", step, model)
            update(model, state, cfg)
            model.zero_grads()
            losses.append(value)
            step += 1
            row = {"step": step, "loss": value}
            if cfg.eval_every and step % cfg.eval_every == 0:
                row.update(_val_row(model, val_set, cfg))
            report.series.append(row)

        val = evaluate(model, val_set, cfg.threshold)[0].to_dict()
        report.epochs.append(EpochRecord(epoch, float(np.mean(losses)) if losses else math.nan, val))
        if report.series:
            report.series[-1].update({k: val[k] for k in ("pearson", "mse", "f1", "auc")})
        if _score_key(val) > best_score or report.best_epoch is None:
            best_score = _score_key(val)
            report.best_epoch = epoch
            best_state = model.state()

    report.steps = step
    report.wall_time = time.perf_counter() - t0
    return best_state, report


def _val_row(model, val_set, cfg) -> dict:
    rep = evaluate(model, val_set, cfg.threshold)[0]
    return {"pearson": rep.pearson, "mse": rep.mse, "f1": rep.f1, "auc": rep.auc}

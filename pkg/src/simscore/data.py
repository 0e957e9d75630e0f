"""Dataset ingestion, tokenization, fold construction and batch shuffling."""
from __future__ import annotations

import csv
import logging
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError, IngestError
from .model.network import BatchInput, sector_index

log = logging.getLogger(__name__)

COLUMNS = ("id", "anchor", "target", "context", "score")
CONTEXT_RE = re.compile(r"^[A-Za-z][0-9]+$")
WORD_RE = re.compile(r"[a-z0-9]+")

PAD, UNK, SEP, CLS = 0, 1, 2, 3
SPECIALS = ("[PAD]", "[UNK]", "[SEP]", "[CLS]")


@dataclass(frozen=True)
class Record:
    id: str
    anchor: str
    target: str
    context: str
    score: float

    def __post_init__(self):
        if not self.anchor.strip() or not self.target.strip():
            raise FormatError("anchor and target must be non-empty")
        if not CONTEXT_RE.match(self.context):
            raise FormatError(f"context {self.context!r} is not a letter followed by digits")
        if not 0.0 <= self.score <= 1.0:
            raise FormatError(f"score {self.score} outside [0, 1]")


def words(text: str) -> list[str]:
    return WORD_RE.findall(text.lower())


def sector_of(context: str) -> str:
    if not CONTEXT_RE.match(context):
        raise FormatError(f"context {context!r} is not a letter followed by digits")
    return context[0].upper()


# ------------------------------------------------------------------ ingestion

def ingest(path, skip_bad: bool = False) -> list[Record]:
    """Read a CSV with header ``id,anchor,target,context,score``.

    Invalid rows raise :class:`IngestError` listing every bad line, unless
    ``skip_bad`` is set, in which case they are dropped with a warning.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            warnings.warn(f"{path} is empty", stacklevel=2)
            return []
        missing = [c for c in COLUMNS if c not in reader.fieldnames]
        if missing:
            raise IngestError([(1, f"missing columns {missing}")])
        records, errors = [], []
        for row in reader:
            line = reader.line_num
            try:
                score = float(row["score"])
            except (TypeError, ValueError):
                errors.append((line, f"score {row['score']!r} is not a number"))
                continue
            try:
                records.append(Record(row["id"], row["anchor"], row["target"], row["context"], score))
            except FormatError as exc:
                errors.append((line, str(exc)))
    if not records and not errors:
        warnings.warn(f"{path} has no data rows", stacklevel=2)
    if errors:
        if not skip_bad:
            raise IngestError(errors)
        warnings.warn(f"skipped {len(errors)} invalid row(s) in {path}", stacklevel=2)
    return records


def write_records(path, records: Sequence[Record]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([r.id, r.anchor, r.target, r.context, repr(r.score)])


# ------------------------------------------------------------------ vocabulary

class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.itos = list(SPECIALS) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, text: str) -> list[int]:
        return [self.id(w) for w in words(text)]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids if i != PAD]

    def to_list(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    @classmethod
    def from_list(cls, tokens) -> "Vocabulary":
        return cls(tokens)


def build_vocab(records: Sequence[Record], min_freq: int = 1) -> Vocabulary:
    """Word-level vocabulary ordered by descending count, then alphabetically."""
    counts: Counter[str] = Counter()
    for r in records:
        counts.update(words(r.anchor))
        counts.update(words(r.target))
        counts[sector_of(r.context).lower()] += 1
    kept = [t for t, c in counts.items() if c >= min_freq and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def tokenize_pad(v: Vocabulary, anchor: str, target: str, sector: str, max_len: int):
    """``CLS anchor SEP target SEP sector SEP`` then PAD up to ``max_len``.

    Over-long inputs lose target words first, then anchor words.
    Returns ``(ids, mask)`` int64/float64 arrays of length ``max_len``.
    """
    a, t = v.encode(anchor), v.encode(target)
    s = [v.id(sector.lower())]
    overflow = 1 + len(a) + 1 + len(t) + 1 + 1 + 1 - max_len
    if overflow > 0:
        log.info("truncating %d token(s) from %r / %r", overflow, anchor, target)
        cut = min(overflow, len(t))
        t = t[: len(t) - cut]
        overflow -= cut
        if overflow > 0:
            if overflow >= len(a):
                raise ConfigError(f"max_len {max_len} too small for the fixed layout")
            a = a[: len(a) - overflow]
    seq = [CLS, *a, SEP, *t, SEP, *s, SEP]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[: len(seq)] = seq
    mask = (ids != PAD).astype(np.float64)
    return ids, mask


@dataclass
class EncodedDataset:
    ids: list[str]
    batch: BatchInput
    scores: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, rows) -> "EncodedDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return EncodedDataset([self.ids[i] for i in rows], self.batch.take(rows), self.scores[rows])


def encode_records(records: Sequence[Record], vocab: Vocabulary, max_len: int) -> EncodedDataset:
    rows = [tokenize_pad(vocab, r.anchor, r.target, sector_of(r.context), max_len) for r in records]
    ids = np.stack([x for x, _ in rows]) if rows else np.zeros((0, max_len), dtype=np.int64)
    mask = np.stack([m for _, m in rows]) if rows else np.zeros((0, max_len))
    sectors = np.array([sector_index(sector_of(r.context)) for r in records], dtype=np.int64)
    return EncodedDataset(
        [r.id for r in records],
        BatchInput(ids, mask, sectors),
        np.array([r.score for r in records], dtype=np.float64),
    )


# ----------------------------------------------------------------------- folds

class FoldAssignment(dict):
    """Record id -> fold index."""

    def __init__(self, mapping=(), k: int | None = None):
        super().__init__(mapping)
        self.k = k if k is not None else (max(self.values()) + 1 if self else 0)

    def members(self, fold: int) -> list[str]:
        return [rid for rid, f in self.items() if f == fold]

    def sizes(self) -> list[int]:
        counts = Counter(self.values())
        return [counts.get(f, 0) for f in range(self.k)]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("id", "fold"))
            for rid, f in self.items():
                w.writerow((rid, f))

    @classmethod
    def from_csv(cls, path, k: int | None = None) -> "FoldAssignment":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = [(r["id"], int(r["fold"])) for r in csv.DictReader(fh)]
        return cls(rows, k)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def anchor_groups(records: Sequence[Record]) -> list[list[int]]:
    """Record indices grouped by anchor, with anchors sharing any word merged."""
    by_anchor: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        by_anchor[r.anchor].append(i)
    anchors = sorted(by_anchor)
    uf = _UnionFind(len(anchors))
    first_seen: dict[str, int] = {}
    for ai, a in enumerate(anchors):
        for w in set(words(a)):
            if w in first_seen:
                uf.union(first_seen[w], ai)
            else:
                first_seen[w] = ai
    merged: dict[int, list[int]] = defaultdict(list)
    for ai, a in enumerate(anchors):
        merged[uf.find(ai)].extend(by_anchor[a])
    return [sorted(g) for _, g in sorted(merged.items())]


def make_folds(records: Sequence[Record], k: int = 5, n_bins: int = 5, seed: int = 0) -> FoldAssignment:
    """Anchor-grouped, score-stratified fold assignment.

    Super-groups (anchors linked through shared words) are placed largest
    first.  Each goes to the fold holding the fewest records of its score
    bin, ties broken by total fold size and then by a per-bin rotation.
    """
    if k < 2:
        raise ConfigError(f"need k >= 2 folds, got {k}")
    if not records:
        raise ContractError("cannot build folds from zero records")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    groups = anchor_groups(records)
    if k > len(groups):
        raise ConfigError(f"k={k} exceeds the {len(groups)} independent anchor groups")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(groups))
    order = sorted(order, key=lambda g: -len(groups[g]))  # stable: seed breaks size ties
    rotation = rng.integers(k)
    sizes = [0] * k
    bin_counts = [[0] * n_bins for _ in range(k)]
    assignment = FoldAssignment(k=k)
    for g in order:
        members = groups[g]
        avg = float(np.mean([records[i].score for i in members]))
        b = min(int(avg * n_bins), n_bins - 1)
        fold = min(
            range(k),
            key=lambda f: (bin_counts[f][b], sizes[f], (f - b - rotation) % k),
        )
        sizes[fold] += len(members)
        bin_counts[fold][b] += len(members)
        for i in members:
            assignment[records[i].id] = fold
    # restore input order for stable CSV output
    return FoldAssignment(((r.id, assignment[r.id]) for r in records), k=k)


@dataclass
class FoldAudit:
    k: int
    unassigned: int
    anchor_splits: int
    shared_word_splits: int
    sizes: list[int]
    size_ratio: float
    fold_means: list[float]
    global_mean: float
    max_mean_deviation: float
    mean_tolerance: float = 0.1
    ratio_limit: float = 1.5

    @property
    def ok(self) -> bool:
        return (
            self.unassigned == 0
            and self.anchor_splits == 0
            and self.shared_word_splits == 0
            and self.size_ratio <= self.ratio_limit
            and self.max_mean_deviation <= self.mean_tolerance
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def audit_folds(records: Sequence[Record], folds: FoldAssignment, mean_tolerance: float = 0.1,
                ratio_limit: float = 1.5) -> FoldAudit:
    """Exhaustive check of fold invariants (pairwise, no union-find)."""
    unassigned = sum(1 for r in records if r.id not in folds)
    anchor_folds: dict[str, set[int]] = defaultdict(set)
    for r in records:
        if r.id in folds:
            anchor_folds[r.anchor].add(folds[r.id])
    anchor_splits = sum(1 for fs in anchor_folds.values() if len(fs) > 1)
    anchors = sorted(anchor_folds)
    wsets = {a: set(words(a)) for a in anchors}
    shared = 0
    for i, a in enumerate(anchors):
        for b in anchors[i + 1 :]:
            if wsets[a] & wsets[b] and anchor_folds[a] != anchor_folds[b]:
                shared += 1
    sizes = folds.sizes()
    nonzero = [s for s in sizes if s]
    ratio = max(sizes) / min(sizes) if min(sizes) > 0 else float("inf")
    scores = defaultdict(list)
    for r in records:
        if r.id in folds:
            scores[folds[r.id]].append(r.score)
    gmean = float(np.mean([r.score for r in records]))
    means = [float(np.mean(scores[f])) if scores[f] else float("nan") for f in range(folds.k)]
    dev = max((abs(m - gmean) for m in means if m == m), default=0.0)
    if len(nonzero) < folds.k:
        dev = float("inf")
    return FoldAudit(
        k=folds.k,
        unassigned=unassigned,
        anchor_splits=anchor_splits,
        shared_word_splits=shared,
        sizes=sizes,
        size_ratio=ratio,
        fold_means=means,
        global_mean=gmean,
        max_mean_deviation=dev,
        mean_tolerance=mean_tolerance,
        ratio_limit=ratio_limit,
    )


# ------------------------------------------------------------------- shuffling

def shuffle_targets(batch: Sequence, step: int, seed: int) -> list:
    """Reorder a batch as a pure function of ``(seed, step)``.

    Items move as whole units, so each (anchor, target, score) stays intact.
    """
    if len(batch) == 0:
        raise ContractError("cannot shuffle an empty batch")
    perm = np.random.default_rng([seed, step]).permutation(len(batch))
    return [batch[i] for i in perm]

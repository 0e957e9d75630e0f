"""Seeded synthetic datasets used by tests, demos and the CLI."""
from __future__ import annotations

import numpy as np

from .data import CLS, PAD, SEP, Record, Vocabulary
from .model.network import BatchInput

_ANCHOR_WORDS = (
    "abatement absorber actuator adhesive airfoil alloy antenna armature axle bearing "
    "bellows binder blade bobbin boiler bracket brake buffer bushing cable caliper "
    "capacitor carburetor casing cathode chassis clamp clutch coil collar compressor "
    "conduit coupling crank cylinder damper diode dowel drum electrode emitter "
    "filament flange gasket gear girder grommet hinge hopper impeller injector"
).split()
_TARGET_WORDS = (
    "adjustable alternating ambient angular annular auxiliary axial balanced beveled "
    "coaxial composite conical curved detachable dynamic elastic flexible fluid "
    "helical hollow hydraulic inner insulated lateral linear magnetic modular movable "
    "nested offset outer planar porous pressurized radial reinforced rigid rotary "
    "sealed sliding static thermal tubular variable"
).split()
_SECTORS = "ABCDEFGH"


def _context(rng) -> str:
    return f"{_SECTORS[rng.integers(len(_SECTORS))]}{rng.integers(1, 100):02d}"


def fold_fixture(seed: int = 0, n_anchors: int = 40, per_anchor: int = 5) -> list[Record]:
    """Anchor-grouped records; a handful of anchor pairs share one word.

    Scores sit on the 0.25 grid around a per-anchor level.
    """
    rng = np.random.default_rng(seed)
    if n_anchors > len(_ANCHOR_WORDS):
        raise ValueError(f"at most {len(_ANCHOR_WORDS)} anchors supported")
    pool = [str(w) for w in rng.permutation(_ANCHOR_WORDS)]
    anchors = [[pool[i], f"unit{i}"] for i in range(n_anchors)]
    # every fifth anchor borrows the head word of the previous one
    for i in range(5, n_anchors, 5):
        anchors[i][0] = anchors[i - 1][0]
    records = []
    for i, words in enumerate(anchors):
        anchor = " ".join(words)
        level = rng.uniform(0.1, 0.9)
        for j in range(per_anchor):
            t = rng.choice(_TARGET_WORDS, size=2, replace=False)
            target = f"{t[0]} {t[1]} {words[1]}" if rng.random() < 0.5 else f"{t[0]} {t[1]}"
            score = float(np.clip(np.round((level + rng.normal(0, 0.2)) * 4) / 4, 0.0, 1.0)) + 0.0
            records.append(Record(f"r{i:03d}_{j}", anchor, target, _context(rng), score))
    return records


OVERLAP_LEXICON = ("bearing", "shaft", "rotor", "spindle", "housing", "seal", "hub", "axle")
OVERLAP_NOISE = ("lamp", "fabric", "resin", "valve", "screen", "pixel", "sugar", "paper")
TARGET_LEN = 4


def overlap_fixture(seed: int = 0, n_train: int = 64, n_val: int = 32):
    """Scores equal the fraction of target words drawn from the anchor lexicon.

    Anchors are three lexicon words; targets mix lexicon and noise words.
    The score is linear in bag-of-words counts, so it is learnable by least
    squares.  Returns ``(train_records, val_records)``.
    """
    rng = np.random.default_rng(seed)

    def make(n, prefix):
        out = []
        for i in range(n):
            anchor = " ".join(rng.choice(OVERLAP_LEXICON, size=3, replace=False))
            k = int(rng.integers(0, TARGET_LEN + 1))
            words = list(rng.choice(OVERLAP_LEXICON, size=k)) + list(rng.choice(OVERLAP_NOISE, size=TARGET_LEN - k))
            words = [str(w) for w in rng.permutation(words)]
            out.append(Record(f"{prefix}{i:03d}", anchor, " ".join(words), _context(rng), k / TARGET_LEN))
        return out

    return make(n_train, "tr"), make(n_val, "va")


def bag_of_words(records, vocab_words) -> np.ndarray:
    """Count matrix over target words, with a trailing intercept column."""
    index = {w: i for i, w in enumerate(vocab_words)}
    X = np.zeros((len(records), len(vocab_words) + 1))
    for r, rec in enumerate(records):
        for w in rec.target.lower().split():
            if w in index:
                X[r, index[w]] += 1
        X[r, -1] = 1.0
    return X


_SUBJECTS = "the rotor the valve a gasket the shaft a spring the sensor the housing a bearing".split(" ")
_VERBS = "holds drives seals supports rotates locks cools heats guides".split()
_OBJECTS = "fluid pressure load heat torque motion current signal flow".split()
_MODS = "quickly firmly evenly safely gently".split()


def rtd_corpus(seed: int = 0, n: int = 50) -> list[str]:
    """Short templated sentences for replaced-token-detection pretraining."""
    rng = np.random.default_rng(seed)
    subjects = [" ".join(_SUBJECTS[i : i + 2]) for i in range(0, len(_SUBJECTS), 2)]
    out = []
    for _ in range(n):
        s = f"{rng.choice(subjects)} {rng.choice(_VERBS)} the {rng.choice(_OBJECTS)}"
        if rng.random() < 0.5:
            s += f" {rng.choice(_MODS)}"
        out.append(s)
    return out


def sentence_vocab(sentences) -> Vocabulary:
    words = sorted({w for s in sentences for w in s.lower().split()})
    return Vocabulary(words)


def encode_sentences(sentences, vocab: Vocabulary, max_len: int) -> BatchInput:
    ids = np.full((len(sentences), max_len), PAD, dtype=np.int64)
    for i, s in enumerate(sentences):
        seq = [CLS, *vocab.encode(s)[: max_len - 2], SEP]
        ids[i, : len(seq)] = seq
    return BatchInput(ids, (ids != PAD).astype(np.float64))

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from simscore.data import build_vocab, encode_records
from simscore.model import tiny_config
from simscore.synthetic import overlap_fixture

MAX_LEN = 16


def overlap_data(seed=0, n_train=24, n_val=12):
    tr, va = overlap_fixture(seed, n_train, n_val)
    vocab = build_vocab(tr + va)
    return encode_records(tr, vocab, MAX_LEN), encode_records(va, vocab, MAX_LEN), len(vocab)


def small_config(vocab_size, seed=0, **kw):
    base = dict(vocab_size=vocab_size, max_seq_len=MAX_LEN, init_scale=0.1, freeze_embeddings=True)
    base.update(kw)
    return tiny_config(seed, **base)


@pytest.fixture
def small():
    return overlap_data()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

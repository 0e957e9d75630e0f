# Blend member predictions, then run a reduced ablation table.
from dataclasses import replace

import numpy as np

from simscore.ablation import DEFAULT_GRID, run_ablation
from simscore.data import FoldAssignment, build_vocab, encode_records
from simscore.ensemble import blend
from simscore.model import tiny_config
from simscore.objectives import PredictionSet, mse_metric
from simscore.synthetic import overlap_fixture
from simscore.training import TrainConfig

# Errors that cancel: each member is off by the same amount in opposite directions.
y = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
e = np.array([0.125, -0.25, 0.0625, 0.125, -0.5])
a, b = y + e, y - e
mixed = blend([(a, 1.0), (b, 1.0)])
print("member MSE:", mse_metric(PredictionSet(a, y)), mse_metric(PredictionSet(b, y)))
print("blend MSE: ", mse_metric(PredictionSet(mixed, y)))

# Weights are normalized: (1, 3) gives 0.25a + 0.75b.
print(blend([(a, 1), (b, 3)]), 0.25 * a + 0.75 * b)

# Ablation over the five standard rows, tiny model and a few epochs so it finishes quickly.
tr, va = overlap_fixture(seed=1)
vocab = build_vocab(tr)
data = encode_records(tr + va, vocab, max_len=16)
folds = FoldAssignment([(r.id, 1) for r in tr] + [(r.id, 0) for r in va], k=2)
base_model = tiny_config(0, vocab_size=len(vocab), max_seq_len=16, init_scale=0.1, freeze_embeddings=True)
base_train = TrainConfig(epochs=4, batch_size=16, lr_transformer=1e-3, lr_head=1e-2)

table = run_ablation(DEFAULT_GRID, data, folds, 0, base_model, base_train)
print(table.to_markdown())
print("Pearson rises row over row:", table.pearson_monotone)

# A variant: ensemble members padded to a shared width before their heads.
wide = replace(base_model, head_variant="wide", ensemble_width=32)
print("wide member feature width:", wide.feature_width, "-> head width", wide.head_width)

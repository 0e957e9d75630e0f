# Train the full scorer on a fixture whose score is the share of lexicon words in the target.
import numpy as np

from simscore.data import build_vocab, encode_records
from simscore.model import ModelConfig, SimilarityModel
from simscore.objectives import PredictionSet, pearson_metric
from simscore.synthetic import bag_of_words, overlap_fixture
from simscore.training import TrainConfig, fit

train_records, val_records = overlap_fixture(seed=0)
print(train_records[0])

# First, a linear oracle: least squares on target bag-of-words already explains the score.
words = sorted({w for r in train_records for w in r.target.split()})
xtr, xva = bag_of_words(train_records, words), bag_of_words(val_records, words)
coef, *_ = np.linalg.lstsq(xtr, [r.score for r in train_records], rcond=None)
print("least-squares val Pearson:", round(pearson_metric(PredictionSet(xva @ coef, [r.score for r in val_records])), 4))

vocab = build_vocab(train_records)
train_set = encode_records(train_records, vocab, max_len=16)
val_set = encode_records(val_records, vocab, max_len=16)

# Encoder at 2e-5, head at 1e-3, AWP from epoch 2, batch reordering every step.
model = SimilarityModel(ModelConfig(vocab_size=len(vocab), max_seq_len=16))
best, report = fit(model, train_set, val_set, TrainConfig(epochs=50, batch_size=16))

for e in report.epochs[::10]:
    print(f"epoch {e.epoch:2d} loss {e.train_loss:+.3f} val pearson {e.val['pearson']:.4f}")
print("best epoch", report.best_epoch, "after", report.steps, "steps:", round(report.best["pearson"], 4))

# Pearson ignores scale, so raw outputs are not calibrated; set lambda_mse > 0 if MSE matters.
model.load_state(best)
print("first predictions:", np.round(model.predict(val_set.batch)[:5], 3), "truth:", val_set.scores[:5])

"""Finite-difference verification of the full scoring path."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..objectives import pearson_loss
from .network import BatchInput, ModelConfig, SimilarityModel

# Pearson loss ignores a constant shift of every prediction, so the output
# bias has an identically zero gradient; its check is a pure noise ratio.
SHIFT_INVARIANT = ("fc.b",)


def tiny_config(seed: int = 0, **overrides) -> ModelConfig:
    base = dict(
        vocab_size=20, embed_dim=8, n_heads=2, ffn_dim=16, lstm_hidden=4,
        max_seq_len=8, max_rel_dist=3, seed=seed, freeze_embeddings=False, init_scale=0.5,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_batch(cfg: ModelConfig, rng: np.random.Generator, batch: int = 4, seq: int = 8) -> BatchInput:
    ids = rng.integers(4, cfg.vocab_size, size=(batch, seq))
    mask = np.ones((batch, seq))
    for r in range(1, batch):
        cut = int(rng.integers(seq // 2, seq + 1))
        mask[r, cut:] = 0.0
    ids[mask == 0] = 0
    sectors = rng.integers(0, 26, size=batch)
    return BatchInput(ids, mask, sectors)


def end_to_end_gradcheck(seed: int, eps: float = 1e-5, max_coords: int | None = 6, **overrides):
    """Gradcheck Pearson loss through encoder, Bi-LSTM, pooling and head.

    Returns ``(report, shift_grad)`` where ``shift_grad`` is the largest
    analytic gradient magnitude on the shift-invariant output bias.
    """
    rng = np.random.default_rng(seed)
    model = SimilarityModel(tiny_config(seed, **overrides))
    batch = random_batch(model.config, rng)
    y = rng.uniform(0.0, 1.0, size=batch.batch_size)

    def f():
        return pearson_loss(model.forward(batch), y)

    model.zero_grads()
    f().backward()
    shift_grad = max(float(np.max(np.abs(model.params[k].grad))) for k in SHIFT_INVARIANT)
    checked = {k: t for k, t in model.params.items() if k not in SHIFT_INVARIANT and t.requires_grad}
    report = ad.gradcheck(f, checked, eps=eps, tol=1e-4, max_coords=max_coords, rng=rng)
    return report, shift_grad

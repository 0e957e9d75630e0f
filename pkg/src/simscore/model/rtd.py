"""Replaced-token-detection pretraining for the encoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, ContractError
from .network import BatchInput, SimilarityModel

N_SPECIAL = 4


@dataclass
class RTDResult:
    model: SimilarityModel
    losses: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    def final_loss(self, window: int = 50) -> float:
        return float(np.mean(self.losses[-window:]))


def corrupt_tokens(batch: BatchInput, vocab_size: int, replace_prob: float, rng: np.random.Generator):
    """Substitute random non-special tokens; returns (corrupted ids, labels).

    A substitute that happens to equal the original token is labelled
    original.
    """
    ids = batch.token_ids
    eligible = (batch.attention_mask > 0) & (ids >= N_SPECIAL)
    pick = eligible & (rng.random(ids.shape) < replace_prob)
    repl = rng.integers(N_SPECIAL, vocab_size, size=ids.shape)
    corrupted = np.where(pick, repl, ids)
    labels = (corrupted != ids).astype(np.float64)
    return corrupted, labels


def rtd_logits(model: SimilarityModel, batch: BatchInput) -> ad.Tensor:
    h = model.encode(batch)
    return ad.matmul(h, model.params["rtd.w"]) + model.params["rtd.b"]


def rtd_loss(model: SimilarityModel, batch: BatchInput, labels: np.ndarray) -> ad.Tensor:
    """Binary cross-entropy over real (non-pad) positions."""
    z = rtd_logits(model, batch)
    w = batch.attention_mask / batch.attention_mask.sum()
    per_tok = ad.log_sigmoid(z) * labels + ad.log_sigmoid(-z) * (1.0 - labels)
    return -ad.tsum(per_tok * w)


def rtd_pretrain(
    model: SimilarityModel,
    corpus: BatchInput,
    steps: int = 500,
    replace_prob: float = 0.15,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> RTDResult:
    """Train encoder plus the token-level detection head with Adam."""
    if model.config.encoder_variant != "rtd_style":
        raise ConfigError("rtd_pretrain requires encoder_variant='rtd_style'")
    if not 0.0 < replace_prob < 1.0:
        raise ConfigError(f"replace_prob must lie in (0,1), got {replace_prob}")
    if corpus.batch_size == 0:
        raise ContractError("empty pretraining corpus")
    from ..training import AdamState, adam_step

    rng = np.random.default_rng(seed)
    params = {
        k: t for k, t in model.params.items()
        if t.requires_grad and model.group_of(k) in ("encoder", "pretrain")
    }
    state = AdamState()
    result = RTDResult(model)
    n = corpus.batch_size
    for _ in range(steps):
        rows = rng.choice(n, size=min(batch_size, n), replace=False)
        batch = corpus.take(rows)
        corrupted, labels = corrupt_tokens(batch, model.config.vocab_size, replace_prob, rng)
        cb = BatchInput(corrupted, batch.attention_mask)
        ad.zero_grads(params.values())
        loss = rtd_loss(model, cb, labels)
        loss.backward()
        result.losses.append(loss.item())
        adam_step(params, state, {k: lr for k in params}, weight_decay=0.0)
    ad.zero_grads(params.values())
    return result

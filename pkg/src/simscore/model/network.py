from __future__ import annotations

import string
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigError, ContractError, DimensionError, VocabularyError

SECTOR_SYMBOLS = string.ascii_uppercase

HEAD_VARIANTS = ("standard", "wide", "sector")
ENCODER_VARIANTS = ("mlm_style", "rtd_style")
POOLINGS = ("attention", "mean", "cls")


def sector_index(symbol: str) -> int:
    idx = SECTOR_SYMBOLS.find(symbol.upper()) if len(symbol) == 1 else -1
    if idx < 0:
        raise VocabularyError(f"unknown sector symbol {symbol!r}")
    return idx


@dataclass
class ModelConfig:
    vocab_size: int = 64
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    lstm_hidden: int = 32
    lstm_layers: int = 2
    max_seq_len: int = 32
    max_rel_dist: int = 8
    head_variant: str = "standard"
    encoder_variant: str = "mlm_style"
    freeze_embeddings: bool = True
    use_lstm: bool = True
    pooling: str = "attention"
    sector_embed_dim: int = 8
    sector_hidden: int = 8
    ensemble_width: int | None = None
    init_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.head_variant not in HEAD_VARIANTS:
            raise ConfigError(f"head_variant must be one of {HEAD_VARIANTS}")
        if self.encoder_variant not in ENCODER_VARIANTS:
            raise ConfigError(f"encoder_variant must be one of {ENCODER_VARIANTS}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")
        if self.use_lstm and self.lstm_layers < 1:
            raise ConfigError("lstm_layers must be >= 1")
        if self.ensemble_width is not None and self.ensemble_width < self.feature_width:
            raise ConfigError(
                f"ensemble_width {self.ensemble_width} smaller than feature width {self.feature_width}"
            )

    @property
    def sequence_width(self) -> int:
        return 2 * self.lstm_hidden if self.use_lstm else self.embed_dim

    @property
    def context_width(self) -> int:
        if self.head_variant == "wide":
            return self.embed_dim
        if self.head_variant == "sector":
            return 2 * self.sector_hidden
        return 0

    @property
    def feature_width(self) -> int:
        return self.sequence_width + self.context_width

    @property
    def head_width(self) -> int:
        return self.ensemble_width if self.ensemble_width is not None else self.feature_width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class BatchInput:
    token_ids: np.ndarray
    attention_mask: np.ndarray
    sector_ids: np.ndarray | None = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.attention_mask = np.asarray(self.attention_mask, dtype=np.float64)
        if self.token_ids.ndim != 2 or self.token_ids.shape != self.attention_mask.shape:
            raise DimensionError(
                f"token_ids {self.token_ids.shape} and mask {self.attention_mask.shape} must be equal 2-D"
            )
        if not np.all(self.attention_mask.sum(axis=1) >= 1):
            raise ContractError("every row needs at least one unmasked token")
        if self.sector_ids is not None:
            self.sector_ids = np.asarray(self.sector_ids, dtype=np.int64).reshape(-1)

    @property
    def batch_size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]

    def take(self, rows) -> "BatchInput":
        rows = np.asarray(rows)
        return BatchInput(
            self.token_ids[rows],
            self.attention_mask[rows],
            None if self.sector_ids is None else self.sector_ids[rows],
        )


def _lstm_names(prefix: str, n_layers: int) -> Iterator[str]:
    for layer in range(n_layers):
        for direction in ("fwd", "bwd"):
            yield f"{prefix}{layer}.{direction}"


class SimilarityModel:
    """Encoder, optional Bi-LSTM, pooling and a scalar scoring head.

    Parameters live in ``self.params`` (name -> Tensor); their group is
    derived from the name prefix, see :meth:`group_of`.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params: dict[str, Tensor] = params if params is not None else self._init_params()
        self.apply_freezing()

    # ---------------------------------------------------------- parameters
    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        s = cfg.init_scale
        p: dict[str, np.ndarray] = {}

        def u(*shape):
            return rng.uniform(-s, s, size=shape)

        d, h = cfg.embed_dim, cfg.n_heads
        p["embed.tokens"] = u(cfg.vocab_size, d)
        p["embed.ln.g"] = np.ones(d)
        p["embed.ln.b"] = np.zeros(d)
        for layer in range(cfg.n_layers):
            pre = f"enc{layer}"
            p[f"{pre}.rel_bias"] = u(2 * cfg.max_rel_dist + 1, h)
            for proj in ("q", "k", "v", "o"):
                p[f"{pre}.{proj}.w"] = u(d, d)
                # a key bias shifts every score in a query row equally; softmax ignores it
                if proj != "k":
                    p[f"{pre}.{proj}.b"] = u(d)
            p[f"{pre}.ln1.g"] = np.ones(d)
            p[f"{pre}.ln1.b"] = np.zeros(d)
            p[f"{pre}.ffn1.w"] = u(d, cfg.ffn_dim)
            p[f"{pre}.ffn1.b"] = u(cfg.ffn_dim)
            p[f"{pre}.ffn2.w"] = u(cfg.ffn_dim, d)
            p[f"{pre}.ffn2.b"] = u(d)
            p[f"{pre}.ln2.g"] = np.ones(d)
            p[f"{pre}.ln2.b"] = np.zeros(d)
        if cfg.use_lstm:
            self._init_lstm(p, "lstm", d, cfg.lstm_hidden, cfg.lstm_layers, u)
        width = cfg.sequence_width
        if cfg.pooling == "attention":
            p["pool.w"] = u(width)
        if cfg.head_variant == "sector":
            p["sector.embed"] = u(len(SECTOR_SYMBOLS), cfg.sector_embed_dim)
            self._init_lstm(p, "sector.lstm", cfg.sector_embed_dim, cfg.sector_hidden, 1, u)
        if cfg.ensemble_width is not None:
            p["expand.w"] = u(cfg.feature_width, cfg.ensemble_width)
        p["fc.w"] = u(cfg.head_width)
        p["fc.b"] = u()
        if cfg.encoder_variant == "rtd_style":
            p["rtd.w"] = u(d)
            p["rtd.b"] = u()
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    @staticmethod
    def _init_lstm(p, prefix, in_dim, hidden, n_layers, u):
        for layer, name in enumerate(_lstm_names(prefix, n_layers)):
            width = in_dim if name.startswith(f"{prefix}0.") else 2 * hidden
            p[f"{name}.w_ih"] = u(width, 4 * hidden)
            p[f"{name}.w_hh"] = u(hidden, 4 * hidden)
            b = u(4 * hidden)
            b[hidden : 2 * hidden] = 1.0  # forget gate
            p[f"{name}.b"] = b

    def apply_freezing(self) -> None:
        emb = self.params.get("embed.tokens")
        if emb is not None:
            emb.requires_grad = not self.config.freeze_embeddings

    @staticmethod
    def group_of(name: str) -> str:
        if name.startswith("rtd."):
            return "pretrain"
        if name.startswith(("embed.", "enc")):
            return "encoder"
        return "head"

    def named_parameters(self, group: str | None = None):
        for name, t in self.params.items():
            if group is None or self.group_of(name) == group:
                yield name, t

    def trainable(self, include_pretrain: bool = False) -> dict[str, Tensor]:
        return {
            k: t
            for k, t in self.params.items()
            if t.requires_grad and (include_pretrain or self.group_of(k) != "pretrain")
        }

    def zero_grads(self) -> None:
        ad.zero_grads(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ContractError("state keys do not match model parameters")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise DimensionError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def clone(self) -> "SimilarityModel":
        m = SimilarityModel(self.config, {
            k: Tensor(t.data, requires_grad=t.requires_grad, name=k) for k, t in self.params.items()
        })
        return m

    # -------------------------------------------------------------- layers
    def _check_batch(self, batch: BatchInput) -> None:
        if batch.seq_len > self.config.max_seq_len:
            raise ConfigError(
                f"sequence length {batch.seq_len} exceeds max_seq_len {self.config.max_seq_len}"
            )
        if batch.token_ids.size and (
            batch.token_ids.min() < 0 or batch.token_ids.max() >= self.config.vocab_size
        ):
            raise VocabularyError("token id outside vocabulary")

    def _relative_index(self, seq: int) -> np.ndarray:
        pos = np.arange(seq)
        r = self.config.max_rel_dist
        return np.clip(pos[None, :] - pos[:, None], -r, r) + r

    def encode(self, batch: BatchInput) -> Tensor:
        """Contextual token embeddings, shape batch x seq x embed_dim."""
        self._check_batch(batch)
        cfg, P = self.config, self.params
        B, S = batch.token_ids.shape
        d, H = cfg.embed_dim, cfg.n_heads
        dh = d // H
        key_mask = (batch.attention_mask > 0)[:, None, None, :]
        rel_idx = self._relative_index(S)

        x = ad.take(P["embed.tokens"], batch.token_ids)
        x = layer_norm(x, P["embed.ln.g"], P["embed.ln.b"])
        for layer in range(cfg.n_layers):
            pre = f"enc{layer}"

            def heads(t):
                return ad.transpose(t.reshape(B, S, H, dh), (0, 2, 1, 3))

            q = heads(linear(x, P[f"{pre}.q.w"], P[f"{pre}.q.b"]))
            k = heads(linear(x, P[f"{pre}.k.w"]))
            v = heads(linear(x, P[f"{pre}.v.w"], P[f"{pre}.v.b"]))
            # content-content scores plus a learned per-head relative-position bias
            rel = ad.transpose(ad.take(P[f"{pre}.rel_bias"], rel_idx), (2, 0, 1))
            scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh)) + rel
            attn = ad.softmax(scores, axis=-1, mask=key_mask)
            ctx = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)).reshape(B, S, d)
            x = layer_norm(x + linear(ctx, P[f"{pre}.o.w"], P[f"{pre}.o.b"]),
                           P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"])
            ff = linear(gelu(linear(x, P[f"{pre}.ffn1.w"], P[f"{pre}.ffn1.b"])),
                        P[f"{pre}.ffn2.w"], P[f"{pre}.ffn2.b"])
            x = layer_norm(x + ff, P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"])
        return x

    def bilstm(self, x: Tensor, mask: np.ndarray, prefix: str = "lstm", n_layers: int | None = None) -> Tensor:
        """Stacked bidirectional LSTM; output batch x seq x 2*hidden."""
        n_layers = self.config.lstm_layers if n_layers is None else n_layers
        mask = np.asarray(mask, dtype=np.float64)
        for layer in range(n_layers):
            name = f"{prefix}{layer}"
            expected = self.params[f"{name}.fwd.w_ih"].shape[0]
            if x.shape[-1] != expected:
                raise DimensionError(f"{name} expects width {expected}, got {x.shape[-1]}")
            fwd = lstm_direction(x, mask, self.params, f"{name}.fwd", reverse=False)
            bwd = lstm_direction(x, mask, self.params, f"{name}.bwd", reverse=True)
            x = ad.concat([fwd, bwd], axis=-1)
        return x

    def attention_pool(self, x: Tensor, mask: np.ndarray, return_weights: bool = False):
        """Masked softmax-weighted sum over timesteps, batch x d."""
        keep = np.asarray(mask) > 0
        if not np.all(keep.any(axis=1)):
            raise ContractError("attention_pool row with no unmasked position")
        scores = ad.matmul(x, self.params["pool.w"])
        alpha = ad.softmax(scores, axis=1, mask=keep)
        pooled = ad.tsum(x * alpha.reshape(*alpha.shape, 1), axis=1)
        return (pooled, alpha) if return_weights else pooled

    def fc_head(self, x: Tensor) -> Tensor:
        """Affine map to one raw score per example."""
        w = self.params["fc.w"]
        if x.shape[-1] != w.shape[0]:
            raise DimensionError(f"fc_head expects width {w.shape[0]}, got {x.shape[-1]}")
        return ad.matmul(x, w) + self.params["fc.b"]

    def sector_path(self, sector_tokens: BatchInput) -> Tensor:
        """Embed sector symbols, run the dedicated Bi-LSTM, keep the final-step state."""
        if "sector.embed" not in self.params:
            raise ConfigError("model has no sector path (head_variant != 'sector')")
        ids = sector_tokens.token_ids
        if ids.min() < 0 or ids.max() >= len(SECTOR_SYMBOLS):
            raise VocabularyError("sector id outside A-Z")
        x = ad.take(self.params["sector.embed"], ids)
        out = self.bilstm(x, sector_tokens.attention_mask, prefix="sector.lstm", n_layers=1)
        last = sector_tokens.attention_mask.sum(axis=1).astype(np.int64) - 1
        return ad.getitem(out, (np.arange(ids.shape[0]), last))

    def features(self, batch: BatchInput) -> Tensor:
        cfg = self.config
        enc = self.encode(batch)
        mask = batch.attention_mask
        h = self.bilstm(enc, mask) if cfg.use_lstm else enc
        if cfg.pooling == "attention":
            pooled = self.attention_pool(h, mask)
        elif cfg.pooling == "mean":
            m = mask[:, :, None]
            pooled = ad.tsum(h * m, axis=1) / m.sum(axis=1)
        else:
            pooled = ad.getitem(h, (slice(None), 0))
        if cfg.head_variant == "wide":
            pooled = wide_output(pooled, ad.getitem(enc, (slice(None), 0)))
        elif cfg.head_variant == "sector":
            if batch.sector_ids is None:
                raise ContractError("sector head needs batch.sector_ids")
            sector_batch = BatchInput(batch.sector_ids[:, None], np.ones((batch.batch_size, 1)))
            pooled = wide_output(pooled, self.sector_path(sector_batch))
        if cfg.ensemble_width is not None:
            pooled = expand_dims(pooled, self.params["expand.w"])
        return pooled

    def forward(self, batch: BatchInput) -> Tensor:
        return self.fc_head(self.features(batch))

    __call__ = forward

    def predict(self, batch: BatchInput, batch_size: int = 64) -> np.ndarray:
        out = []
        with ad.no_grad():
            for start in range(0, batch.batch_size, batch_size):
                rows = np.arange(start, min(start + batch_size, batch.batch_size))
                out.append(self.forward(batch.take(rows)).data)
        return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------- functional

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = ad.matmul(x, w)
    return y + b if b is not None else y


def layer_norm(x: Tensor, g: Tensor, b: Tensor, eps: float = 1e-5) -> Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    var = ad.variance(x, axis=-1, keepdims=True)
    return (x - mu) / ad.sqrt(var + eps) * g + b


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere, which keeps gradchecks clean
    inner = (x + 0.044715 * (x * x * x)) * _GELU_C
    return 0.5 * x * (1.0 + ad.tanh(inner))


def lstm_direction(x: Tensor, mask: np.ndarray, params: dict, name: str, reverse: bool) -> Tensor:
    """One LSTM pass; padded steps carry state through and emit zeros."""
    B, S, _ = x.shape
    w_hh = params[f"{name}.w_hh"]
    hidden = w_hh.shape[0]
    xw = ad.matmul(x, params[f"{name}.w_ih"]) + params[f"{name}.b"]
    h = Tensor(np.zeros((B, hidden)))
    c = Tensor(np.zeros((B, hidden)))
    outputs: list[Tensor | None] = [None] * S
    steps = range(S - 1, -1, -1) if reverse else range(S)
    for t in steps:
        gates = ad.getitem(xw, (slice(None), t)) + ad.matmul(h, w_hh)
        i = ad.sigmoid(gates[:, :hidden])
        f = ad.sigmoid(gates[:, hidden : 2 * hidden])
        g = ad.tanh(gates[:, 2 * hidden : 3 * hidden])
        o = ad.sigmoid(gates[:, 3 * hidden :])
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        m = mask[:, t : t + 1]
        if np.all(m == 1.0):
            c, h = c_new, h_new
            outputs[t] = h_new
        else:
            keep = 1.0 - m
            c = c_new * m + c * keep
            h = h_new * m + h * keep
            outputs[t] = h_new * m
    return ad.stack(outputs, axis=1)


def expand_dims(x: Tensor, proj: Tensor) -> Tensor:
    """Learned projection of member features to the shared ensemble width."""
    d_small, d_wide = proj.shape
    if d_wide < d_small:
        raise ConfigError(f"expansion target {d_wide} narrower than input {d_small}")
    if x.shape[-1] != d_small:
        raise DimensionError(f"expand_dims expects width {d_small}, got {x.shape[-1]}")
    return ad.matmul(x, proj)


def wide_output(x_transformer: Tensor, x_context: Tensor) -> Tensor:
    if x_transformer.shape[0] != x_context.shape[0]:
        raise DimensionError(
            f"batch mismatch: {x_transformer.shape[0]} vs {x_context.shape[0]}"
        )
    return ad.concat([x_transformer, x_context], axis=-1)

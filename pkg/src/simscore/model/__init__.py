from .checks import end_to_end_gradcheck, random_batch, tiny_config
from .checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from .network import (
    SECTOR_SYMBOLS,
    BatchInput,
    ModelConfig,
    SimilarityModel,
    expand_dims,
    layer_norm,
    sector_index,
    wide_output,
)
from .rtd import RTDResult, corrupt_tokens, rtd_logits, rtd_loss, rtd_pretrain

__all__ = [
    "SECTOR_SYMBOLS",
    "BatchInput",
    "ModelConfig",
    "RTDResult",
    "SimilarityModel",
    "checkpoint_bytes",
    "corrupt_tokens",
    "end_to_end_gradcheck",
    "random_batch",
    "tiny_config",
    "expand_dims",
    "layer_norm",
    "load_checkpoint",
    "rtd_logits",
    "rtd_loss",
    "rtd_pretrain",
    "save_checkpoint",
    "sector_index",
    "wide_output",
]

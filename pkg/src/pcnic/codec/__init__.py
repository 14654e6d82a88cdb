"""Dual-branch learned codec: transforms, entropy model, engine, training."""

from pcnic.codec.model import (
    LAMBDA_LADDER,
    CodecConfig,
    CodecModel,
    CodecOutput,
    GaussianParams,
    gaussian_likelihood,
    quantize,
    rate_bits,
    rd_loss,
)
from pcnic.codec.engine import (
    compress,
    config_hash,
    decompress,
    load_model,
    save_checkpoint,
)
from pcnic.codec.train import RunConfig, Trainer, train_step

__all__ = [
    "CodecConfig",
    "CodecModel",
    "CodecOutput",
    "GaussianParams",
    "LAMBDA_LADDER",
    "RunConfig",
    "Trainer",
    "compress",
    "config_hash",
    "decompress",
    "gaussian_likelihood",
    "load_model",
    "quantize",
    "rate_bits",
    "rd_loss",
    "save_checkpoint",
    "train_step",
]

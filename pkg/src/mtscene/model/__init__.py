from .network import (
    DEFAULT_STAGES,
    Decoder,
    Encoder,
    EncoderConfig,
    ModelConfig,
    MultiTaskNet,
    Predictions,
    StageConfig,
)

__all__ = [
    "DEFAULT_STAGES",
    "Decoder",
    "Encoder",
    "EncoderConfig",
    "ModelConfig",
    "MultiTaskNet",
    "Predictions",
    "StageConfig",
]

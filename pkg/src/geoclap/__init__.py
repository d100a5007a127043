"""geoclap: tri-modal contrastive embeddings over (overhead image, audio,
text) with cross-modal retrieval and zero-shot soundscape mapping."""

from .embedding import (
    EmbeddingBatch,
    EmbeddingVector,
    SimilarityMatrix,
    cosine_similarity_matrix,
    l2_normalize,
)
from .encoders import (
    EncoderSpec,
    ModelConfig,
    ModelSnapshot,
    encode,
    init_params,
    init_snapshot,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    LossBreakdown,
    TemperatureSet,
    TrainConfig,
    pair_contrastive_loss,
    total_loss,
    train_loop,
)

__all__ = [
    "EmbeddingBatch",
    "EmbeddingVector",
    "SimilarityMatrix",
    "cosine_similarity_matrix",
    "l2_normalize",
    "EncoderSpec",
    "ModelConfig",
    "ModelSnapshot",
    "encode",
    "init_params",
    "init_snapshot",
    "load_checkpoint",
    "save_checkpoint",
    "LossBreakdown",
    "TemperatureSet",
    "TrainConfig",
    "pair_contrastive_loss",
    "total_loss",
    "train_loop",
]

__version__ = "0.1.0"

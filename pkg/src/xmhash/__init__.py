"""Cross-modal hashing with adversarially trained encoders.

Trains three generator networks (label, image, text) against two modality
discriminators to produce unified binary hash codes, then evaluates
retrieval by Hamming ranking.  Works on pre-extracted feature vectors.
"""

from .datamodel import Dataset, build_similarity, load_dataset, save_dataset, synth_dataset
from .errors import ContractError, DivergenceError, FormatError, ShapeError
from .networks import Models, build_models, load_models, save_models
from .retrieval import (
    HashCodeMatrix,
    RetrievalResult,
    binarize,
    encode,
    evaluate,
    hamming,
    hamming_matrix,
    load_codes,
    mean_average_precision,
    pr_by_radius,
    precision_at_n,
    save_codes,
)
from .trainer import TrainConfig, TrainState, train

__all__ = [
    "ContractError",
    "Dataset",
    "DivergenceError",
    "FormatError",
    "HashCodeMatrix",
    "Models",
    "RetrievalResult",
    "ShapeError",
    "TrainConfig",
    "TrainState",
    "binarize",
    "build_models",
    "build_similarity",
    "encode",
    "evaluate",
    "hamming",
    "hamming_matrix",
    "load_codes",
    "load_dataset",
    "load_models",
    "mean_average_precision",
    "pr_by_radius",
    "precision_at_n",
    "save_codes",
    "save_dataset",
    "save_models",
    "synth_dataset",
    "train",
]

__version__ = "0.1.0"

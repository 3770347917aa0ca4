"""Cross-domain sequential recommendation with a shared LoRA-adapted encoder."""

from .ablation import VARIANTS, build_variant, rank_sweep
from .alignment import Tokens, build_bundle, collate
from .corpus import Corpus, Domain, Interaction, Split, load_interactions, preprocess, split_leave_one_out
from .errors import AbxiError, ConfigError, DataError, NumericalError
from .estimator import ABXIRecommender
from .evaluator import EvalReport, evaluate
from .model import ABXI, ModelConfig
from .objective import info_nce, total_loss
from .synthetic import generate_synthetic
from .trainer import TrainConfig, load_checkpoint, run_seed_sweep, train

__version__ = "0.1.0"

__all__ = [
    "ABXI",
    "ABXIRecommender",
    "AbxiError",
    "ConfigError",
    "Corpus",
    "DataError",
    "Domain",
    "EvalReport",
    "Interaction",
    "ModelConfig",
    "NumericalError",
    "Split",
    "Tokens",
    "TrainConfig",
    "VARIANTS",
    "build_bundle",
    "build_variant",
    "collate",
    "evaluate",
    "generate_synthetic",
    "info_nce",
    "load_checkpoint",
    "load_interactions",
    "preprocess",
    "rank_sweep",
    "run_seed_sweep",
    "split_leave_one_out",
    "total_loss",
    "train",
]

"""Text classification with a self-supervised auxiliary loss as regularizer.

The library couples a supervised classifier and a self-supervised task
(masked-token prediction or augmentation-type prediction) on the same
texts, trading them off with a single weight, so the effect of the
auxiliary loss on overfitting can be measured directly on small corpora.
Everything runs on a from-scratch numpy tensor library with reverse-mode
autodiff, verifiable against finite differences.
"""

from .augment import (ALL_OPS, AugOp, AugmentedInstance, make_satp_instance,
                      random_deletion, random_insertion, random_swap,
                      synonym_replacement)
from .autodiff import (GradCheckReport, NonFiniteError, ShapeError, Tape,
                       TapeError, Tensor, grad_check)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .masking import MaskedInstance, mask_tokens
from .metrics import (ConfusionCounts, accuracy, evaluate_pairs, macro_f1,
                      matthews_corr, micro_f1, train_test_gap)
from .model import EncoderConfig, ModelParams
from .runner import run_experiment, run_sweep
from .synthetic import gen_synthetic, make_task, sample_examples
from .text import (CorpusError, LabeledExample, StopwordSet, SynonymLexicon,
                   Vocab, build_vocab, default_stopwords, load_corpus,
                   load_lexicon, load_stopwords, tokenize)
from .training import (AdamW, RunHistory, TrainConfig, TrainResult,
                       classification_loss, evaluate_split, joint_loss,
                       lr_at, mtp_loss, satp_loss, train)

__version__ = "0.1.0"

__all__ = [
    "ALL_OPS", "AdamW", "AugOp", "AugmentedInstance", "CheckpointError",
    "ConfigError", "ConfusionCounts", "CorpusError", "EncoderConfig",
    "ExperimentConfig", "GradCheckReport", "LabeledExample", "MaskedInstance",
    "ModelParams", "NonFiniteError", "RunHistory", "ShapeError", "StopwordSet",
    "SynonymLexicon", "Tape", "TapeError", "Tensor", "TrainConfig",
    "TrainResult", "Vocab", "accuracy", "build_vocab", "classification_loss",
    "default_stopwords", "evaluate_pairs", "evaluate_split", "gen_synthetic",
    "grad_check", "joint_loss", "load_checkpoint", "load_config", "load_corpus",
    "load_lexicon", "load_stopwords", "lr_at", "macro_f1", "make_satp_instance",
    "make_task", "mask_tokens", "matthews_corr", "micro_f1", "mtp_loss",
    "random_deletion", "random_insertion", "random_swap", "run_experiment",
    "run_sweep", "sample_examples", "satp_loss", "save_checkpoint",
    "synonym_replacement", "text", "tokenize", "train", "train_test_gap",
]

from . import text  # noqa: E402  (module alias for the two `encode` surfaces)
from . import model  # noqa: E402

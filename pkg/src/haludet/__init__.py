"""Hallucination detection toolkit: a multi-branch detector over token-level
LLM uncertainty features, single-pass baselines, selective-prediction metrics,
and a deterministic synthetic data generator."""

from .baselines import (LogisticModel, logistic_features, logistic_train,
                        predictive_entropy, token_nll)
from .features import (Dataset, DatasetError, FeatureRecord, load_dataset,
                       save_dataset, truncate_or_pad)
from .metrics import (EvalReport, ScoredSet, aurac, auroc, certainty_supervised,
                      evaluate_supervised, evaluate_unsupervised, f1_at_best,
                      ra_at_50, rejection_accuracy_curve)
from .model import (CheckpointError, ConfigError, ModelConfig, forward,
                    init_params, load_checkpoint, predict, save_checkpoint,
                    score_dataset)
from .nn import ParamStore, Rng
from .synth import SynthConfig, generate
from .train import TrainConfig, TrainReport, TrainingDiverged, split_train_val, train

__version__ = "0.1.0"

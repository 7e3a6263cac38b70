"""Shared-private encoder-decoders with classifier-weighted mixture decoding, in numpy."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Vocabulary, build_vocab, default_specs, read_corpus, synth_splits, write_corpus
from .evaluation import ExperimentConfig, rouge_l, rouge_n, run_experiment
from .model import ModelConfig, ShapedModel, StyleSet
from .train import TrainConfig, adagrad_step, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ExperimentConfig", "ModelConfig", "ShapedModel", "StyleSet", "TrainConfig", "Vocabulary",
    "adagrad_step", "build_vocab", "default_specs", "load_checkpoint", "read_corpus", "rouge_l", "rouge_n",
    "run_experiment", "save_checkpoint", "synth_splits", "train", "write_corpus",
]

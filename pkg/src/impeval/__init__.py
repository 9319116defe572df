"""Trainable implausibility heatmap + plausibility score evaluator on a numpy autograd core."""

from .config import TrainConfig, load_config
from .corpus import generate_corpus, generate_sample, read_dataset, write_dataset
from .model import ImplausibilityModel

__version__ = "0.1.0"

__all__ = ["TrainConfig", "load_config", "generate_corpus", "generate_sample", "read_dataset",
           "write_dataset", "ImplausibilityModel"]

"""Hybrid quantum-classical GAN: numpy autodiff, statevector circuits, training and metrics."""
from .discriminator import BackboneConfig, Discriminator, HeadConfig
from .generator import Generator, GeneratorConfig
from .metrics import fid, inception_score, kid
from .quantum import QuantumBlock
from .trainer import ModelConfig, RunLog, TrainConfig, train
from .transfer import WeightStore, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "Discriminator", "HeadConfig", "Generator", "GeneratorConfig",
    "QuantumBlock", "ModelConfig", "RunLog", "TrainConfig", "train",
    "WeightStore", "load_weights", "save_weights", "fid", "kid", "inception_score",
]

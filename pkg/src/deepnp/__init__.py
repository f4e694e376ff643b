"""Adaptive causal network coding with a learned erasure predictor."""
from .channel import GEChannel, GEParams, generate_trace, steady_state_erasure
from .estimators import GeniePredictor, MeanPredictor, StatPredictor
from .harness import ExperimentSpec, emit_plotdata, run_experiment
from .neural import NeuralPredictor, TrainConfig, load_params, save_params, train
from .protocol import SessionConfig, run_session

__all__ = [
    "GEChannel", "GEParams", "generate_trace", "steady_state_erasure",
    "GeniePredictor", "MeanPredictor", "StatPredictor",
    "ExperimentSpec", "emit_plotdata", "run_experiment",
    "NeuralPredictor", "TrainConfig", "load_params", "save_params", "train",
    "SessionConfig", "run_session",
]

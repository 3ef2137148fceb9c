"""Data-driven Koopman surrogates (kernel DMD and a linear recurrent autoencoder) for 2D Rayleigh-Benard convection."""

from .dataset import Episode, SplitSpec, convective_field, nsse, nusselt, read_episode, write_episode
from .dns import SimulationConfig, simulate_episode
from .errors import RbcError
from .fields import Grid, ScalarField
from .kdmd import KernelSpec, SnapshotPair, fit as fit_kdmd, predict as predict_kdmd
from .lran import LranConfig, LranModel, load_model, rollout, save_model, train as train_lran

__version__ = "0.1.0"

__all__ = [
    "Episode", "SplitSpec", "convective_field", "nsse", "nusselt", "read_episode", "write_episode",
    "SimulationConfig", "simulate_episode", "RbcError", "Grid", "ScalarField",
    "KernelSpec", "SnapshotPair", "fit_kdmd", "predict_kdmd",
    "LranConfig", "LranModel", "load_model", "rollout", "save_model", "train_lran",
]

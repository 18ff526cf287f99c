"""Simulation, tomography and entanglement analysis of trapped-ion W states."""

from .hilbert import DensityMatrix, HermitianOperator, PureState
from .ionsim import NoiseConfig, prepare_w_sequence, simulate_noisy_preparation, w_state
from .tomo import MLEConfig, TomographyDataset, mle_reconstruct, sample_dataset
from .entangle import WitnessSpec, entanglement_report

__version__ = "0.1.0"

"""Transformer GANs for multichannel time series, with wavelet-coherence scoring."""
from .coherence import CwtSpec, wcoh, wcoh_s, wcoh_set
from .data import SignalSet, SineParams, load_signal_set, save_signal_set, simulate_sine
from .models import ModelSpec
from .train import TrainConfig, generate

__version__ = "0.1.0"

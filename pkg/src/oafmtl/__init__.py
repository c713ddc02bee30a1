"""Over-the-air federated multi-task learning simulator."""

__version__ = "0.1.0"

from .analysis import (
    BoundParams,
    SeConfig,
    SeTask,
    error_decomposition,
    lemma1_check,
    psi,
    state_evolution,
    theorem1_bound,
)
from .channel import ChannelRound, EmptyScheduleError, effective_observation, transmit
from .prior import BernoulliGaussianDenoiser, BgPrior, bg_denoise, bg_mmse, em_update
from .receiver import MTurboCS, TurboOptions, m_turbo_cs, scheme2_recover
from .transform import PartialDCT, PartialOrthonormalOperator, make_partial_dct
from .transmitter import DeviceState, PowerPolicy, device_encode, top_k_sparsify

__all__ = [
    "BoundParams", "SeConfig", "SeTask", "error_decomposition", "lemma1_check", "psi",
    "state_evolution", "theorem1_bound", "ChannelRound", "EmptyScheduleError",
    "effective_observation", "transmit", "BernoulliGaussianDenoiser", "BgPrior", "bg_denoise",
    "bg_mmse", "em_update", "MTurboCS", "TurboOptions", "m_turbo_cs", "scheme2_recover",
    "PartialDCT", "PartialOrthonormalOperator", "make_partial_dct", "DeviceState", "PowerPolicy",
    "device_encode", "top_k_sparsify", "__version__",
]

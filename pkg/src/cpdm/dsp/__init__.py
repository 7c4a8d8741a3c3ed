"""Receiver digital signal processing."""

from .carrier import BpsConfig, FoeConfig, bps_phase, cpe_bps, estimate_offset, foe
from .chain import DbpConfig, DspConfig, StageReport, run_chain
from .dispersion import DbpPlan, cd_compensate, cd_response, dbp, min_cd_taps
from .equalizer import EqConfig, EqualizerState, adaptive_equalize
from .filters import bessel_filter, bessel_response, dc_block, normalize, qi_compensate
from .timing import TimingConfig, timing_recover

__all__ = [
    "BpsConfig", "DbpConfig", "DbpPlan", "DspConfig", "EqConfig", "EqualizerState", "FoeConfig",
    "StageReport", "TimingConfig", "adaptive_equalize", "bessel_filter", "bessel_response",
    "bps_phase", "cd_compensate", "cd_response", "cpe_bps", "dbp", "dc_block", "estimate_offset",
    "foe", "min_cd_taps", "normalize", "qi_compensate", "run_chain", "timing_recover",
]

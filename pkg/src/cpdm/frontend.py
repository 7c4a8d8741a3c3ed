"""Polarization-diversity coherent detection and analog-to-digital conversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as const

from .signal import ComplexWaveform, Field, field_pairs, resample
from .transmitter import (
    CpdmMuxModel, IqModulatorParams, LaserParams, apply_iq_impairments, cpdm_demux, laser,
)

AGGREGATE_BIT_RATE = 112e9
TRIBUTARY_BIT_RATE = 28e9

BRANCH_NAMES = {
    "ideal4": ("rcp_h", "rcp_v", "lcp_h", "lcp_v"),
    "physical_jones": ("rcp_h", "rcp_v", "lcp_h", "lcp_v"),
    "pdm2": ("x", "y"),
}


@dataclass(frozen=True)
class PhotodiodeParams:
    responsivity: float = 0.95
    dark_current: float = 10e-9
    temperature: float = 298.0
    load_resistance: float = 50.0
    thermal_bandwidth: float = 10e9

    def __post_init__(self):
        if not 0 < self.responsivity <= 1.1:
            raise ValueError("responsivity must lie in (0, 1.1] A/W")
        for name in ("dark_current", "temperature", "load_resistance", "thermal_bandwidth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def thermal_variance(self) -> float:
        """Thermal current variance ``4 k T B / R_L`` per balanced rail."""
        return 4 * const.k * self.temperature * self.thermal_bandwidth / self.load_resistance

    def shot_variance(self, dc_current: float) -> float:
        """Shot current variance ``2 q (I_ph + I_dark) B`` of one balanced pair."""
        return 2 * const.e * (dc_current + 2 * self.dark_current) * self.thermal_bandwidth


@dataclass(frozen=True)
class AdcParams:
    """ADC rate is ``samples_per_bit`` x 28 Gb/s unless ``sample_rate`` is given.

    ``bits=None`` disables quantization.  The quantizer spans
    ``+-full_scale`` per rail, or +-4 sigma of the rail when unset.
    """

    samples_per_bit: float = 4.0
    sample_rate: float | None = None
    bits: int | None = None
    full_scale: float | None = None

    @property
    def rate(self) -> float:
        return self.sample_rate if self.sample_rate else self.samples_per_bit * TRIBUTARY_BIT_RATE


@dataclass(frozen=True, eq=False)
class FrontendOutput:
    """One complex I+jQ electrical waveform per receiver branch."""

    branches: tuple[ComplexWaveform, ...]
    mode: str = "ideal4"

    def __post_init__(self):
        if len({len(b) for b in self.branches}) != 1 or len({b.sample_rate for b in self.branches}) != 1:
            raise ValueError("branches must share length and sample rate")

    @property
    def names(self) -> tuple[str, ...]:
        return BRANCH_NAMES[self.mode][: len(self.branches)]

    @property
    def sample_rate(self) -> float:
        return self.branches[0].sample_rate

    def __len__(self) -> int:
        return len(self.branches)

    def as_array(self) -> np.ndarray:
        return np.vstack([b.samples for b in self.branches])


def lo_branch_weights(mux: CpdmMuxModel, lo: LaserParams) -> np.ndarray:
    """Complex LO amplitude reaching each branch, relative to the LO field."""
    if mux.mode == "physical_jones":
        return mux.rx_map @ lo.jones
    if mux.mode == "pdm2":
        return np.full(2, 1 / np.sqrt(2), complex)
    return np.full(4, 0.5, complex)


def coherent_detect(sig: Field, lo: LaserParams = LaserParams(), pd: PhotodiodeParams = PhotodiodeParams(),
                    tia_gain_db: float = 20.0, mux: CpdmMuxModel = CpdmMuxModel(),
                    seed: int | None = 0, noise: bool = True,
                    hybrid: IqModulatorParams | None = None,
                    lo_field: ComplexWaveform | None = None) -> FrontendOutput:
    """Ideal 90-degree hybrids and balanced photodiodes on every branch.

    Each branch yields the complex photocurrent ``R E_s conj(E_lo)`` plus
    shot and thermal noise, converted to volts by the load resistor and the
    TIA voltage gain.  ``lo_field`` overrides the generated LO waveform.
    """
    if lo.power_w <= 0:
        raise ValueError("LO power must be positive")
    pairs = field_pairs(sig)
    rate = pairs[0].sample_rate
    n = len(pairs[0])
    rng = np.random.default_rng(seed)
    if lo_field is None:
        lo_field = laser(lo, n, rate, seed=rng.integers(2**63))
    elif lo_field.sample_rate != rate or len(lo_field) != n:
        raise ValueError("LO and signal sample rates or lengths differ")
    e_s = cpdm_demux(sig, mux)
    e_lo = lo_branch_weights(mux, lo)[:, None] * lo_field.samples[None, :]
    current = pd.responsivity * e_s * np.conj(e_lo)
    if noise:
        # each balanced pair collects half of the signal and LO power of its branch
        dc = pd.responsivity * (np.mean(np.abs(e_s) ** 2, axis=1) + np.mean(np.abs(e_lo) ** 2, axis=1)) / 2
        for k in range(current.shape[0]):
            var = pd.shot_variance(dc[k]) + pd.thermal_variance()
            current[k] += np.sqrt(var) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    v = current * pd.load_resistance * 10 ** (tia_gain_db / 20)
    if hybrid is not None:
        v = np.vstack([apply_iq_impairments(row, hybrid) for row in v])
    return FrontendOutput(tuple(ComplexWaveform(row, rate) for row in v), mux.mode)


def quantize(x: np.ndarray, bits: int, full_scale: float | None = None) -> np.ndarray:
    """Mid-rise uniform quantizer applied to I and Q separately."""
    out = []
    for rail in (x.real, x.imag):
        fs = full_scale if full_scale is not None else 4 * np.std(rail)
        if fs == 0:
            out.append(rail)
            continue
        step = 2 * fs / 2**bits
        q = (np.floor(np.clip(rail, -fs, fs - 1e-12 * fs) / step) + 0.5) * step
        out.append(q)
    return out[0] + 1j * out[1]


def adc(w: ComplexWaveform, p: AdcParams, seed: int | None = 0) -> ComplexWaveform:
    """Anti-alias filtering, resampling to ``p.rate`` and optional quantization."""
    rate = p.rate
    if rate > w.sample_rate * (1 + 1e-12):
        raise ValueError(f"ADC rate {rate:g} exceeds the waveform rate {w.sample_rate:g}")
    out = resample(w, rate, "fft") if rate != w.sample_rate else w
    if p.bits is not None:
        out = out.with_samples(quantize(out.samples, p.bits, p.full_scale))
    return out


def adc_frontend(front: FrontendOutput, p: AdcParams, seed: int | None = 0) -> FrontendOutput:
    return FrontendOutput(tuple(adc(b, p, seed) for b in front.branches), front.mode)

"""Fiber propagation, optical amplification and noise loading.

The forward channel integrates

    dA/dz = -alpha/2 A - j beta2/2 d2A/dt2 + beta3/6 d3A/dt3 + j gamma_eff |A|^2 A

with the symmetric split-step Fourier method.  Because numpy's inverse FFT
synthesises ``sum(X exp(+j w t))``, the linear step in the frequency domain
is ``exp(h (-alpha/2 + j beta2/2 w^2 - j beta3/6 w^3))``.  All modes of a
field (two for a Jones pair, four for the ideal CPDM abstraction) share the
Kerr phase of their total intensity with the Manakov factor 8/9.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .signal import (
    ComplexWaveform, Field, JonesSignal, dump_waveform, fft, field_pairs, frequency_grid,
    angular_frequency, ifft, stack_field, unstack_field,
)

log = logging.getLogger(__name__)

C_LIGHT = 299792458.0
H_PLANCK = 6.62607015e-34
MANAKOV = 8.0 / 9.0
REF_BANDWIDTH = 12.5e9


@dataclass(frozen=True)
class FiberParams:
    """SSMF parameters in datasheet units.

    ``alpha`` dB/km, ``dispersion`` ps/(nm km), ``slope`` ps/(nm^2 km),
    ``n2`` m^2/W, ``a_eff`` m^2, ``length`` km.  ``beta2`` (ps^2/km),
    ``beta3`` (ps^3/km) and ``gamma`` (1/(W km)) are derived.
    """

    alpha: float = 0.2
    dispersion: float = 16.75
    slope: float = 0.075
    n2: float = 26e-21
    a_eff: float = 80e-12
    length: float = 80.0
    wavelength: float = 1550e-9

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.a_eff <= 0:
            raise ValueError("a_eff must be > 0")
        if self.length < 0:
            raise ValueError("length must be >= 0")

    @property
    def _k(self) -> float:
        return self.wavelength / (2 * np.pi * C_LIGHT)

    @property
    def beta2(self) -> float:
        d = self.dispersion * 1e-6  # s/m^2
        return -d * self.wavelength**2 / (2 * np.pi * C_LIGHT) * 1e27

    @property
    def beta3(self) -> float:
        lam, d, s = self.wavelength, self.dispersion * 1e-6, self.slope * 1e3
        return self._k**2 * (lam**2 * s + 2 * lam * d) * 1e39

    @property
    def gamma(self) -> float:
        return 2 * np.pi * self.n2 / (self.wavelength * self.a_eff) * 1e3

    @property
    def alpha_np(self) -> float:
        """Power attenuation in 1/km."""
        return self.alpha * np.log(10) / 10

    @property
    def span_loss_db(self) -> float:
        return self.alpha * self.length

    @property
    def frequency(self) -> float:
        return C_LIGHT / self.wavelength

    def with_coefficients(self, beta2: float | None = None, beta3: float | None = None,
                          gamma: float | None = None, **kw) -> "FiberParams":
        """Copy with D, S and n2 solved so that the derived coefficients match."""
        b2 = self.beta2 if beta2 is None else beta2
        b3 = self.beta3 if beta3 is None else beta3
        g = self.gamma if gamma is None else gamma
        lam = kw.get("wavelength", self.wavelength)
        k = lam / (2 * np.pi * C_LIGHT)
        d = -b2 * 1e-27 * 2 * np.pi * C_LIGHT / lam**2
        s = (b3 * 1e-39 / k**2 - 2 * lam * d) / lam**2
        n2 = g * 1e-3 * lam * kw.get("a_eff", self.a_eff) / (2 * np.pi)
        return replace(self, dispersion=d * 1e6, slope=s * 1e-3, n2=n2, **kw)

    def linear_exponent(self, n: int, rate: float) -> np.ndarray:
        """Per-km exponent of the forward linear operator on the FFT grid."""
        w = angular_frequency(n, rate)
        b2 = self.beta2 * 1e-24
        b3 = self.beta3 * 1e-36
        return -self.alpha_np / 2 + 1j * (b2 / 2 * w**2 - b3 / 6 * w**3)


@dataclass(frozen=True)
class FixedStep:
    """Uniform step ``dz`` km; ``max_phase`` bounds the nonlinear phase per step."""

    dz: float = 0.1
    max_phase: float = 0.05


@dataclass(frozen=True)
class AdaptiveStep:
    """Steps sized so the peak nonlinear phase per step is ``max_phase`` rad."""

    max_phase: float = 3e-3
    max_dz: float | None = None


StepRule = FixedStep | AdaptiveStep


class StepTooCoarseError(ValueError):
    pass


def split_step(a: np.ndarray, rate: float, fiber: FiberParams, length: float,
               step: StepRule, nl_coeff: float, direction: int = 1) -> tuple[np.ndarray, int]:
    """Symmetric split-step integration of a ``(modes, N)`` field.

    ``nl_coeff`` is the Kerr coefficient applied to the total intensity in
    1/(W km).  ``direction=-1`` steps towards -z with the same operators,
    which is what digital backpropagation needs.  Adjacent half linear steps
    are merged, so ``n`` steps cost ``n + 1`` FFT pairs.  Returns the field
    and the number of steps taken.
    """
    if length <= 0:
        return a, 0
    lin = fiber.linear_exponent(a.shape[-1], rate) * direction
    nl = nl_coeff * direction

    def intensity(x):
        return np.sum(x.real**2 + x.imag**2, axis=0)

    def next_step(x, remaining):
        if isinstance(step, FixedStep):
            return None
        peak = intensity(x).max()
        if nl_coeff == 0 or peak == 0:
            h = remaining
        else:
            h = step.max_phase / (abs(nl_coeff) * peak)
        if step.max_dz is not None:
            h = min(h, step.max_dz)
        return min(h, remaining)

    if isinstance(step, FixedStep):
        n_fixed = max(1, int(np.ceil(length / step.dz - 1e-9)))
        h = length / n_fixed
    else:
        h = next_step(a, length)
    z = 0.0
    n_steps = 0
    ops: dict[float, np.ndarray] = {}

    def op(dz):
        if dz not in ops:
            if len(ops) > 2:
                ops.clear()
            ops[dz] = np.exp(lin * dz)
        return ops[dz]

    def linear(x, dz):
        x = fft(x)
        x *= op(dz)
        return ifft(x)

    a = linear(a, h / 2)
    while True:
        if nl != 0:
            p = intensity(a)
            if isinstance(step, FixedStep) and abs(nl_coeff) * p.max() * h > step.max_phase:
                raise StepTooCoarseError(
                    f"nonlinear phase {abs(nl_coeff) * p.max() * h:.3g} rad per step exceeds "
                    f"{step.max_phase} rad; reduce dz")
            p *= nl * h
            a *= np.exp(1j * p)
        z += h
        n_steps += 1
        remaining = length - z
        if remaining <= 1e-12 * length:
            a = linear(a, h / 2)
            return a, n_steps
        h_next = h if isinstance(step, FixedStep) else next_step(a, remaining)
        h_next = min(h_next, remaining)
        a = linear(a, (h + h_next) / 2)
        h = h_next


def _check_oversampling(a: np.ndarray, rate: float) -> None:
    spec = np.sum(np.abs(fft(a)) ** 2, axis=0)
    f = np.abs(frequency_grid(a.shape[-1], rate))
    frac = spec[f > 0.375 * rate].sum() / max(spec.sum(), 1e-300)
    if frac > 0.05:
        log.warning("%.1f%% of the field power lies above 0.75 Nyquist; "
                    "raise the simulation sample rate", 100 * frac)


def ssfm_propagate(sig: Field, fiber: FiberParams, step: StepRule = FixedStep(),
                   manakov: bool = True, length: float | None = None) -> Field:
    """Propagate a field over ``length`` km (default ``fiber.length``)."""
    length = fiber.length if length is None else length
    a = stack_field(sig)
    rate = field_pairs(sig)[0].sample_rate
    _check_oversampling(a, rate)
    g = fiber.gamma * (MANAKOV if manakov and a.shape[0] > 1 else 1.0)
    out, n = split_step(a, rate, fiber, length, step, g)
    log.debug("ssfm: %.1f km in %d steps", length, n)
    att = np.exp(-fiber.alpha_np * length)
    return _with_noise_scaled(sig, out, att)


def _with_noise_scaled(sig: Field, a: np.ndarray, power_gain: float) -> Field:
    pairs = field_pairs(sig)
    out = tuple(
        p.with_array(a[2 * i: 2 * i + 2], ase_psd=None if p.ase_psd is None else p.ase_psd * power_gain)
        for i, p in enumerate(pairs))
    return out[0] if isinstance(sig, JonesSignal) else out


@dataclass(frozen=True)
class AmplifierParams:
    """EDFA gain and noise.

    The spontaneous-emission factor follows from the noise figure,
    ``n_sp = NF G / (2 (G - 1))``, unless ``n_sp`` is given explicitly.
    ``noise=False`` gives a noiseless amplifier.
    """

    gain_db: float = 16.0
    noise_figure_db: float = 4.0
    seed: int = 0
    n_sp: float | None = None
    noise: bool = True
    allow_sub_quantum_nf: bool = False

    def __post_init__(self):
        if self.gain_db < 0:
            raise ValueError("gain must be >= 0 dB")
        if self.noise_figure_db < 3.0 and not self.allow_sub_quantum_nf and self.n_sp is None:
            log.warning("noise figure %.2f dB is below the 3 dB quantum limit", self.noise_figure_db)

    @property
    def gain(self) -> float:
        return 10 ** (self.gain_db / 10)

    @property
    def spontaneous_emission_factor(self) -> float:
        if self.n_sp is not None:
            return self.n_sp
        g = self.gain
        if g <= 1:
            return 0.0
        return 10 ** (self.noise_figure_db / 10) * g / (2 * (g - 1))

    def ase_psd(self, frequency: float) -> float:
        """ASE power spectral density per polarization mode, W/Hz."""
        return self.spontaneous_emission_factor * (self.gain - 1) * H_PLANCK * frequency


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    s = np.sqrt(variance / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def edfa(sig: Field, p: AmplifierParams, seed: int | np.random.SeedSequence | None = None,
         wavelength: float = 1550e-9) -> Field:
    """Amplify by ``G`` and add circular Gaussian ASE in every mode."""
    pairs = field_pairs(sig)
    rate = pairs[0].sample_rate
    g = p.gain
    a = stack_field(sig) * np.sqrt(g)
    s_ase = p.ase_psd(C_LIGHT / wavelength) if p.noise else 0.0
    if s_ase > 0:
        rng = np.random.default_rng(p.seed if seed is None else seed)
        a = a + complex_noise(rng, a.shape, s_ase * rate)
    out = []
    for i, q in enumerate(pairs):
        if q.ase_psd is None:
            psd, bw = None, None
        else:
            old = q.ase_psd * g
            psd = old + s_ase
            bw = (old * q.noise_bandwidth + s_ase * rate) / psd if psd > 0 else rate
        out.append(q.with_array(a[2 * i: 2 * i + 2], ase_psd=psd, noise_bandwidth=bw))
    return out[0] if isinstance(sig, JonesSignal) else tuple(out)


def obpf_response(n: int, rate: float, bandwidth: float, shape: str = "rect", order: int = 1) -> np.ndarray:
    """Power-3-dB bandwidth ``bandwidth`` (full width), unit gain at DC."""
    f = frequency_grid(n, rate)
    if shape == "rect":
        return (np.abs(f) <= bandwidth / 2).astype(float)
    if shape == "gaussian":
        return np.exp(-0.5 * np.log(2) * (2 * f / bandwidth) ** (2 * order))
    raise ValueError(f"unknown filter shape {shape!r}")


def obpf(sig: Field, bandwidth: float, shape: str = "rect", order: int = 1) -> Field:
    """Optical band-pass filter centred on the carrier."""
    pairs = field_pairs(sig)
    rate = pairs[0].sample_rate
    if bandwidth >= rate:
        raise ValueError(f"filter bandwidth {bandwidth:g} Hz must be below the sample rate {rate:g} Hz")
    a = stack_field(sig)
    h = obpf_response(a.shape[-1], rate, bandwidth, shape, order)
    a = ifft(fft(a) * h)
    enbw = float(np.sum(h**2)) * rate / a.shape[-1]
    out = tuple(q.with_array(a[2 * i: 2 * i + 2],
                             noise_bandwidth=None if q.ase_psd is None else min(q.noise_bandwidth, enbw))
                for i, q in enumerate(pairs))
    return out[0] if isinstance(sig, JonesSignal) else out


def random_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed 2x2 unitary."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def rotate_polarization(sig: Field, u: np.ndarray) -> Field:
    """Apply the same 2x2 Jones matrix to every pair of a field."""
    pairs = field_pairs(sig)
    out = tuple(q.with_array(u @ q.as_array()) for q in pairs)
    return out[0] if isinstance(sig, JonesSignal) else out


@dataclass(frozen=True)
class LinkPlan:
    span_length: float = 80.0
    n_spans: int = 10
    obpf_bandwidth: float | None = 100e9
    step: StepRule = FixedStep()
    obpf_shape: str = "rect"
    obpf_per_span: bool = False
    rotate_polarization: bool = True

    def __post_init__(self):
        if self.n_spans < 0:
            raise ValueError("n_spans must be >= 0")
        if self.span_length <= 0:
            raise ValueError("span_length must be > 0")

    @property
    def distance(self) -> float:
        return self.span_length * self.n_spans


def loss_matched_gain(fiber: FiberParams) -> float:
    return fiber.span_loss_db


def run_link(sig: Field, plan: LinkPlan, fiber: FiberParams, amp: AmplifierParams,
             seed: int = 0, tap_dir: str | Path | None = None) -> Field:
    """Recirculating loop: ``n_spans`` x (rotation, SSMF, EDFA), then the OBPF."""
    if plan.n_spans == 0:
        return sig
    if abs(fiber.length - plan.span_length) > 1e-9:
        raise ValueError(f"fiber length {fiber.length} km != span length {plan.span_length} km")
    children = np.random.SeedSequence(seed).spawn(plan.n_spans)
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        if plan.rotate_polarization:
            sig = rotate_polarization(sig, random_unitary(rng))
        sig = ssfm_propagate(sig, fiber, plan.step)
        sig = edfa(sig, amp, seed=int(rng.integers(2**63)), wavelength=fiber.wavelength)
        if plan.obpf_per_span and plan.obpf_bandwidth:
            sig = obpf(sig, plan.obpf_bandwidth, plan.obpf_shape)
        if tap_dir is not None:
            dump_field(sig, Path(tap_dir), f"span{k + 1:03d}")
    if plan.obpf_bandwidth and not plan.obpf_per_span:
        sig = obpf(sig, plan.obpf_bandwidth, plan.obpf_shape)
    return sig


def dump_field(sig: Field, directory: Path, stem: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(field_pairs(sig)):
        dump_waveform(p.x, directory / f"{stem}_p{i}x.bin")
        dump_waveform(p.y, directory / f"{stem}_p{i}y.bin")


def noise_power_per_mode(sig: Field) -> float:
    """Bookkept ASE power per mode; raises when noise is untracked."""
    pairs = field_pairs(sig)
    if any(p.ase_psd is None for p in pairs):
        raise ValueError("noise is not tracked for this field")
    return float(np.mean([p.ase_psd * p.noise_bandwidth for p in pairs]))


def signal_power(sig: Field) -> float:
    """Total power with the bookkept ASE removed."""
    pairs = field_pairs(sig)
    total = sum(p.power for p in pairs)
    return total - 2 * len(pairs) * noise_power_per_mode(sig)


def bookkept_osnr(sig: Field, ref_bw: float = REF_BANDWIDTH) -> float:
    """OSNR in dB with the noise of two polarizations counted in ``ref_bw``."""
    psd = float(np.mean([p.ase_psd for p in field_pairs(sig)]))
    if psd <= 0:
        return np.inf
    return 10 * np.log10(signal_power(sig) / (2 * psd * ref_bw))


def ase_load(sig: Field, target_osnr: float, ref_bw: float = REF_BANDWIDTH, seed: int = 0) -> Field:
    """Add white ASE so that the bookkept OSNR equals ``target_osnr`` dB.

    The noise realization depends only on ``seed``; loading the same field at
    different targets scales one realization, which keeps BER-versus-OSNR
    sweeps monotone.
    """
    if not np.isfinite(target_osnr):
        return sig
    pairs = field_pairs(sig)
    p_sig = signal_power(sig)
    if p_sig <= 0:
        raise ValueError("signal power must be positive")
    rate = pairs[0].sample_rate
    n_target = p_sig / (2 * ref_bw * 10 ** (target_osnr / 10))
    existing = float(np.mean([p.ase_psd for p in pairs]))
    if existing > n_target * (1 + 1e-12):
        raise ValueError(
            f"target OSNR {target_osnr:.2f} dB is above the present level "
            f"{bookkept_osnr(sig, ref_bw):.2f} dB")
    add = n_target - existing
    a = stack_field(sig)
    a = a + complex_noise(np.random.default_rng(seed), a.shape, add * rate)
    out = []
    for i, q in enumerate(pairs):
        psd = q.ase_psd + add
        bw = (q.ase_psd * q.noise_bandwidth + add * rate) / psd
        out.append(q.with_array(a[2 * i: 2 * i + 2], ase_psd=psd, noise_bandwidth=bw))
    return out[0] if isinstance(sig, JonesSignal) else tuple(out)


__all__ = [
    "AdaptiveStep", "AmplifierParams", "C_LIGHT", "FiberParams", "FixedStep", "H_PLANCK",
    "LinkPlan", "MANAKOV", "REF_BANDWIDTH", "StepTooCoarseError", "ase_load",
    "bookkept_osnr", "edfa", "loss_matched_gain", "noise_power_per_mode", "obpf",
    "obpf_response", "random_unitary", "rotate_polarization", "run_link", "signal_power",
    "split_step", "ssfm_propagate",
]

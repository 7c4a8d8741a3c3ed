"""Front-end conditioning: DC block, normalization, Bessel filter, IQ orthogonalization."""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from ..signal import ComplexWaveform, apply_transfer, frequency_grid


def dc_block(w: ComplexWaveform) -> ComplexWaveform:
    return w.with_samples(w.samples - np.mean(w.samples))


def normalize(w: ComplexWaveform, power: float = 1.0) -> ComplexWaveform:
    p = w.power
    if p == 0:
        return w
    return w.with_samples(w.samples * np.sqrt(power / p))


def bessel_response(n: int, rate: float, order: int = 4, bw: float = 28e9) -> np.ndarray:
    """Analog Bessel prototype sampled on the FFT grid.

    The prototype is normalized for -3 dB at ``bw`` and its DC group delay is
    removed so the filter does not shift the symbol timing.
    """
    b, a = sps.bessel(order, 2 * np.pi * bw, btype="low", analog=True, norm="mag")
    w = 2 * np.pi * frequency_grid(n, rate)
    _, h = sps.freqs(b, a, worN=w)
    # group delay at DC of b0 / (... + a1 s + a0) is a1 / a0
    tau0 = a[-2] / a[-1]
    return h * np.exp(1j * w * tau0)


def bessel_filter(w: ComplexWaveform, order: int = 4, bw: float = 28e9) -> ComplexWaveform:
    if bw >= w.sample_rate / 2:
        raise ValueError(f"Bessel bandwidth {bw:g} Hz is not below Nyquist ({w.sample_rate / 2:g} Hz)")
    return w.with_samples(apply_transfer(w.samples, bessel_response(len(w), w.sample_rate, order, bw)))


def qi_compensate(w: ComplexWaveform, equalize_variance: bool = True) -> ComplexWaveform:
    """Gram-Schmidt orthogonalization of the quadrature rail against the in-phase rail.

    Means are removed first.  The in-phase rail is kept as the reference and
    the orthogonalized quadrature rail is rescaled to the same variance
    unless ``equalize_variance`` is False.  Rescaling assumes a proper
    (circularly symmetric) signal, which rectangular 8-QAM only becomes
    after dispersion or carrier rotation has mixed the rails.
    """
    i = w.samples.real - w.samples.real.mean()
    q = w.samples.imag - w.samples.imag.mean()
    pi = np.dot(i, i)
    if pi == 0:
        raise ValueError("in-phase rail is constant; cannot orthogonalize")
    q_o = q - (np.dot(i, q) / pi) * i
    pq = np.dot(q_o, q_o)
    if pq == 0:
        raise ValueError("quadrature rail is degenerate; cannot orthogonalize")
    if not equalize_variance:
        return w.with_samples(i + 1j * q_o)
    return w.with_samples(i + 1j * q_o * np.sqrt(pi / pq))

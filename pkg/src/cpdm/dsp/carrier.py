"""Carrier recovery: spectral-peak frequency offset estimation and blind phase search."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..signal import DEFAULT_CONSTELLATION, Constellation8QAM, fft

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoeConfig:
    """``power`` is the exponent that strips the modulation.

    Rectangular 8-QAM has only two-fold rotational symmetry, so the squared
    outer-ring symbols already carry a residual carrier at twice the offset.
    """

    enable: bool = True
    method: str = "spectral_peak"
    search_range: float = 2e9
    power: int = 2
    outer_ring_only: bool = True
    oversample: int = 4
    min_peak_ratio: float = 10.0


@dataclass(frozen=True)
class FoeResult:
    offset: float
    peak_ratio: float
    reliable: bool


@dataclass(frozen=True)
class BpsConfig:
    enable: bool = True
    b_test_phases: int = 32
    window: int = 32
    symmetry_order: int = 2

    def __post_init__(self):
        if self.b_test_phases < 8:
            raise ValueError("b_test_phases must be >= 8")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.symmetry_order < 1:
            raise ValueError("symmetry_order must be >= 1")


@dataclass
class BpsResult:
    phase: np.ndarray  # unwrapped per-symbol estimate, rad
    n_unwraps: int

    @property
    def mean_step(self) -> float:
        return float(np.mean(np.abs(np.diff(self.phase)))) if self.phase.size > 1 else 0.0

    @property
    def slip_rate(self) -> float:
        return self.n_unwraps / max(1, self.phase.size)


def estimate_offset(symbols: np.ndarray, symbol_rate: float, cfg: FoeConfig = FoeConfig()) -> FoeResult:
    """Frequency offset from the peak of the ``power``-th power spectrum.

    ``symbols`` is ``(channels, N)`` at one sample per symbol; the power
    spectra of all channels are summed since they share one local
    oscillator.  The peak is refined by a parabola through three bins.
    """
    s = np.atleast_2d(np.asarray(symbols, np.complex128))
    s = s / np.sqrt(np.mean(np.abs(s) ** 2, axis=1, keepdims=True))
    z = s**cfg.power
    if cfg.outer_ring_only:
        z = np.where(np.abs(s) ** 2 > 1.0, z, 0)
    n = s.shape[1]
    n_fft = 1 << int(np.ceil(np.log2(n * cfg.oversample)))
    zp = np.zeros((z.shape[0], n_fft), np.complex128)
    zp[:, :n] = z
    spec = np.sum(np.abs(fft(zp)) ** 2, axis=0)
    f = np.fft.fftfreq(n_fft, 1 / symbol_rate) / cfg.power
    lim = min(cfg.search_range, symbol_rate / (2 * cfg.power))
    allowed = np.abs(f) <= lim
    idx = np.flatnonzero(allowed)
    k = idx[np.argmax(spec[idx])]
    y0, y1, y2 = spec[(k - 1) % n_fft], spec[k], spec[(k + 1) % n_fft]
    den = y0 - 2 * y1 + y2
    frac = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    df = symbol_rate / n_fft / cfg.power
    offset = f[k] + float(np.clip(frac, -0.5, 0.5)) * df
    ratio = float(y1 / max(np.median(spec[allowed]), 1e-300))
    reliable = ratio >= cfg.min_peak_ratio
    if not reliable:
        log.warning("no dominant spectral peak for the frequency offset (ratio %.1f)", ratio)
    return FoeResult(float(offset), ratio, reliable)


def remove_offset(symbols: np.ndarray, offset: float, symbol_rate: float) -> np.ndarray:
    s = np.asarray(symbols, np.complex128)
    k = np.arange(s.shape[-1])
    return s * np.exp(-2j * np.pi * offset * k / symbol_rate)


def foe(symbols: np.ndarray, symbol_rate: float, cfg: FoeConfig = FoeConfig()) -> tuple[np.ndarray, FoeResult]:
    res = estimate_offset(symbols, symbol_rate, cfg)
    return remove_offset(symbols, res.offset, symbol_rate), res


def _min_distance2(z: np.ndarray, pts: np.ndarray) -> np.ndarray:
    d = np.abs(z[..., None] - pts) ** 2
    return d.min(axis=-1)


def bps_phase(symbols: np.ndarray, cfg: BpsConfig = BpsConfig(),
              c: Constellation8QAM = DEFAULT_CONSTELLATION, chunk: int = 8) -> BpsResult:
    """Per-symbol carrier phase of one stream by blind phase search.

    Test phases cover one symmetry period, ``[-pi/s, pi/s)``.  For each
    symbol the phase minimizing the squared decision distance summed over a
    centred window of ``window`` symbols is chosen; the block is treated as
    periodic.  Estimates are unwrapped with period ``2 pi / s``.
    """
    s = np.asarray(symbols, np.complex128)
    n = s.size
    if n == 0:
        return BpsResult(np.zeros(0), 0)
    s = s / np.sqrt(np.mean(np.abs(s) ** 2))
    period = 2 * np.pi / cfg.symmetry_order
    b = cfg.b_test_phases
    phases = -period / 2 + period * np.arange(b) / b
    w = min(cfg.window, n)
    best = np.full(n, np.inf)
    idx = np.zeros(n, np.int64)
    half = w // 2
    for start in range(0, b, chunk):
        ph = phases[start: start + chunk]
        d = _min_distance2(s[None, :] * np.exp(-1j * ph)[:, None], c.points)
        ext = np.concatenate([d[:, n - half:], d, d[:, : w - half]], axis=1)
        cs = np.concatenate([np.zeros((d.shape[0], 1)), np.cumsum(ext, axis=1)], axis=1)
        acc = cs[:, w: w + n] - cs[:, :n]
        k = np.argmin(acc, axis=0)
        m = acc[k, np.arange(n)]
        better = m < best
        best[better] = m[better]
        idx[better] = start + k[better]
    raw = phases[idx]
    steps = np.diff(raw)
    n_unwraps = int(np.sum(np.abs(steps) > period / 2))
    phase = np.unwrap(raw, period=period)
    return BpsResult(phase, n_unwraps)


def cpe_bps(symbols: np.ndarray, cfg: BpsConfig = BpsConfig(),
            c: Constellation8QAM = DEFAULT_CONSTELLATION) -> tuple[np.ndarray, list[BpsResult]]:
    """Apply :func:`bps_phase` to each row of ``(channels, N)`` symbols."""
    s = np.atleast_2d(np.asarray(symbols, np.complex128))
    out = np.empty_like(s)
    results = []
    for i, row in enumerate(s):
        r = bps_phase(row, cfg, c)
        out[i] = row * np.exp(-1j * r.phase)
        results.append(r)
    return out, results

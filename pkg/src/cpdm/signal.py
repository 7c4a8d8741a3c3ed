"""Sampled waveform containers, bit sources, 8-QAM mapping and spectral helpers.

Every stage of the simulator passes :class:`ComplexWaveform` or
:class:`JonesSignal` objects around.  They are frozen dataclasses wrapping
read-only numpy arrays so that a waveform can be shared between sweep workers
without defensive copies.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import signal as sps

BITS_PER_SYMBOL = 3

_DUMP_MAGIC = b"CPDMWAVE"
_DUMP_HEADER = struct.Struct("<8sdQ8x")  # 32 bytes

# taps (exponents) of the Fibonacci LFSR feedback polynomials
_PRBS_TAPS = {"PRBS15": (15, 14), "PRBS23": (23, 18)}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ComplexWaveform:
    """Uniformly sampled complex envelope.

    Parameters
    ----------
    samples : array_like
        Complex amplitudes, sqrt(W) for optical fields and A or V for
        electrical waveforms.
    sample_rate : float
        Sampling rate in Hz.
    center_frequency_offset : float
        Offset of the baseband reference from the nominal carrier, Hz.
    """

    samples: np.ndarray
    sample_rate: float
    center_frequency_offset: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if s.flags.writeable:
            s = _frozen(s)
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        """Mean of ``|samples|**2``."""
        return float(np.mean(np.abs(self.samples) ** 2))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "ComplexWaveform":
        return ComplexWaveform(samples, self.sample_rate, self.center_frequency_offset)


@dataclass(frozen=True, eq=False)
class JonesSignal:
    """Two orthogonal polarization components on the fixed H/V basis.

    ``ase_psd`` is the bookkept ASE power spectral density per mode (W/Hz at
    the band center) and ``noise_bandwidth`` the bandwidth over which that
    noise currently extends; both are ``None`` when noise is untracked.
    """

    x: ComplexWaveform
    y: ComplexWaveform
    ase_psd: float | None = 0.0
    noise_bandwidth: float | None = None

    def __post_init__(self):
        if self.x.sample_rate != self.y.sample_rate:
            raise ValueError("x and y sample rates differ")
        if len(self.x) != len(self.y):
            raise ValueError("x and y lengths differ")
        if self.noise_bandwidth is None:
            object.__setattr__(self, "noise_bandwidth", self.x.sample_rate)

    @classmethod
    def from_array(cls, a: np.ndarray, sample_rate: float, **kw) -> "JonesSignal":
        a = np.asarray(a)
        return cls(ComplexWaveform(a[0], sample_rate), ComplexWaveform(a[1], sample_rate), **kw)

    @property
    def sample_rate(self) -> float:
        return self.x.sample_rate

    def __len__(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        """``(2, N)`` array of the x and y samples."""
        return np.vstack([self.x.samples, self.y.samples])

    @property
    def power(self) -> float:
        """Total average power, x plus y."""
        return self.x.power + self.y.power

    def with_array(self, a: np.ndarray, **kw) -> "JonesSignal":
        kw.setdefault("ase_psd", self.ase_psd)
        kw.setdefault("noise_bandwidth", self.noise_bandwidth)
        return JonesSignal.from_array(a, self.sample_rate, **kw)


Field = JonesSignal | tuple[JonesSignal, ...]


def field_pairs(sig: Field) -> tuple[JonesSignal, ...]:
    return (sig,) if isinstance(sig, JonesSignal) else tuple(sig)


def stack_field(sig: Field) -> np.ndarray:
    """All modes of a field as a ``(2 * n_pairs, N)`` array."""
    return np.vstack([p.as_array() for p in field_pairs(sig)])


def unstack_field(template: Field, a: np.ndarray, **kw) -> Field:
    """Inverse of :func:`stack_field`; ``kw`` overrides noise bookkeeping."""
    pairs = field_pairs(template)
    out = tuple(p.with_array(a[2 * i: 2 * i + 2], **kw) for i, p in enumerate(pairs))
    return out[0] if isinstance(template, JonesSignal) else out


def field_power(sig: Field) -> float:
    return sum(p.power for p in field_pairs(sig))


@dataclass(frozen=True, eq=False)
class TributarySet:
    """The four CPDM tributaries: RCP-H, RCP-V, LCP-H and LCP-V."""

    rcp_h: ComplexWaveform
    rcp_v: ComplexWaveform
    lcp_h: ComplexWaveform
    lcp_v: ComplexWaveform

    NAMES = ("rcp_h", "rcp_v", "lcp_h", "lcp_v")

    def __post_init__(self):
        ws = list(self)
        if len({w.sample_rate for w in ws}) != 1 or len({len(w) for w in ws}) != 1:
            raise ValueError("tributaries must share sample rate and length")

    def __iter__(self) -> Iterator[ComplexWaveform]:
        return iter((self.rcp_h, self.rcp_v, self.lcp_h, self.lcp_v))

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], sample_rate: float) -> "TributarySet":
        return cls(*(ComplexWaveform(a, sample_rate) for a in arrays))


@dataclass(frozen=True, eq=False)
class BitStream:
    bits: np.ndarray
    seed: int | None = None
    generator: str = "uniform"

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1:
            raise ValueError("bits must be 1-D")
        if np.any(b > 1):
            raise ValueError("bits must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(b))

    def __len__(self) -> int:
        return self.bits.size


@dataclass(frozen=True, eq=False)
class Constellation8QAM:
    """Eight complex points indexed by their 3-bit label.

    ``points[k]`` carries label ``k``; ``labels`` is kept explicit so that
    alternative label assignments can be expressed.
    """

    points: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.arange(8))

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.complex128)
        lab = np.asarray(self.labels, dtype=np.int64)
        if p.shape != (8,) or sorted(lab.tolist()) != list(range(8)):
            raise ValueError("need 8 points and a permutation of 0..7 as labels")
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "labels", _frozen(lab))

    @property
    def by_label(self) -> np.ndarray:
        """Points re-ordered so that index == label."""
        out = np.empty(8, np.complex128)
        out[self.labels] = self.points
        return out

    @property
    def radii(self) -> np.ndarray:
        """Distinct point radii in ascending order."""
        return np.unique(np.round(np.abs(self.points), 12))

    @property
    def dispersion_constant(self) -> float:
        """Godard modulus ``E|a|^4 / E|a|^2`` used by the CMA stage."""
        a2 = np.abs(self.points) ** 2
        return float(np.mean(a2**2) / np.mean(a2))


def rect_8qam() -> Constellation8QAM:
    """Rectangular 8-QAM, {+-1, +-3} + j{+-1}, unit mean energy.

    Label bits ``b2 b1 b0``: ``b2`` selects the row (0 for +j, 1 for -j) and
    ``b1 b0`` Gray-code the column, so horizontally and vertically adjacent
    points differ in exactly one bit::

        label:  0  1  3  2      (row +j)
                4  5  7  6      (row -j)
        I:     -3 -1 +1 +3
    """
    cols = {0b00: -3, 0b01: -1, 0b11: 1, 0b10: 3}
    pts = np.empty(8, np.complex128)
    for lab in range(8):
        pts[lab] = cols[lab & 0b11] + 1j * (1 - 2 * (lab >> 2))
    return Constellation8QAM(pts / np.sqrt(6.0))


DEFAULT_CONSTELLATION = rect_8qam()


def _lfsr(n: int, order: int, tap: int, seed: int) -> np.ndarray:
    period = (1 << order) - 1
    state = seed % period + 1
    out = np.empty(n + order, np.uint8)
    out[:order] = [(state >> k) & 1 for k in range(order)]
    # b[k] = b[k - order] ^ b[k - tap]; vectorised in blocks no longer than ``tap``
    k = order
    while k < n + order:
        m = min(tap, n + order - k)
        out[k: k + m] = out[k - order: k - order + m] ^ out[k - tap: k - tap + m]
        k += m
    return out[order:]


def generate_bits(n: int, seed: int = 0, generator: str = "PRBS15") -> BitStream:
    """Generate ``n`` bits from a PRBS generator or a seeded uniform source.

    ``seed`` selects the initial LFSR state for the PRBS generators, so that
    different seeds give cyclic shifts of the same maximal-length sequence.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    gen = generator.upper()
    if gen in _PRBS_TAPS:
        order, tap = _PRBS_TAPS[gen]
        bits = _lfsr(n, order, tap, seed)
    elif gen == "UNIFORM":
        bits = np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)
    else:
        raise ValueError(f"unknown generator {generator!r}")
    return BitStream(bits, seed, gen)


def bits_to_labels(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, np.int64).reshape(-1, BITS_PER_SYMBOL)
    return (b[:, 0] << 2) | (b[:, 1] << 1) | b[:, 2]


def labels_to_bits(labels: np.ndarray) -> np.ndarray:
    lab = np.asarray(labels, np.int64)
    return np.stack([(lab >> 2) & 1, (lab >> 1) & 1, lab & 1], axis=-1).reshape(-1).astype(np.uint8)


def map_8qam(bits: BitStream | np.ndarray, c: Constellation8QAM = DEFAULT_CONSTELLATION,
             symbol_rate: float = 1.0) -> ComplexWaveform:
    """Map groups of three bits (MSB first) to constellation points."""
    b = bits.bits if isinstance(bits, BitStream) else np.asarray(bits)
    if b.size % BITS_PER_SYMBOL:
        raise ValueError(f"bit count {b.size} is not divisible by {BITS_PER_SYMBOL}")
    return ComplexWaveform(c.by_label[bits_to_labels(b)], symbol_rate)


def decide_labels(symbols: np.ndarray, c: Constellation8QAM = DEFAULT_CONSTELLATION) -> np.ndarray:
    """Minimum-distance labels; exact ties resolve to the lowest label."""
    s = np.asarray(symbols, np.complex128)
    pts = c.by_label
    d2 = np.abs(s[:, None] - pts[None, :]) ** 2
    dmin = d2.min(axis=1, keepdims=True)
    # treat distances equal to within rounding as ties
    tie = d2 <= dmin * (1 + 1e-9) + 1e-15
    return np.argmax(tie, axis=1)


def demap_8qam(symbols: ComplexWaveform | np.ndarray,
               c: Constellation8QAM = DEFAULT_CONSTELLATION) -> BitStream:
    s = symbols.samples if isinstance(symbols, ComplexWaveform) else symbols
    return BitStream(labels_to_bits(decide_labels(s, c)))


def nearest_points(symbols: np.ndarray, c: Constellation8QAM = DEFAULT_CONSTELLATION) -> np.ndarray:
    return c.by_label[decide_labels(symbols, c)]


# --- spectral helpers ---------------------------------------------------------

def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return sfft.fft(x, axis=axis, workers=-1)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return sfft.ifft(x, axis=axis, workers=-1)


def frequency_grid(n: int, sample_rate: float) -> np.ndarray:
    """FFT-ordered frequencies in Hz."""
    return sfft.fftfreq(n, 1.0 / sample_rate)


def angular_frequency(n: int, sample_rate: float) -> np.ndarray:
    """FFT-ordered angular frequencies in rad/s.

    With numpy's transform convention a waveform is ``sum(X * exp(+j w t))``
    so a time derivative becomes multiplication by ``+j w``.
    """
    return 2 * np.pi * frequency_grid(n, sample_rate)


def apply_transfer(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Circular filtering of ``x`` (last axis) with a sampled frequency response."""
    return ifft(fft(x) * h)


def brickwall_lowpass(x: np.ndarray, sample_rate: float, cutoff: float) -> np.ndarray:
    f = frequency_grid(x.shape[-1], sample_rate)
    return apply_transfer(x, (np.abs(f) <= cutoff).astype(float))


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(
        t <= 1, (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def cubic_interpolate(x: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Four-point cubic convolution interpolation of a periodic sequence.

    ``positions`` are fractional sample indices; the input is treated as
    periodic, matching the FFT-based stages.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    base = np.floor(positions).astype(np.int64)
    mu = positions - base
    out = np.zeros(x.shape[:-1] + positions.shape, dtype=np.result_type(x, np.float64))
    for k in (-1, 0, 1, 2):
        out += x[..., (base + k) % n] * _cubic_kernel(mu - k)
    return out


def resample(w: ComplexWaveform, new_rate: float, method: str = "fft",
             antialias: bool = True) -> ComplexWaveform:
    """Change the sampling rate of a periodic waveform.

    ``method="fft"`` is exact for band-limited periodic signals.
    ``method="cubic"`` evaluates a four-point cubic interpolator on the new
    grid; when decimating, ``antialias`` first removes content above the new
    Nyquist frequency so that out-of-band noise does not fold in-band.
    """
    if len(w) == 0:
        raise ValueError("empty waveform")
    if not new_rate > 0:
        raise ValueError("new_rate must be positive")
    if new_rate == w.sample_rate:
        return w
    n_new = int(round(len(w) * new_rate / w.sample_rate))
    x = w.samples
    if method == "fft":
        y = sps.resample(x, n_new)
    elif method == "cubic":
        if antialias and new_rate < w.sample_rate:
            x = brickwall_lowpass(x, w.sample_rate, new_rate / 2)
        pos = np.arange(n_new) * (w.sample_rate / new_rate)
        y = cubic_interpolate(x, pos)
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    return ComplexWaveform(y, new_rate, w.center_frequency_offset)


def shift_frequency(x: np.ndarray, offset: float, sample_rate: float, phase0: float = 0.0) -> np.ndarray:
    n = np.arange(x.shape[-1])
    return x * np.exp(1j * (2 * np.pi * offset * n / sample_rate + phase0))


def db2lin(x):
    return 10.0 ** (np.asarray(x) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def dbm2w(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm) / 10.0)


def w2dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w) / 1e-3)


# --- waveform dump format -------------------------------------------------------

def dump_waveform(w: ComplexWaveform, path: str | Path) -> None:
    """Write ``w`` as a 32-byte header followed by little-endian (re, im) float64."""
    body = np.empty(2 * len(w), "<f8")
    body[0::2] = w.samples.real
    body[1::2] = w.samples.imag
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, float(w.sample_rate), len(w)))
        fh.write(body.tobytes())


def load_waveform(path: str | Path) -> ComplexWaveform:
    raw = Path(path).read_bytes()
    magic, rate, n = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC:
        raise ValueError(f"{path}: not a waveform dump")
    body = np.frombuffer(raw, "<f8", count=2 * n, offset=_DUMP_HEADER.size)
    return ComplexWaveform(body[0::2] + 1j * body[1::2], rate)


__all__ = [
    "BITS_PER_SYMBOL", "BitStream", "ComplexWaveform", "Constellation8QAM",
    "DEFAULT_CONSTELLATION", "Field", "JonesSignal", "TributarySet",
    "angular_frequency", "apply_transfer", "bits_to_labels", "brickwall_lowpass",
    "cubic_interpolate", "db2lin", "dbm2w", "decide_labels", "demap_8qam",
    "dump_waveform", "fft", "field_pairs", "field_power", "frequency_grid",
    "generate_bits", "ifft", "labels_to_bits", "lin2db", "load_waveform",
    "map_8qam", "nearest_points", "rect_8qam", "resample",
    "shift_frequency", "stack_field", "unstack_field", "w2dbm",
]

"""BER, EVM and OSNR measurement, required-OSNR search and link budget."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .channel import REF_BANDWIDTH, bookkept_osnr
from .signal import (
    DEFAULT_CONSTELLATION, Constellation8QAM, Field, JonesSignal, decide_labels, fft, field_pairs,
    frequency_grid, labels_to_bits, nearest_points, stack_field,
)

log = logging.getLogger(__name__)

SYNC_THRESHOLD = 0.9
MIN_SYNC_SYMBOLS = 4096
# 10 log10(1 mW / (h nu B_ref)) at 1550 nm in 0.1 nm is 57.95; the usual rounded value is kept
BUDGET_CONSTANT_DB = 58.0


# --- synchronization --------------------------------------------------------

@dataclass(frozen=True)
class SyncResult:
    """Alignment of one received stream to a transmitted stream.

    The received stream ``r`` matches ``tx[source]`` as
    ``roll(conj?(r) * exp(-j pi/2 rotation), -delay)``.
    """

    delay: int
    rotation: int  # multiples of pi/2
    conjugated: bool
    source: int
    correlation: float

    @property
    def ok(self) -> bool:
        return self.correlation >= SYNC_THRESHOLD

    def apply(self, rx: np.ndarray) -> np.ndarray:
        r = np.conj(rx) if self.conjugated else np.asarray(rx)
        return np.roll(r * np.exp(-0.5j * np.pi * self.rotation), -self.delay)


def _xcorr(r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Normalized circular correlation ``c[d] = sum r[n + d] conj(t[n])``."""
    c = np.fft.ifft(np.fft.fft(r) * np.conj(np.fft.fft(t)))
    return c / (np.linalg.norm(r) * np.linalg.norm(t))


def synchronize(rx: np.ndarray, tx: np.ndarray) -> list[SyncResult]:
    """Resolve delay, quarter-turn rotation, conjugation and channel order.

    ``rx`` and ``tx`` are ``(M, N)`` symbol arrays.  Every pairing is
    searched exhaustively and the permutation with the largest total
    correlation is returned, one :class:`SyncResult` per received row.
    """
    rx, tx = np.atleast_2d(rx), np.atleast_2d(tx)
    if rx.shape != tx.shape:
        raise ValueError(f"shape mismatch: rx {rx.shape}, tx {tx.shape}")
    m, n = rx.shape
    if n < MIN_SYNC_SYMBOLS:
        raise ValueError(f"need at least {MIN_SYNC_SYMBOLS} symbols to synchronize")
    best: dict[tuple[int, int], SyncResult] = {}
    for i, j in itertools.product(range(m), range(m)):
        cands = []
        for conj in (False, True):
            r = np.conj(rx[i]) if conj else rx[i]
            c = _xcorr(r, tx[j])
            d = int(np.argmax(np.abs(c)))
            rot = int(np.round(np.angle(c[d]) / (np.pi / 2))) % 4
            cands.append(SyncResult(d, rot, conj, j, float(np.abs(c[d]))))
        best[i, j] = max(cands, key=lambda s: s.correlation)
    perm = max(itertools.permutations(range(m)),
               key=lambda p: sum(best[i, p[i]].correlation for i in range(m)))
    return [best[i, perm[i]] for i in range(m)]


# --- error counting ---------------------------------------------------------

@dataclass(frozen=True)
class BerResult:
    errors: int
    compared: int
    ci_low: float
    ci_high: float
    sync_failed: bool = False

    @property
    def ber(self) -> float:
        if self.sync_failed:
            return 0.5
        return self.errors / self.compared if self.compared else float("nan")

    @property
    def upper_bound(self) -> bool:
        """True when no errors were seen; :attr:`reported` is then ``1/n``."""
        return self.errors == 0 and not self.sync_failed

    @property
    def reported(self) -> float:
        return 1.0 / self.compared if self.upper_bound else self.ber

    def __add__(self, other: "BerResult") -> "BerResult":
        return _ber_result(self.errors + other.errors, self.compared + other.compared,
                           self.sync_failed or other.sync_failed)


def _ber_result(errors: int, n: int, sync_failed: bool = False) -> BerResult:
    p = errors / n if n else 0.0
    half = 1.96 * np.sqrt(p * (1 - p) / n) if n else 0.0
    return BerResult(int(errors), int(n), max(0.0, p - half), min(1.0, p + half), sync_failed)


def count_ber(rx_bits: np.ndarray, tx_bits: np.ndarray) -> BerResult:
    """Bit error ratio of aligned streams with a 95% normal-approximation interval."""
    rx_bits, tx_bits = np.asarray(rx_bits), np.asarray(tx_bits)
    if rx_bits.shape != tx_bits.shape:
        raise ValueError("bit streams differ in length")
    return _ber_result(int(np.count_nonzero(rx_bits != tx_bits)), rx_bits.size)


def ber_from_symbols(rx: np.ndarray, tx: np.ndarray, guard: int = 512,
                     c: Constellation8QAM = DEFAULT_CONSTELLATION) -> tuple[BerResult, list[BerResult], list[SyncResult]]:
    """Synchronize, slice and count errors for every stream.

    Received symbols within ``guard`` positions of either block end are
    excluded, since the periodic receiver processing wraps there.  Streams
    that fail to synchronize count as BER 0.5.
    """
    rx, tx = np.atleast_2d(rx), np.atleast_2d(tx)
    n = rx.shape[1]
    if 2 * guard >= n:
        raise ValueError("guard leaves no symbols to count")
    syncs = synchronize(rx, tx)
    pos = np.arange(n)
    keep = (pos >= guard) & (pos < n - guard)
    per = []
    for i, s in enumerate(syncs):
        nb = 3 * int(keep.sum())
        if not s.ok:
            log.warning("stream %d failed to synchronize (correlation %.3f)", i, s.correlation)
            per.append(_ber_result(nb // 2, nb, sync_failed=True))
            continue
        r = s.apply(rx[i])
        m = np.roll(keep, -s.delay)
        r = r / np.sqrt(np.mean(np.abs(r) ** 2))
        rb = labels_to_bits(decide_labels(r[m], c))
        tb = labels_to_bits(decide_labels(tx[s.source][m], c))
        per.append(count_ber(rb, tb))
    total = per[0]
    for b in per[1:]:
        total = total + b
    return total, per, syncs


def evm_db(rx: np.ndarray, ref: np.ndarray | None = None) -> float:
    """EVM in dB after a least-squares complex gain; decision-directed when ``ref`` is None."""
    r = np.asarray(rx).ravel()
    if ref is None:
        r = r / np.sqrt(np.mean(np.abs(r) ** 2))
        ref = nearest_points(r)
    ref = np.asarray(ref).ravel()
    g = np.vdot(r, ref) / np.vdot(r, r)
    e = g * r - ref
    return float(10 * np.log10(np.mean(np.abs(e) ** 2) / np.mean(np.abs(ref) ** 2)))


def q_factor_db(ber: float) -> float:
    """Gaussian-equivalent Q factor, ``20 log10(sqrt(2) erfcinv(2 BER))``."""
    if not 0 < ber < 0.5:
        return float("inf") if ber == 0 else float("nan")
    return float(20 * np.log10(np.sqrt(2) * special.erfcinv(2 * ber)))


# --- OSNR ---------------------------------------------------------------------

def measure_osnr(sig: Field, method: str = "noise_bookkeeping", ref_bw: float = REF_BANDWIDTH,
                 signal_band: float | None = None, noise_band: tuple[float, float] = (15e9, 45e9)) -> float:
    """OSNR in dB, noise of both polarizations counted in ``ref_bw``.

    ``noise_bookkeeping`` uses the tracked ASE density.  ``spectral_interp``
    takes the noise density as the mean power spectrum inside ``noise_band``
    (offsets from the carrier, Hz) and the signal as the power within
    ``+-signal_band`` less that floor; it suits band-limited pulses.
    """
    if method == "noise_bookkeeping":
        if any(p.ase_psd is None for p in field_pairs(sig)):
            raise ValueError("noise bookkeeping is unavailable: the field does not track ASE")
        return bookkept_osnr(sig, ref_bw)
    if method != "spectral_interp":
        raise ValueError(f"unknown OSNR method {method!r}")
    a = stack_field(sig)
    rate = field_pairs(sig)[0].sample_rate
    n = a.shape[-1]
    psd = np.sum(np.abs(fft(a)) ** 2, axis=0) / n**2 * n / rate  # W/Hz summed over modes
    f = np.abs(frequency_grid(n, rate))
    f1, f2 = noise_band
    mask = (f >= f1) & (f <= f2)
    if not mask.any():
        raise ValueError("noise band holds no frequency bins")
    floor = float(np.mean(psd[mask]))
    sb = f1 if signal_band is None else signal_band
    inband = f <= sb
    df = rate / n
    p_sig = float(np.sum(psd[inband]) * df - floor * np.count_nonzero(inband) * df)
    per_mode = floor / a.shape[0]
    if p_sig <= 0:
        raise ValueError("no signal above the noise floor")
    return float(10 * np.log10(p_sig / (2 * per_mode * ref_bw)))


def osnr_max_achievable(p_launch_dbm: float, nf_db: float, span_loss_db: float, n_spans: int,
                        constant_db: float = BUDGET_CONSTANT_DB) -> float:
    """Analytic link-budget OSNR in 0.1 nm after ``n_spans`` amplified spans."""
    if n_spans < 1:
        raise ValueError("n_spans must be >= 1")
    return constant_db + p_launch_dbm - nf_db - span_loss_db - 10 * np.log10(n_spans)


def osnr_margin(max_achievable_db: float, required_db: float) -> float:
    return max_achievable_db - required_db


class BracketError(RuntimeError):
    pass


@dataclass
class OsnrSearch:
    """Outcome of a required-OSNR search with every evaluated point."""

    target_ber: float
    value: float
    points: list[tuple[float, float]] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        pts = sorted(self.points)
        return all(b1 >= b2 for (_, b1), (_, b2) in zip(pts, pts[1:]))


def _log(b: float, floor: float) -> float:
    return float(np.log10(max(b, floor)))


def osnr_required(ber_at: Callable[[float], float], target_ber: float, lo: float = 8.0,
                  hi: float = 30.0, tol: float = 0.1, floor: float = 1e-7) -> OsnrSearch:
    """OSNR (dB) at which ``ber_at`` crosses ``target_ber``.

    ``ber_at`` must use a fixed noise realization so that BER is monotone in
    OSNR.  The bracket is bisected to ``tol`` and the crossing is
    interpolated linearly in ``log10(BER)``.  Raises :class:`BracketError`
    when the target is not inside ``[BER(hi), BER(lo)]``.
    """
    if not 0 < target_ber < 0.5:
        raise ValueError("target BER must lie in (0, 0.5)")
    pts: list[tuple[float, float]] = []

    def ev(x: float) -> float:
        b = float(ber_at(x))
        pts.append((x, b))
        log.debug("OSNR %.3f dB -> BER %.3g", x, b)
        return b

    b_hi = ev(hi)
    if b_hi > target_ber:
        raise BracketError(f"BER {b_hi:.3g} at {hi} dB is above the target {target_ber:g}")
    b_lo = ev(lo)
    if b_lo < target_ber:
        raise BracketError(f"BER {b_lo:.3g} at {lo} dB is already below the target {target_ber:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        b = ev(mid)
        if b > target_ber:
            lo, b_lo = mid, b
        else:
            hi, b_hi = mid, b
    y_lo, y_hi, y_t = _log(b_lo, floor), _log(b_hi, floor), np.log10(target_ber)
    x = hi if y_lo == y_hi else lo + (y_lo - y_t) / (y_lo - y_hi) * (hi - lo)
    res = OsnrSearch(target_ber, float(np.clip(x, lo, hi)), pts)
    if not res.monotone:
        log.warning("BER was not monotone in OSNR over the search points")
    return res


# --- reports ------------------------------------------------------------------

@dataclass
class LinkReport:
    """One operating point; columns are written in field order."""

    launch_power: float
    distance: float
    span_km: float
    sps_bit: float
    ber: float
    ber_upper_bound: bool
    evm: float
    q_factor: float
    osnr_measured: float
    osnr_required: float
    osnr_max_achievable: float
    osnr_margin: float
    seed: int
    status: str = "ok"

    def __post_init__(self):
        if not (np.isnan(self.ber) or 0 <= self.ber <= 0.5):
            raise ValueError("ber must lie in [0, 0.5]")
        expect = self.osnr_max_achievable - self.osnr_required
        if np.isfinite(expect) and abs(expect - self.osnr_margin) > 1e-9:
            raise ValueError("osnr_margin must equal osnr_max_achievable - osnr_required")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list:
        return [getattr(self, c) for c in self.columns()]

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=float)


# --- export -------------------------------------------------------------------

def export_constellation(symbols: np.ndarray, path: str | Path) -> None:
    """Write symbols as ``re,im`` rows under a header."""
    s = np.asarray(symbols).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im"])
        w.writerows(zip(s.real.tolist(), s.imag.tolist()))


def stokes(sig: JonesSignal) -> np.ndarray:
    """Stokes parameters ``(4, N)`` of a Jones field."""
    x, y = sig.x.samples, sig.y.samples
    s0 = np.abs(x) ** 2 + np.abs(y) ** 2
    s1 = np.abs(x) ** 2 - np.abs(y) ** 2
    s2 = 2 * np.real(x * np.conj(y))
    s3 = -2 * np.imag(x * np.conj(y))
    return np.vstack([s0, s1, s2, s3])


def export_stokes(sig: JonesSignal, path: str | Path, normalized: bool = True) -> None:
    s = stokes(sig)
    if normalized:
        s = s / np.where(s[0] > 0, s[0], 1.0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s0", "s1", "s2", "s3"])
        w.writerows(s.T.tolist())


def cluster_spread(symbols: np.ndarray, reference: np.ndarray | None = None,
                   c: Constellation8QAM = DEFAULT_CONSTELLATION) -> float:
    """RMS distance of unit-power symbols from ``reference`` (default: decisions)."""
    s = np.asarray(symbols).ravel()
    s = s / np.sqrt(np.mean(np.abs(s) ** 2))
    ref = nearest_points(s, c) if reference is None else np.asarray(reference).ravel()
    return float(np.sqrt(np.mean(np.abs(s - ref) ** 2)))


__all__ = [
    "BUDGET_CONSTANT_DB", "BerResult", "BracketError", "LinkReport", "OsnrSearch", "SyncResult",
    "ber_from_symbols", "cluster_spread", "count_ber", "evm_db", "export_constellation",
    "export_stokes", "measure_osnr", "osnr_margin", "osnr_max_achievable", "osnr_required",
    "q_factor_db", "stokes", "synchronize",
]

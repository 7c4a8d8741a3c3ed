"""Butterfly MIMO equalizer driven by CMA, then radius-directed updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..signal import DEFAULT_CONSTELLATION, Constellation8QAM

log = logging.getLogger(__name__)

SINGULARITY_THRESHOLD = 0.9
# independent sources stay near sqrt(ln N / N) at every lag
SEPARATION_THRESHOLD = 0.1


@dataclass(frozen=True)
class EqConfig:
    n_taps: int = 15
    mu_cma: float = 1e-3
    mu_rde: float = 5e-4
    stage1_len: int = 20000
    passes: int = 2

    def __post_init__(self):
        if self.n_taps < 1 or self.n_taps % 2 == 0:
            raise ValueError("n_taps must be a positive odd number")
        if self.mu_cma <= 0 or self.mu_rde <= 0:
            raise ValueError("step sizes must be positive")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


@dataclass
class EqualizerState:
    """Tap tensor ``taps[i, j, t]`` maps input ``j`` to output ``i``.

    Initialization is a unit spike on the centre tap of every diagonal
    filter and zeros elsewhere.
    """

    taps: np.ndarray
    mode: str = "CMA"
    error: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    singular: bool = False
    reinitialized: bool = False

    @classmethod
    def centre_spike(cls, n_channels: int, n_taps: int) -> "EqualizerState":
        w = np.zeros((n_channels, n_channels, n_taps), np.complex128)
        for i in range(n_channels):
            w[i, i, n_taps // 2] = 1.0
        return cls(w)

    @property
    def converged_error(self) -> float:
        """Mean squared modulus error over the last quarter of the final pass."""
        if self.error.size == 0:
            return float("nan")
        return _converged(self.error)


@njit(cache=True)
def _butterfly(x, w, mu_cma, mu_rde, r2_cma, radii2, n_cma, out, err):
    m = x.shape[0]
    n_taps = w.shape[2]
    n_out = out.shape[1]
    for k in range(n_out):
        for i in range(m):
            acc = 0j
            for j in range(m):
                for t in range(n_taps):
                    acc += w[i, j, t] * x[j, 2 * k + t]
            out[i, k] = acc
        for i in range(m):
            y = out[i, k]
            p = y.real * y.real + y.imag * y.imag
            if k < n_cma:
                r2 = r2_cma
                mu = mu_cma
            else:
                r2 = radii2[0]
                for r in radii2:
                    if abs(p - r) < abs(p - r2):
                        r2 = r
                mu = mu_rde
            d = p - r2
            err[i, k] = d * d
            g = mu * d * y
            for j in range(m):
                for t in range(n_taps):
                    w[i, j, t] -= g * np.conj(x[j, 2 * k + t])


def tap_correlation(w: np.ndarray) -> np.ndarray:
    """Normalized magnitude correlation between the tap rows of every output pair."""
    rows = w.reshape(w.shape[0], -1)
    norms = np.linalg.norm(rows, axis=1)
    g = np.abs(rows.conj() @ rows.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = g / np.outer(norms, norms)
    np.fill_diagonal(c, 0.0)
    return np.nan_to_num(c)


def output_correlation(y: np.ndarray) -> float:
    """Largest normalized cross-correlation over all lags between any two outputs."""
    m = y.shape[0]
    if m < 2:
        return 0.0
    f = np.fft.fft(y, axis=1)
    p = np.sqrt(np.mean(np.abs(y) ** 2, axis=1))
    best = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            if p[i] == 0 or p[j] == 0:
                continue
            c = np.fft.ifft(f[i] * np.conj(f[j])) / (y.shape[1] * p[i] * p[j])
            best = max(best, float(np.abs(c).max()))
    return best


def _is_singular(w: np.ndarray, y: np.ndarray) -> bool:
    # delayed copies of one source can leave the tap rows far from parallel
    return bool(tap_correlation(w).max() > SINGULARITY_THRESHOLD
                or output_correlation(y) > SINGULARITY_THRESHOLD)


def _orthogonal_second_row(w: np.ndarray) -> np.ndarray:
    w = w.copy()
    w[1, 0] = -np.conj(w[0, 1, ::-1])
    w[1, 1] = np.conj(w[0, 0, ::-1])
    return w


def _rotated_spike(n_taps: int, coupling: complex) -> np.ndarray:
    # 45-degree start; with the centre spike it keeps any channel away from the CMA saddle
    w = np.zeros((2, 2, n_taps), np.complex128)
    c = n_taps // 2
    w[0, 0, c], w[0, 1, c] = 1.0, coupling
    w[1, 0, c], w[1, 1, c] = -np.conj(coupling), 1.0
    return w / np.sqrt(2)


def _converged(err: np.ndarray) -> float:
    q = max(1, err.shape[1] // 4)
    return float(np.mean(err[:, -q:]))


def _schedule(xp, w0, cfg, r2_cma, radii2, cma_total, n_sym):
    m = xp.shape[0]
    w = w0.astype(np.complex128).copy()
    out = np.zeros((m, n_sym), np.complex128)
    err = np.zeros((m, n_sym))
    reinit = False
    n_passes = max(cfg.passes, -(-cma_total // n_sym) + (cma_total > n_sym))
    k = 0
    while k < n_passes:
        n_cma = min(max(cma_total - k * n_sym, 0), n_sym)
        _butterfly(xp, w, cfg.mu_cma, cfg.mu_rde, r2_cma, radii2, n_cma, out, err)
        k += 1
        # one re-initialization, followed by a full extra pass
        if not reinit and m == 2 and _is_singular(w, out):
            log.info("equalizer outputs converged to the same source; re-initializing")
            w = _orthogonal_second_row(w)
            reinit = True
            n_passes = max(n_passes, k + 2)
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("equalizer taps diverged")
    return out, w, err, _is_singular(w, out), reinit


def adaptive_equalize(channels: np.ndarray, cfg: EqConfig = EqConfig(),
                      c: Constellation8QAM = DEFAULT_CONSTELLATION,
                      state: EqualizerState | None = None) -> tuple[np.ndarray, EqualizerState]:
    """Equalize ``(M, 2N)`` channels at 2 samples/symbol into ``(M, N)`` symbols.

    Each input is scaled to unit power.  The block is treated as periodic
    and replayed ``passes`` times.  The first ``stage1_len`` symbols of the
    replayed stream use CMA with the Godard radius ``E|a|^4 / E|a|^2``; the
    rest use the nearest of the constellation's ring radii.  When the CMA
    stage outlasts a block, extra passes are added so that at least one
    full pass is radius-directed.

    Without a ``state``, a 2x2 butterfly starts from the centre spike.  If
    its outputs end singular or still mixed (cross-correlation above
    ``SEPARATION_THRESHOLD``), it is rerun from two 45-degree starts and the
    least correlated run is kept.
    """
    x = np.atleast_2d(np.asarray(channels, np.complex128))
    m, n2 = x.shape
    if n2 % 2:
        x = x[:, :-1]
        n2 -= 1
    p = np.mean(np.abs(x) ** 2, axis=1, keepdims=True)
    if np.any(p == 0):
        raise ValueError("cannot equalize an all-zero channel")
    x = x / np.sqrt(p)
    n_sym = n2 // 2
    h = cfg.n_taps // 2
    xp = np.concatenate([x[:, n2 - h:], x, x[:, :h]], axis=1) if h else x
    r2_cma = c.dispersion_constant
    radii2 = np.unique(np.round(c.radii**2, 12))
    cma_total = 0 if state is not None else cfg.stage1_len
    if state is not None:
        starts = [state.taps]
    else:
        starts = [EqualizerState.centre_spike(m, cfg.n_taps).taps]
        if m == 2:
            starts += [_rotated_spike(cfg.n_taps, 1.0), _rotated_spike(cfg.n_taps, 1j)]
    best = None
    for w0 in starts:
        run = _schedule(xp, w0, cfg, r2_cma, radii2, cma_total, n_sym)
        score = (run[3], output_correlation(run[0]))
        if best is None or score < best[0]:
            best = (score, run)
        if not score[0] and score[1] <= SEPARATION_THRESHOLD:
            break
    out, w, err, singular, reinit = best[1]
    if singular:
        log.warning("equalizer singularity: tap correlation %.3f, output correlation %.3f",
                    tap_correlation(w).max(), output_correlation(out))
    return out, EqualizerState(w, "RDE", err, singular, reinit)

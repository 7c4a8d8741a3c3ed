"""Gardner timing recovery with a cubic interpolator and a PI loop filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..signal import cubic_interpolate


@dataclass(frozen=True)
class TimingConfig:
    enable: bool = True
    algorithm: str = "gardner"
    loop_bw: float = 2e-3  # normalized to the symbol rate
    damping: float = 1 / np.sqrt(2)
    acquisition_symbols: int = 4096


@dataclass
class TimingInfo:
    tau: np.ndarray  # interpolation phase per symbol, in input samples
    error_var_start: float
    error_var_end: float
    diverged: bool

    @property
    def final_offset_ui(self) -> float:
        """Mean interpolation phase over the last quarter, in unit intervals."""
        tail = self.tau[-max(1, self.tau.size // 4):]
        return float(np.mean(tail)) / 2


@njit(cache=True)
def _interp(x, pos):
    n = x.shape[0]
    base = int(np.floor(pos))
    mu = pos - base
    acc = 0j
    for k in range(-1, 3):
        t = abs(mu - k)
        if t <= 1:
            c = 1.5 * t**3 - 2.5 * t**2 + 1
        elif t < 2:
            c = -0.5 * t**3 + 2.5 * t**2 - 4 * t + 2
        else:
            c = 0.0
        acc += x[(base + k) % n] * c
    return acc


@njit(cache=True)
def _gardner_loop(x, tau0, kp, ki, out, taus, errs):
    m, n = x.shape
    tau = tau0
    v = 0.0
    prev = np.empty(m, np.complex128)
    for c in range(m):
        prev[c] = _interp(x[c], tau)
        out[c, 0] = prev[c]
    k = 1
    while k < taus.shape[0]:
        pos = 2.0 * k + tau
        # the waveform is periodic, so positions past the end wrap around
        if pos > 2 * n or pos < -n:
            break
        e = 0.0
        for c in range(m):
            mid = _interp(x[c], pos - 1.0)
            cur = _interp(x[c], pos)
            out[c, 2 * k - 1] = mid
            out[c, 2 * k] = cur
            e += (np.conj(mid) * (prev[c] - cur)).real
            prev[c] = cur
        errs[k] = e
        taus[k] = tau
        v += ki * e
        tau += kp * e + v
        k += 1
    for c in range(m):
        out[c, 2 * k - 1] = _interp(x[c], 2.0 * k - 1 + tau)
    return k


def gardner_s_curve(x: np.ndarray, taus: np.ndarray, n_symbols: int) -> np.ndarray:
    """Mean Gardner detector output for fixed interpolation phases (in samples)."""
    ks = np.arange(1, n_symbols)
    out = np.empty(taus.size)
    for i, tau in enumerate(taus):
        cur = cubic_interpolate(x, 2.0 * ks + tau)
        prev = cubic_interpolate(x, 2.0 * ks - 2 + tau)
        mid = cubic_interpolate(x, 2.0 * ks - 1 + tau)
        out[i] = np.mean(np.sum((np.conj(mid) * (prev - cur)).real, axis=0))
    return out


def timing_recover(channels: np.ndarray, cfg: TimingConfig = TimingConfig()) -> tuple[np.ndarray, TimingInfo]:
    """Resample 2-sample/symbol channels so even samples fall on symbol centres.

    All channels share one clock.  The loop is pre-locked from the detector
    S-curve over the first ``acquisition_symbols`` symbols, which also gives
    the detector gain used to set the loop constants.
    """
    x = np.atleast_2d(np.asarray(channels, np.complex128))
    p = np.mean(np.abs(x) ** 2)
    if p == 0:
        raise ValueError("cannot recover timing of an all-zero signal")
    x = x / np.sqrt(p)
    n_sym = x.shape[1] // 2
    grid = np.linspace(0, 2, 32, endpoint=False)
    s = gardner_s_curve(x, grid, min(n_sym - 1, cfg.acquisition_symbols))
    slope = (np.roll(s, -1) - s) / (grid[1] - grid[0])
    # stable lock points: downward zero crossings of the S-curve
    cand = np.flatnonzero((s > 0) & (np.roll(s, -1) <= 0))
    if cand.size == 0:
        i0 = int(np.argmin(np.abs(s)))
    else:
        i0 = int(cand[np.argmax(-slope[cand])])
    frac = s[i0] / (s[i0] - s[(i0 + 1) % grid.size]) if s[i0] != s[(i0 + 1) % grid.size] else 0.0
    tau0 = grid[i0] + frac * (grid[1] - grid[0])
    kd = max(-slope[i0], 1e-6)
    theta = cfg.loop_bw / (cfg.damping + 1 / (4 * cfg.damping))
    # tau is in samples (2 per symbol); gains normalized by the detector gain
    kp = 4 * cfg.damping * theta / kd
    ki = 4 * theta**2 / kd
    taus = np.zeros(n_sym)
    errs = np.zeros(n_sym)
    out = np.zeros((x.shape[0], 2 * n_sym), np.complex128)
    taus[0] = tau0
    k = _gardner_loop(x, tau0, kp, ki, out, taus, errs)
    out = out[:, : 2 * k]
    taus, errs = taus[:k], errs[:k]
    q = max(1, k // 4)
    v0, v1 = float(np.var(errs[1: q + 1])), float(np.var(errs[-q:]))
    drift = np.max(np.abs(taus - tau0)) if k > 1 else 0.0
    info = TimingInfo(taus, v0, v1, diverged=bool(v1 > 2 * v0 and drift > 4))
    return out * np.sqrt(p), info

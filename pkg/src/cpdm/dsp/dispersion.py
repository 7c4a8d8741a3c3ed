"""Static chromatic-dispersion compensation and digital backpropagation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps

from ..channel import MANAKOV, FiberParams, FixedStep, split_step
from ..signal import ComplexWaveform, angular_frequency, apply_transfer, dbm2w, fft, ifft


def cd_response(n: int, rate: float, fiber: FiberParams, distance: float) -> np.ndarray:
    """All-pass inverse of the fiber's dispersive phase over ``distance`` km."""
    w = angular_frequency(n, rate)
    b2, b3 = fiber.beta2 * 1e-24, fiber.beta3 * 1e-36
    return np.exp(-1j * distance * (b2 / 2 * w**2 - b3 / 6 * w**3))


def min_cd_taps(fiber: FiberParams, distance: float, rate: float) -> int:
    """Odd FIR length covering the dispersive spread, ``2 pi |beta2| L fs^2``."""
    n = int(np.ceil(2 * np.pi * abs(fiber.beta2 * 1e-24) * distance * rate**2))
    return n + 1 - n % 2


def cd_fir_taps(fiber: FiberParams, distance: float, rate: float, n_taps: int) -> np.ndarray:
    """Truncated impulse response of :func:`cd_response`, centred on tap ``n_taps // 2``."""
    n_fft = 1 << int(np.ceil(np.log2(max(8 * n_taps, 1024))))
    h = ifft(cd_response(n_fft, rate, fiber, distance))
    k = n_taps // 2
    return np.concatenate([h[-k:], h[: k + 1]]) if k else h[:1]


def cd_compensate(w: ComplexWaveform, fiber: FiberParams, distance: float, mode: str = "freq",
                  n_taps: int | None = None) -> ComplexWaveform:
    """Remove the dispersion of ``distance`` km of ``fiber``.

    ``mode="freq"`` multiplies by the exact all-pass response.  ``mode="time"``
    convolves with a truncated FIR of ``n_taps`` taps (default: the analytic
    minimum) over the periodically extended waveform.
    """
    if distance < 0:
        raise ValueError("distance must be >= 0")
    if distance == 0:
        return w
    if mode == "freq":
        return w.with_samples(apply_transfer(w.samples, cd_response(len(w), w.sample_rate, fiber, distance)))
    if mode == "time":
        n_taps = n_taps or min_cd_taps(fiber, distance, w.sample_rate)
        if n_taps % 2 == 0:
            n_taps += 1
        taps = cd_fir_taps(fiber, distance, w.sample_rate, n_taps)
        k = n_taps // 2
        x = w.samples
        ext = np.concatenate([x[-k:], x, x[:k]]) if k else x
        return w.with_samples(sps.oaconvolve(ext, taps, mode="valid"))
    raise ValueError(f"unknown CD compensation mode {mode!r}")


@dataclass(frozen=True)
class DbpPlan:
    """Backpropagation through ``n_spans`` spans of ``fiber``.

    ``xi_nl`` scales the Kerr coefficient; ``launch_power_dbm`` is the total
    power at each span input, used to restore the absolute field scale.
    ``gain_db=None`` assumes loss-matched amplifiers.
    """

    fiber: FiberParams
    n_spans: int
    steps_per_span: int = 20
    xi_nl: float = 0.76
    launch_power_dbm: float = -3.0
    gain_db: float | None = None
    manakov: bool = True

    def __post_init__(self):
        if self.n_spans < 0 or self.steps_per_span < 1:
            raise ValueError("need n_spans >= 0 and steps_per_span >= 1")
        if not 0 <= self.xi_nl <= 1.5:
            raise ValueError("xi_nl must lie in [0, 1.5]")

    @property
    def span_length(self) -> float:
        return self.fiber.length

    @property
    def distance(self) -> float:
        return self.n_spans * self.fiber.length

    def segments(self) -> np.ndarray:
        """Step lengths of one span, km."""
        return np.full(self.steps_per_span, self.span_length / self.steps_per_span)


def dbp(modes: Sequence[ComplexWaveform], plan: DbpPlan, distance: float | None = None) -> list[ComplexWaveform]:
    """Symmetric split-step backpropagation of all received modes jointly.

    The field is scaled so its total power equals the launch power, then each
    span is undone from the last to the first: the amplifier gain is removed
    and the span is integrated towards -z with ``xi_nl * gamma_eff`` acting
    on the total intensity.  The original scale is restored at the end, so
    ``xi_nl = 0`` reproduces :func:`cd_compensate` over the same distance.
    """
    if distance is not None and abs(distance - plan.distance) > 1e-6:
        raise ValueError(f"DBP plan covers {plan.distance} km, link is {distance} km")
    a = np.vstack([m.samples for m in modes])
    rate = modes[0].sample_rate
    p = float(np.sum(np.mean(np.abs(a) ** 2, axis=1)))
    if p == 0:
        return list(modes)
    scale = np.sqrt(float(dbm2w(plan.launch_power_dbm)) / p)
    a = a * scale
    fiber = plan.fiber
    g_db = fiber.span_loss_db if plan.gain_db is None else plan.gain_db
    gamma = fiber.gamma * plan.xi_nl * (MANAKOV if plan.manakov and a.shape[0] > 1 else 1.0)
    step = FixedStep(plan.span_length / plan.steps_per_span, max_phase=np.inf)
    for _ in range(plan.n_spans):
        a = a * 10 ** (-g_db / 20)
        if gamma == 0:
            a = ifft(fft(a) * np.exp(-fiber.linear_exponent(a.shape[-1], rate) * plan.span_length))
        else:
            a, _ = split_step(a, rate, fiber, plan.span_length, step, gamma, direction=-1)
    a = a / scale
    return [m.with_samples(row) for m, row in zip(modes, a)]

"""CW laser, IQ modulation and the circular-polarization multiplexing optics.

The CPDM transmitter splits one laser into right and left circular
polarizations (CPBS), each circular branch into H and V (PBS), modulates the
four carriers and recombines them (PBC, then CPBC).  Two views of that network
are offered through :class:`CpdmMuxModel`:

``ideal4``
    The four tributaries are kept as four mutually orthogonal modes, carried
    as two :class:`~cpdm.signal.JonesSignal` pairs (RCP pair, LCP pair).
``physical_jones``
    The network is evaluated with 2x2 Jones matrices.  A single fiber has a
    two-dimensional polarization space, so the composite map is rank 2.
``pdm2``
    Plain polarization multiplexing with two tributaries, for reference runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal import (
    ComplexWaveform, Field, JonesSignal, TributarySet, apply_transfer, dbm2w,
    field_pairs, field_power, frequency_grid, stack_field, unstack_field,
)

H = np.array([1.0, 0.0], complex)
V = np.array([0.0, 1.0], complex)
RCP = np.array([1.0, 1.0j]) / np.sqrt(2)
LCP = np.array([1.0, -1.0j]) / np.sqrt(2)

MUX_MODES = ("ideal4", "physical_jones", "pdm2")


@dataclass(frozen=True)
class LaserParams:
    power_dbm: float = 20.0
    linewidth: float = 0.1e6
    wavelength: float = 1550e-9
    azimuth_deg: float = 45.0
    frequency_offset: float = 0.0

    def __post_init__(self):
        if self.linewidth < 0:
            raise ValueError("linewidth must be >= 0")
        if not np.isfinite(self.power_dbm):
            raise ValueError("laser power must be finite")
        if not 1.2e-6 < self.wavelength < 1.7e-6:
            raise ValueError(f"wavelength {self.wavelength} m outside (1.2, 1.7) um")

    @property
    def power_w(self) -> float:
        return float(dbm2w(self.power_dbm))

    @property
    def jones(self) -> np.ndarray:
        """Unit Jones vector of the linear output polarization."""
        az = np.deg2rad(self.azimuth_deg)
        return np.array([np.cos(az), np.sin(az)], complex)


def phase_noise(linewidth: float, n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Wiener phase walk with increment variance ``2 pi linewidth / rate``."""
    if linewidth == 0:
        return np.zeros(n)
    steps = rng.normal(0.0, np.sqrt(2 * np.pi * linewidth / rate), n)
    steps[0] = 0.0
    return np.cumsum(steps)


def laser(params: LaserParams, n: int, rate: float, seed: int | None = 0) -> ComplexWaveform:
    """CW field of constant amplitude ``sqrt(P)`` with Wiener phase noise."""
    if n <= 0:
        raise ValueError("n must be positive")
    phi = phase_noise(params.linewidth, n, rate, np.random.default_rng(seed))
    if params.frequency_offset:
        phi = phi + 2 * np.pi * params.frequency_offset * np.arange(n) / rate
    return ComplexWaveform(np.sqrt(params.power_w) * np.exp(1j * phi), rate)


@dataclass(frozen=True)
class IqModulatorParams:
    """I/Q impairments; the all-zero default is an ideal modulator.

    ``gain_imbalance_db`` is the I-to-Q power ratio in dB and the DC offsets
    are fractions of the RMS baseband amplitude.
    """

    gain_imbalance_db: float = 0.0
    phase_error: float = 0.0
    dc_offset_i: float = 0.0
    dc_offset_q: float = 0.0

    def __post_init__(self):
        vals = (self.gain_imbalance_db, self.phase_error, self.dc_offset_i, self.dc_offset_q)
        if not np.all(np.isfinite(vals)):
            raise ValueError("impairments must be finite")

    @property
    def ideal(self) -> bool:
        return not any((self.gain_imbalance_db, self.phase_error, self.dc_offset_i, self.dc_offset_q))


def apply_iq_impairments(x: np.ndarray, imp: IqModulatorParams) -> np.ndarray:
    """``g_I I + j g_Q (Q cos(phi) + I sin(phi))`` plus DC offsets."""
    if imp.ideal:
        return x
    gi = 10 ** (imp.gain_imbalance_db / 40)
    gq = 10 ** (-imp.gain_imbalance_db / 40)
    i, q = x.real, x.imag
    rms = np.sqrt(np.mean(np.abs(x) ** 2))
    out_i = gi * i + imp.dc_offset_i * rms
    out_q = gq * (q * np.cos(imp.phase_error) + i * np.sin(imp.phase_error)) + imp.dc_offset_q * rms
    return out_i + 1j * out_q


def rrc_response(n: int, sps: int, rolloff: float) -> np.ndarray:
    """Root-raised-cosine frequency response on an ``n``-point FFT grid (symbol rate 1)."""
    f = np.abs(frequency_grid(n, sps))
    lo, hi = (1 - rolloff) / 2, (1 + rolloff) / 2
    h = np.zeros(n)
    h[f <= lo] = 1.0
    band = (f > lo) & (f < hi)
    h[band] = np.sqrt(0.5 * (1 + np.cos(np.pi / rolloff * (f[band] - lo))))
    return h


def pulse_shape(symbols: np.ndarray, sps: int, pulse: str = "nrz", rolloff: float = 0.2) -> np.ndarray:
    """Upsample symbols to ``sps`` samples each with NRZ or RRC pulses.

    RRC shaping is applied circularly in the frequency domain so that the
    waveform stays periodic, like every other FFT-based stage.
    """
    if pulse == "nrz":
        return np.repeat(symbols, sps)
    if pulse == "rrc":
        up = np.zeros(symbols.size * sps, complex)
        up[::sps] = symbols * sps
        return apply_transfer(up, rrc_response(up.size, sps, rolloff))
    raise ValueError(f"unknown pulse shape {pulse!r}")


def iq_modulate(carrier: ComplexWaveform, symbols: ComplexWaveform, sps: int,
                pulse: str = "nrz", imp: IqModulatorParams | None = None,
                rolloff: float = 0.2) -> ComplexWaveform:
    """Imprint shaped symbols on an optical carrier."""
    if len(carrier) != len(symbols) * sps:
        raise ValueError(f"carrier length {len(carrier)} != {len(symbols)} symbols x {sps} sps")
    base = pulse_shape(symbols.samples, sps, pulse, rolloff)
    base = apply_iq_impairments(base, imp or IqModulatorParams())
    return carrier.with_samples(carrier.samples * base)


# --- Jones calculus -------------------------------------------------------------

def rotator(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s], [-s, c]], complex)


def quarter_waveplate(theta: float) -> np.ndarray:
    """Quarter-wave retarder with its fast axis at ``theta`` from H."""
    return rotator(-theta) @ np.diag([1.0, 1.0j]) @ rotator(theta)


def cpbs_projectors(angle: float = np.pi / 4) -> tuple[np.ndarray, np.ndarray]:
    """Circular beam splitter built from a quarter waveplate and a PBS.

    The waveplate maps RCP onto H and LCP onto V, the PBS selects one, and
    the reverse waveplate restores the circular state.  At 45 degrees the two
    returned matrices are the RCP and LCP projectors.
    """
    q = quarter_waveplate(angle)
    qh = q.conj().T
    return qh @ np.diag([1.0, 0.0]) @ q, qh @ np.diag([0.0, 1.0]) @ q


@dataclass(frozen=True)
class CpdmMuxModel:
    mode: str = "ideal4"
    waveplate_angle: float = np.pi / 4
    tx_map: np.ndarray = field(init=False, repr=False, compare=False)
    rx_map: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in MUX_MODES:
            raise ValueError(f"mode must be one of {MUX_MODES}")
        pr, pl = cpbs_projectors(self.waveplate_angle)
        # column k: Jones image of tributary k through PBC then CPBC
        tx = np.column_stack([pr @ H, pr @ V, pl @ H, pl @ V])
        # row k: CPBS branch then PBS port of the receiver
        rx = np.vstack([H @ pr, V @ pr, H @ pl, V @ pl])
        object.__setattr__(self, "tx_map", tx)
        object.__setattr__(self, "rx_map", rx)

    @property
    def n_tributaries(self) -> int:
        return 2 if self.mode == "pdm2" else 4

    def composite(self) -> np.ndarray:
        """4x4 tributary-to-branch map of the physical network."""
        return self.rx_map @ self.tx_map

    def carrier_weights(self, laser_jones: np.ndarray) -> np.ndarray:
        """Complex amplitude of each IQ-mixer carrier relative to the laser field."""
        if self.mode == "ideal4":
            return np.full(4, 0.5, complex)
        if self.mode == "pdm2":
            return laser_jones.astype(complex)
        pr, pl = cpbs_projectors(self.waveplate_angle)
        a, b = pr @ laser_jones, pl @ laser_jones
        return np.array([a[0], a[1], b[0], b[1]])


def cpdm_mux(tribs: TributarySet | tuple[ComplexWaveform, ...], model: CpdmMuxModel) -> Field:
    """Combine modulated tributaries into the launched field.

    Returns one :class:`JonesSignal` in ``physical_jones`` and ``pdm2`` modes
    and an (RCP pair, LCP pair) tuple in ``ideal4`` mode.
    """
    ws = list(tribs)
    if len({len(w) for w in ws}) != 1:
        raise ValueError("tributaries must have equal length")
    rate = ws[0].sample_rate
    a = np.vstack([w.samples for w in ws])
    if model.mode == "pdm2":
        if len(ws) != 2:
            raise ValueError("pdm2 mode takes two tributaries")
        return JonesSignal.from_array(a, rate)
    if len(ws) != 4:
        raise ValueError(f"{model.mode} mode takes four tributaries")
    if model.mode == "ideal4":
        return (JonesSignal.from_array(a[:2], rate), JonesSignal.from_array(a[2:], rate))
    return JonesSignal.from_array(model.tx_map @ a, rate)


def cpdm_demux(sig: Field, model: CpdmMuxModel) -> np.ndarray:
    """Optical fields at the receiver's branch ports, shape ``(n_branches, N)``."""
    a = stack_field(sig)
    if model.mode == "physical_jones":
        return model.rx_map @ a
    return a


def scale_power(sig: Field, db: float) -> Field:
    g = 10 ** (db / 20)
    return unstack_field(sig, stack_field(sig) * g)


def set_launch_power(sig: Field, p_dbm: float) -> Field:
    """Scale a field so that its total average power over all modes is ``p_dbm``."""
    p = field_power(sig)
    if p <= 0:
        raise ValueError("cannot set the launch power of a zero-power signal")
    g = np.sqrt(float(dbm2w(p_dbm)) / p)
    pairs = field_pairs(sig)
    a = stack_field(sig) * g
    psd = [None if q.ase_psd is None else q.ase_psd * g**2 for q in pairs]
    out = tuple(q.with_array(a[2 * i: 2 * i + 2], ase_psd=psd[i]) for i, q in enumerate(pairs))
    return out[0] if isinstance(sig, JonesSignal) else out


def cpdm_transmit(symbols: list[ComplexWaveform], sps: int, model: CpdmMuxModel,
                  laser_params: LaserParams = LaserParams(), pulse: str = "nrz",
                  imp: IqModulatorParams | None = None, seed: int | None = 0,
                  rolloff: float = 0.2) -> Field:
    """Laser, carrier split, IQ modulation and multiplexing in one call.

    ``symbols`` holds one 1-sample-per-symbol stream per tributary.
    """
    if len(symbols) != model.n_tributaries:
        raise ValueError(f"{model.mode} expects {model.n_tributaries} symbol streams")
    n = len(symbols[0]) * sps
    rate = symbols[0].sample_rate * sps
    cw = laser(laser_params, n, rate, seed)
    weights = model.carrier_weights(laser_params.jones)
    tribs = [iq_modulate(cw.with_samples(cw.samples * w), s, sps, pulse, imp, rolloff)
             for w, s in zip(weights, symbols)]
    return cpdm_mux(tribs, model)

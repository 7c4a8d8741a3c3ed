"""End-to-end link: transmitter, loop, receiver, DSP and error counting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import (
    AdaptiveStep, AmplifierParams, FiberParams, LinkPlan, ase_load, bookkept_osnr, run_link,
)
from .dsp.chain import SYMBOL_RATE, ChainOutput, DspConfig, run_chain
from .frontend import AdcParams, PhotodiodeParams, adc_frontend, coherent_detect
from .metrics import BerResult, OsnrSearch, ber_from_symbols, osnr_required
from .signal import BitStream, Field, generate_bits, map_8qam
from .transmitter import CpdmMuxModel, IqModulatorParams, LaserParams, cpdm_transmit, set_launch_power

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SystemConfig:
    """Every knob of one simulated link; defaults follow the 10 x 80 km loop.

    ``sps`` is the propagation oversampling per tributary symbol.
    """

    n_symbols: int = 2**16
    sps: int = 16
    mode: str = "ideal4"
    bit_generator: str = "uniform"
    pulse: str = "nrz"
    rolloff: float = 0.2
    launch_power_dbm: float = -3.0
    tx_laser: LaserParams = LaserParams()
    lo_laser: LaserParams = LaserParams()
    tx_imp: IqModulatorParams = IqModulatorParams()
    rx_hybrid: IqModulatorParams | None = None
    fiber: FiberParams = FiberParams()
    link: LinkPlan = LinkPlan(step=AdaptiveStep())
    amp: AmplifierParams = AmplifierParams()
    pd: PhotodiodeParams = PhotodiodeParams()
    tia_gain_db: float = 20.0
    receiver_noise: bool = True
    adc: AdcParams = AdcParams()
    dsp: DspConfig = DspConfig()
    seed: int = 0

    def __post_init__(self):
        if self.n_symbols < 4096:
            raise ValueError("n_symbols must be >= 4096")
        if self.n_symbols & (self.n_symbols - 1):
            raise ValueError("n_symbols must be a power of two")
        if abs(self.fiber.length - self.link.span_length) > 1e-9:
            raise ValueError(f"fiber length {self.fiber.length} km != span length {self.link.span_length} km")

    @property
    def mux(self) -> CpdmMuxModel:
        return CpdmMuxModel(self.mode)

    @property
    def sample_rate(self) -> float:
        return self.sps * SYMBOL_RATE

    def with_distance(self, n_spans: int) -> "SystemConfig":
        return replace(self, link=replace(self.link, n_spans=n_spans))

    def with_span(self, span_km: float, n_spans: int, gain_db: float | None = None) -> "SystemConfig":
        fiber = replace(self.fiber, length=span_km)
        g = fiber.span_loss_db if gain_db is None else gain_db
        return replace(self, fiber=fiber, link=replace(self.link, span_length=span_km, n_spans=n_spans),
                       amp=replace(self.amp, gain_db=g))


def _seeds(seed: int) -> dict[str, int]:
    names = ("bits", "tx_laser", "link", "ase", "rx")
    kids = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(k.generate_state(1, np.uint64)[0]) for n, k in zip(names, kids)}


@dataclass(frozen=True, eq=False)
class Transmitted:
    bits: tuple[BitStream, ...]
    symbols: np.ndarray  # (tributaries, n_symbols) at 1 sample/symbol
    field: Field


def transmit(cfg: SystemConfig) -> Transmitted:
    s = _seeds(cfg.seed)
    n_trib = cfg.mux.n_tributaries
    bit_seeds = np.random.SeedSequence(s["bits"]).generate_state(n_trib)
    bits = tuple(generate_bits(3 * cfg.n_symbols, int(k), cfg.bit_generator) for k in bit_seeds)
    syms = [map_8qam(b, symbol_rate=SYMBOL_RATE) for b in bits]
    sig = cpdm_transmit(syms, cfg.sps, cfg.mux, cfg.tx_laser, cfg.pulse, cfg.tx_imp,
                        seed=s["tx_laser"], rolloff=cfg.rolloff)
    sig = set_launch_power(sig, cfg.launch_power_dbm)
    return Transmitted(bits, np.vstack([w.samples for w in syms]), sig)


def propagate(cfg: SystemConfig, sig: Field, tap_dir: str | Path | None = None) -> Field:
    return run_link(sig, cfg.link, cfg.fiber, cfg.amp, seed=_seeds(cfg.seed)["link"], tap_dir=tap_dir)


def receive(cfg: SystemConfig, sig: Field, osnr_db: float | None = None,
            tap_dir: str | Path | None = None) -> ChainOutput:
    """Optional receiver-side ASE loading, coherent detection, ADC and DSP."""
    s = _seeds(cfg.seed)
    if osnr_db is not None:
        sig = ase_load(sig, osnr_db, seed=s["ase"])
    front = coherent_detect(sig, cfg.lo_laser, cfg.pd, cfg.tia_gain_db, cfg.mux, seed=s["rx"],
                            noise=cfg.receiver_noise, hybrid=cfg.rx_hybrid)
    front = adc_frontend(front, cfg.adc, seed=s["rx"])
    dsp = cfg.dsp
    if dsp.qi.enable is None:
        # an ideal hybrid leaves nothing for Gram-Schmidt to fix but its estimation bias
        dsp = replace(dsp, qi=replace(dsp.qi, enable=cfg.rx_hybrid is not None))
    return run_chain(front, dsp, cfg.link, cfg.fiber, tap_dir=tap_dir)


def dbp_at_launch(cfg: SystemConfig) -> SystemConfig:
    """Point the DBP stage at the configured launch power."""
    return replace(cfg, dsp=replace(cfg.dsp, dbp=replace(cfg.dsp.dbp, launch_power_dbm=cfg.launch_power_dbm)))


@dataclass
class RunResult:
    ber: BerResult
    per_tributary: list[BerResult]
    chain: ChainOutput
    osnr_db: float
    tx: Transmitted = field(repr=False)

    @property
    def aligned_symbols(self) -> tuple[np.ndarray, np.ndarray]:
        """Received and transmitted symbols after ambiguity resolution."""
        from .metrics import synchronize

        rx = self.chain.as_array()
        syncs = synchronize(rx, self.tx.symbols)
        r = np.vstack([s.apply(row) for s, row in zip(syncs, rx)])
        t = np.vstack([self.tx.symbols[s.source] for s in syncs])
        return r, t


def evaluate(cfg: SystemConfig, tx: Transmitted, rx_field: Field, osnr_db: float | None = None,
             tap_dir: str | Path | None = None) -> RunResult:
    out = receive(cfg, rx_field, osnr_db, tap_dir)
    total, per, _ = ber_from_symbols(out.as_array(), tx.symbols)
    loaded = bookkept_osnr(rx_field) if osnr_db is None else osnr_db
    return RunResult(total, per, out, float(loaded), tx)


def simulate(cfg: SystemConfig, osnr_db: float | None = None, tap_dir: str | Path | None = None) -> RunResult:
    cfg = dbp_at_launch(cfg)
    tx = transmit(cfg)
    return evaluate(cfg, tx, propagate(cfg, tx.field, tap_dir), osnr_db, tap_dir)


def noiseless_link(cfg: SystemConfig) -> SystemConfig:
    return replace(cfg, amp=replace(cfg.amp, noise=False))


def required_osnr(cfg: SystemConfig, target_ber: float = 1e-4, lo: float = 8.0, hi: float = 30.0,
                  tol: float = 0.1, rx_field: tuple[Transmitted, Field] | None = None) -> OsnrSearch:
    """Required OSNR with in-line amplifiers noiseless and all ASE loaded at the receiver.

    The link is propagated once; every evaluation reuses the same ASE seed.
    ``rx_field`` supplies an already propagated ``(tx, field)`` pair.
    """
    cfg = dbp_at_launch(noiseless_link(cfg))
    if rx_field is None:
        tx = transmit(cfg)
        sig = propagate(cfg, tx.field)
    else:
        tx, sig = rx_field

    def ber_at(osnr: float) -> float:
        return evaluate(cfg, tx, sig, osnr).ber.ber

    return osnr_required(ber_at, target_ber, lo, hi, tol)


__all__ = [
    "RunResult", "SystemConfig", "Transmitted", "dbp_at_launch", "evaluate", "noiseless_link",
    "propagate", "receive", "required_osnr", "simulate", "transmit",
]

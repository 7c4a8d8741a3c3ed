"""The eight-stage receiver DSP chain."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..channel import FiberParams, LinkPlan
from ..frontend import TRIBUTARY_BIT_RATE, FrontendOutput
from ..signal import (
    BITS_PER_SYMBOL, ComplexWaveform, TributarySet, dump_waveform,
    nearest_points, resample,
)
from .carrier import BpsConfig, FoeConfig, cpe_bps, foe
from .dispersion import DbpPlan, cd_compensate, dbp
from .equalizer import EqConfig, adaptive_equalize
from .filters import bessel_filter, dc_block, qi_compensate
from .timing import TimingConfig, timing_recover

log = logging.getLogger(__name__)

SYMBOL_RATE = TRIBUTARY_BIT_RATE / BITS_PER_SYMBOL

STAGES = ("bessel", "resample", "qi", "cdc", "nlc", "timing", "equalizer", "carrier")


@dataclass(frozen=True)
class BesselConfig:
    enable: bool = True
    order: int = 4
    bw_3db: float = 28e9
    # the bandwidth is clamped to this fraction of Nyquist at low ADC rates
    max_nyquist_fraction: float = 0.95


@dataclass(frozen=True)
class ResampleConfig:
    sps: int = 2
    method: str = "cubic"

    def __post_init__(self):
        if self.sps != 2:
            raise ValueError("the timing and equalizer stages need sps = 2")


@dataclass(frozen=True)
class QiConfig:
    # None: run only when the link has dispersed the signal; Gram-Schmidt
    # assumes a proper signal, which rectangular 8-QAM is not back to back.
    # system.receive resolves None from whether a hybrid imbalance is modelled.
    enable: bool | None = None


@dataclass(frozen=True)
class CdcConfig:
    enable: bool = True
    mode: str = "freq"
    n_taps: int | None = None
    distance: float | None = None  # km; defaults to the link length


@dataclass(frozen=True)
class DbpConfig:
    enable: bool = False
    steps_per_span: int = 20
    xi_nl: float = 0.76
    launch_power_dbm: float = -3.0

    def __post_init__(self):
        if not 0 <= self.xi_nl <= 1.5:
            raise ValueError("xi_nl must lie in [0, 1.5]")
        if self.steps_per_span < 1:
            raise ValueError("steps_per_span must be >= 1")


@dataclass(frozen=True)
class DspConfig:
    bessel: BesselConfig = BesselConfig()
    resample: ResampleConfig = ResampleConfig()
    qi: QiConfig = QiConfig()
    cdc: CdcConfig = CdcConfig()
    dbp: DbpConfig = DbpConfig()
    timing: TimingConfig = TimingConfig()
    eq: EqConfig = EqConfig()
    foe: FoeConfig = FoeConfig()
    cpe: BpsConfig = BpsConfig()

    @classmethod
    def from_dict(cls, d: dict) -> "DspConfig":
        types = {f: type(getattr(cls(), f)) for f in cls.__dataclass_fields__}
        unknown = set(d) - set(types)
        if unknown:
            raise ValueError(f"unknown DSP sections: {sorted(unknown)}")
        return cls(**{k: types[k](**v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StageEntry:
    stage: str
    enabled: bool
    metrics: dict = field(default_factory=dict)


@dataclass
class StageReport:
    entries: list[StageEntry] = field(default_factory=list)

    def add(self, stage: str, enabled: bool, **metrics) -> None:
        clean = {k: (float(v) if isinstance(v, (np.floating, np.integer)) else v) for k, v in metrics.items()}
        self.entries.append(StageEntry(stage, enabled, clean))

    def __getitem__(self, stage: str) -> StageEntry:
        for e in self.entries:
            if e.stage == stage:
                return e
        raise KeyError(stage)

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps([asdict(e) for e in self.entries], indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


@dataclass(frozen=True, eq=False)
class ChainOutput:
    symbols: tuple[ComplexWaveform, ...]
    report: StageReport

    @property
    def tributaries(self) -> TributarySet:
        if len(self.symbols) != 4:
            raise ValueError("only four-tributary outputs form a TributarySet")
        return TributarySet(*self.symbols)

    def as_array(self) -> np.ndarray:
        return np.vstack([s.samples for s in self.symbols])


def decision_evm_db(symbols: np.ndarray) -> float:
    """Decision-directed EVM of unit-power-normalized symbols, dB."""
    s = np.asarray(symbols).ravel()
    s = s / np.sqrt(np.mean(np.abs(s) ** 2))
    ref = nearest_points(s)
    return float(10 * np.log10(np.mean(np.abs(s - ref) ** 2) / np.mean(np.abs(ref) ** 2)))


def _tap(tap_dir: Path | None, k: int, name: str, ws) -> None:
    if tap_dir is None:
        return
    tap_dir.mkdir(parents=True, exist_ok=True)
    for i, w in enumerate(ws):
        dump_waveform(w, tap_dir / f"stage{k}_{name}_ch{i}.bin")


def _groups(mode: str, n: int) -> list[list[int]]:
    if mode == "ideal4" and n == 4:
        return [[0, 1], [2, 3]]
    return [list(range(n))]


def run_chain(front: FrontendOutput, cfg: DspConfig, link: LinkPlan, fiber: FiberParams,
              tap_dir: str | Path | None = None, symbol_rate: float = SYMBOL_RATE) -> ChainOutput:
    """DC block and joint normalization, then stages i to viii.

    When DBP is enabled it replaces static CD compensation.  Returns one
    1-sample/symbol stream per receiver output and the per-stage report.
    """
    tap = Path(tap_dir) if tap_dir is not None else None
    rep = StageReport()
    ws = [dc_block(b) for b in front.branches]
    p = float(np.mean([w.power for w in ws]))
    if p <= 0:
        raise ValueError("received branches carry no power")
    ws = [w.with_samples(w.samples / np.sqrt(p)) for w in ws]

    # (i) Bessel filter
    bw = cfg.bessel.bw_3db
    nyq = ws[0].sample_rate / 2
    if bw >= cfg.bessel.max_nyquist_fraction * nyq:
        bw = cfg.bessel.max_nyquist_fraction * nyq
        log.info("Bessel bandwidth clamped to %.3g Hz at %.3g Sa/s", bw, 2 * nyq)
    if cfg.bessel.enable:
        ws = [bessel_filter(w, cfg.bessel.order, bw) for w in ws]
    rep.add("bessel", cfg.bessel.enable, bw_3db=bw, order=cfg.bessel.order)
    _tap(tap, 1, "bessel", ws)

    # (ii) resampling to 2 samples/symbol
    rate2 = cfg.resample.sps * symbol_rate
    ws = [resample(w, rate2, cfg.resample.method) for w in ws]
    rep.add("resample", True, sample_rate=rate2, method=cfg.resample.method)
    _tap(tap, 2, "resample", ws)

    # (iii) IQ imbalance
    qi_on = link.distance > 0 if cfg.qi.enable is None else cfg.qi.enable
    if qi_on:
        ws = [qi_compensate(w) for w in ws]
    rep.add("qi", qi_on)
    _tap(tap, 3, "qi", ws)

    # (iv) CD compensation and (v) nonlinearity compensation
    distance = link.distance if cfg.cdc.distance is None else cfg.cdc.distance
    use_dbp = cfg.dbp.enable and link.n_spans > 0
    if use_dbp:
        rep.add("cdc", False, subsumed_by="dbp")
        plan = DbpPlan(fiber, link.n_spans, cfg.dbp.steps_per_span, cfg.dbp.xi_nl, cfg.dbp.launch_power_dbm)
        ws = dbp(ws, plan, distance=distance)
        rep.add("nlc", True, xi_nl=cfg.dbp.xi_nl, steps_per_span=cfg.dbp.steps_per_span,
                launch_power_dbm=cfg.dbp.launch_power_dbm)
        _tap(tap, 5, "nlc", ws)
    else:
        if cfg.cdc.enable:
            ws = [cd_compensate(w, fiber, distance, cfg.cdc.mode, cfg.cdc.n_taps) for w in ws]
        rep.add("cdc", cfg.cdc.enable, distance_km=distance, mode=cfg.cdc.mode)
        _tap(tap, 4, "cdc", ws)
        rep.add("nlc", False)

    # (vi) timing recovery, one clock for all branches
    x = np.vstack([w.samples for w in ws])
    if cfg.timing.enable:
        x, tinfo = timing_recover(x, cfg.timing)
        rep.add("timing", True, offset_ui=tinfo.final_offset_ui, diverged=tinfo.diverged,
                error_var_start=tinfo.error_var_start, error_var_end=tinfo.error_var_end)
        if tinfo.diverged:
            log.warning("timing loop diverged")
    else:
        rep.add("timing", False)
    _tap(tap, 6, "timing", [ComplexWaveform(r, rate2) for r in x])

    # (vii) adaptive equalizer
    n_sym = x.shape[1] // 2
    y = np.zeros((x.shape[0], n_sym), np.complex128)
    errs, singular = [], False
    for g in _groups(front.mode, x.shape[0]):
        out, st = adaptive_equalize(x[g, : 2 * n_sym], cfg.eq)
        y[g] = out
        errs.append(st.converged_error)
        singular |= st.singular
    rep.add("equalizer", True, converged_error=float(np.mean(errs)), singular=singular,
            n_taps=cfg.eq.n_taps)
    _tap(tap, 7, "equalizer", [ComplexWaveform(r, symbol_rate) for r in y])

    # (viii) frequency offset and carrier phase
    metrics = {}
    if cfg.foe.enable:
        y, fres = foe(y, symbol_rate, cfg.foe)
        metrics.update(foe_hz=fres.offset, foe_reliable=fres.reliable)
    if cfg.cpe.enable:
        y, bres = cpe_bps(y, cfg.cpe)
        metrics.update(bps_mean_step=float(np.mean([r.mean_step for r in bres])),
                       cycle_slips=int(sum(r.n_unwraps for r in bres)))
    metrics["evm_db"] = decision_evm_db(y)
    rep.add("carrier", cfg.foe.enable or cfg.cpe.enable, **metrics)
    syms = tuple(ComplexWaveform(r, symbol_rate) for r in y)
    _tap(tap, 8, "carrier", syms)
    if tap is not None:
        (tap / "stage_report.json").write_text(rep.to_json())
    return ChainOutput(syms, rep)


__all__ = [
    "BesselConfig", "CdcConfig", "ChainOutput", "DbpConfig", "DspConfig", "QiConfig",
    "ResampleConfig", "STAGES", "SYMBOL_RATE", "StageEntry", "StageReport",
    "decision_evm_db", "run_chain",
]

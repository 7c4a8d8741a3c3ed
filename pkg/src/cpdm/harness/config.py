"""Configuration files: YAML key-value trees resolved onto :class:`SystemConfig`.

Schema (every key optional; units are part of the key name)::

    seed: 0
    mode: ideal4                 # ideal4 | physical_jones | pdm2
    n_symbols: 65536             # per tributary, power of two
    sps: 16                      # propagation samples per symbol
    bit_generator: uniform       # uniform | PRBS15 | PRBS23
    pulse: nrz                   # nrz | rrc
    rolloff: 0.2
    launch_power_dbm: -3
    laser: {power_dbm, linewidth_hz, wavelength_nm, azimuth_deg}
    lo: {power_dbm, linewidth_hz, frequency_offset_hz}
    fiber: {alpha_db_km, dispersion_ps_nm_km, slope_ps_nm2_km, n2_m2_w, a_eff_um2}
    link: {span_km, n_spans, distance_km, obpf_bandwidth_ghz, obpf_shape,
           obpf_per_span, rotate_polarization,
           step: {type: adaptive, max_phase_rad} | {type: fixed, dz_km, max_phase_rad}}
    edfa: {gain_db: auto | number, noise_figure_db, n_sp, noise}
    receiver: {responsivity_a_w, dark_current_na, temperature_k, load_ohm,
               thermal_bandwidth_ghz, tia_gain_db, noise}
    adc: {samples_per_bit, bits}
    dsp: {bessel: {enable, order, bw_3db_ghz}, qi: {enable}, cdc: {enable, mode, n_taps},
          dbp: {enable, steps_per_span, xi_nl}, timing: {enable, loop_bw},
          eq: {n_taps, mu_cma, mu_rde, stage1_len, passes},
          foe: {enable, search_range_ghz}, cpe: {enable, b_test_phases, window, symmetry_order}}
    metrics: {target_ber, osnr_lo_db, osnr_hi_db, osnr_tol_db}
    experiment: {scenario, kind, axes: {name: [values] | {start, stop, step}}, paired, output_dir}

A run manifest is also accepted as a config file; its ``config`` tree is used.

Environment variables ``CPDM_<PATH>`` override file values, with ``__``
separating path levels (``CPDM_LINK__N_SPANS=5``).
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..channel import AdaptiveStep, AmplifierParams, FiberParams, FixedStep, LinkPlan
from ..dsp.carrier import BpsConfig, FoeConfig
from ..dsp.chain import BesselConfig, CdcConfig, DbpConfig, DspConfig, QiConfig
from ..dsp.equalizer import EqConfig
from ..dsp.timing import TimingConfig
from ..frontend import AdcParams, PhotodiodeParams
from ..signal import dbm2w
from ..system import SystemConfig
from ..transmitter import MUX_MODES, LaserParams

ENV_PREFIX = "CPDM_"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "mode": "ideal4",
    "n_symbols": 2**16,
    "sps": 16,
    "bit_generator": "uniform",
    "pulse": "nrz",
    "rolloff": 0.2,
    "launch_power_dbm": -3.0,
    "laser": {"power_dbm": 20.0, "linewidth_hz": 0.1e6, "wavelength_nm": 1550.0, "azimuth_deg": 45.0},
    "lo": {"power_dbm": 20.0, "linewidth_hz": 0.1e6, "frequency_offset_hz": 0.0},
    "fiber": {"alpha_db_km": 0.2, "dispersion_ps_nm_km": 16.75, "slope_ps_nm2_km": 0.075,
              "n2_m2_w": 26e-21, "a_eff_um2": 80.0},
    "link": {"span_km": 80.0, "n_spans": 10, "distance_km": None, "obpf_bandwidth_ghz": 100.0,
             "obpf_shape": "rect", "obpf_per_span": False, "rotate_polarization": True,
             "step": {"type": "adaptive", "max_phase_rad": 3e-3}},
    "edfa": {"gain_db": "auto", "noise_figure_db": 4.0, "n_sp": None, "noise": True},
    "receiver": {"responsivity_a_w": 0.95, "dark_current_na": 10.0, "temperature_k": 298.0,
                 "load_ohm": 50.0, "thermal_bandwidth_ghz": 10.0, "tia_gain_db": 20.0, "noise": True},
    "adc": {"samples_per_bit": 4.0, "bits": None},
    "dsp": {
        "bessel": {"enable": True, "order": 4, "bw_3db_ghz": 28.0},
        "qi": {"enable": None},
        "cdc": {"enable": True, "mode": "freq", "n_taps": None},
        "dbp": {"enable": False, "steps_per_span": 20, "xi_nl": 0.76},
        "timing": {"enable": True, "loop_bw": 2e-3},
        "eq": {"n_taps": 15, "mu_cma": 1e-3, "mu_rde": 5e-4, "stage1_len": 20000, "passes": 2},
        "foe": {"enable": True, "search_range_ghz": 2.0},
        "cpe": {"enable": True, "b_test_phases": 32, "window": 32, "symmetry_order": 2},
    },
    "metrics": {"target_ber": 1e-4, "osnr_lo_db": 8.0, "osnr_hi_db": 30.0, "osnr_tol_db": 0.1},
    "experiment": {"scenario": "custom", "kind": "ber", "axes": {}, "paired": [], "output_dir": "results"},
}

# Presets for the two undefined dimensionless entries of the design table.
XI_NL_PRESETS = {"nonlinear_compensation": 0.76, "nonlinear_ratio": 0.48}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}" if path else str(k)
        if k not in base:
            raise ConfigError(f"{p}: unknown key")
        if isinstance(base[k], dict) and k != "axes":
            if not isinstance(v, dict):
                raise ConfigError(f"{p}: expected a mapping, got {type(v).__name__}")
            out[k] = _merge(base[k], v, p)
        else:
            out[k] = v
    return out


def env_overrides(environ: dict[str, str] | None = None) -> dict:
    """Nested override tree from ``CPDM_*`` variables; values are parsed as YAML scalars."""
    env = os.environ if environ is None else environ
    tree: dict = {}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return tree


def load_tree(path: str | Path | None, environ: dict[str, str] | None = None,
              overrides: dict | None = None, preset: dict | None = None) -> dict:
    """Defaults, then ``preset``, then the file, then environment, then ``overrides``."""
    tree = copy.deepcopy(DEFAULTS)
    if preset:
        tree = _merge(tree, preset)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from e
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        if "manifest_version" in data:
            data = data["config"]
        tree = _merge(tree, data)
    tree = _merge(tree, env_overrides(environ))
    if overrides:
        tree = _merge(tree, overrides)
    return tree


def _num(tree: dict, path: str, lo: float | None = None, hi: float | None = None,
         allow_none: bool = False, integer: bool = False):
    node: Any = tree
    for k in path.split("."):
        node = node[k]
    if node is None and allow_none:
        return None
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {node!r}")
    if integer and int(node) != node:
        raise ConfigError(f"{path}: expected an integer, got {node!r}")
    if lo is not None and node < lo:
        raise ConfigError(f"{path}: {node} is below the minimum {lo}")
    if hi is not None and node > hi:
        raise ConfigError(f"{path}: {node} is above the maximum {hi}")
    return int(node) if integer else float(node)


def _flag(tree: dict, path: str, allow_none: bool = False):
    node: Any = tree
    for k in path.split("."):
        node = node[k]
    if node is None and allow_none:
        return None
    if not isinstance(node, bool):
        raise ConfigError(f"{path}: expected true or false, got {node!r}")
    return node


def _choice(tree: dict, path: str, options) -> str:
    node: Any = tree
    for k in path.split("."):
        node = node[k]
    if node not in options:
        raise ConfigError(f"{path}: {node!r} is not one of {sorted(options)}")
    return node


@dataclass(frozen=True)
class ResolvedConfig:
    """A validated tree and the objects built from it."""

    tree: dict
    system: SystemConfig
    target_ber: float
    osnr_search: tuple[float, float, float]
    normalized: dict = field(default_factory=dict)


def resolve(tree: dict) -> ResolvedConfig:
    """Check a merged tree and build the system configuration."""
    t = tree
    mode = _choice(t, "mode", MUX_MODES)
    n_sym = _num(t, "n_symbols", 4096, integer=True)
    if n_sym & (n_sym - 1):
        raise ConfigError(f"n_symbols: {n_sym} is not a power of two")
    sps = _num(t, "sps", 4, integer=True)
    gen = _choice(t, "bit_generator", {"uniform", "PRBS15", "PRBS23"})
    pulse = _choice(t, "pulse", {"nrz", "rrc"})

    laser = LaserParams(power_dbm=_num(t, "laser.power_dbm"), linewidth=_num(t, "laser.linewidth_hz", 0),
                        wavelength=_num(t, "laser.wavelength_nm", 1200, 1700) * 1e-9,
                        azimuth_deg=_num(t, "laser.azimuth_deg"))
    lo = LaserParams(power_dbm=_num(t, "lo.power_dbm"), linewidth=_num(t, "lo.linewidth_hz", 0),
                     wavelength=laser.wavelength, frequency_offset=_num(t, "lo.frequency_offset_hz"))
    span = _num(t, "link.span_km", 1e-3)
    n_spans = _num(t, "link.n_spans", 0, integer=True)
    dist = _num(t, "link.distance_km", 0, allow_none=True)
    if dist is not None and abs(dist - span * n_spans) > 1e-6:
        raise ConfigError(f"link.distance_km: {dist} km contradicts link.span_km x link.n_spans "
                          f"= {span} x {n_spans} = {span * n_spans} km")
    fiber = FiberParams(alpha=_num(t, "fiber.alpha_db_km", 0), dispersion=_num(t, "fiber.dispersion_ps_nm_km"),
                        slope=_num(t, "fiber.slope_ps_nm2_km"), n2=_num(t, "fiber.n2_m2_w", 0),
                        a_eff=_num(t, "fiber.a_eff_um2", 1e-3) * 1e-12, length=span,
                        wavelength=laser.wavelength)
    st = t["link"]["step"]
    if not isinstance(st, dict):
        raise ConfigError("link.step: expected a mapping")
    kind = st.get("type", "adaptive")
    if kind == "adaptive":
        step = AdaptiveStep(_num(t, "link.step.max_phase_rad", 1e-6))
    elif kind == "fixed":
        if "dz_km" not in st:
            raise ConfigError("link.step.dz_km: required for fixed steps")
        mp = st.get("max_phase_rad", FixedStep().max_phase)
        step = FixedStep(_num(t, "link.step.dz_km", 1e-6), float(mp))
    else:
        raise ConfigError(f"link.step.type: {kind!r} is not one of ['adaptive', 'fixed']")
    obpf_bw = _num(t, "link.obpf_bandwidth_ghz", 0, allow_none=True)
    link = LinkPlan(span, n_spans, None if obpf_bw is None else obpf_bw * 1e9, step,
                    _choice(t, "link.obpf_shape", {"rect", "gaussian"}),
                    _flag(t, "link.obpf_per_span"), _flag(t, "link.rotate_polarization"))
    if link.obpf_bandwidth is not None and link.obpf_bandwidth >= sps * 28e9 / 3:
        raise ConfigError(f"link.obpf_bandwidth_ghz: {obpf_bw} GHz is not below the simulation rate")

    g = t["edfa"]["gain_db"]
    if g == "auto":
        gain = fiber.span_loss_db
    else:
        gain = _num(t, "edfa.gain_db", 0)
    amp = AmplifierParams(gain_db=gain, noise_figure_db=_num(t, "edfa.noise_figure_db"),
                          n_sp=_num(t, "edfa.n_sp", 1, allow_none=True), noise=_flag(t, "edfa.noise"))

    pd = PhotodiodeParams(_num(t, "receiver.responsivity_a_w", 1e-9, 1.1),
                          _num(t, "receiver.dark_current_na", 1e-12) * 1e-9,
                          _num(t, "receiver.temperature_k", 1e-9),
                          _num(t, "receiver.load_ohm", 1e-9),
                          _num(t, "receiver.thermal_bandwidth_ghz", 1e-9) * 1e9)
    spb = _num(t, "adc.samples_per_bit", 1e-3)
    adc = AdcParams(samples_per_bit=spb, bits=_num(t, "adc.bits", 1, 24, allow_none=True, integer=True))
    if adc.rate > sps * 28e9 / 3 * (1 + 1e-12):
        raise ConfigError(f"adc.samples_per_bit: ADC rate {adc.rate / 1e9:g} GSa/s exceeds the "
                          f"simulation rate {sps * 28 / 3:g} GSa/s; raise sps")
    if adc.rate <= 28e9 / 3:
        raise ConfigError("adc.samples_per_bit: ADC rate must exceed the symbol rate")

    d = t["dsp"]
    try:
        dsp = DspConfig(
            bessel=BesselConfig(_flag(t, "dsp.bessel.enable"), _num(t, "dsp.bessel.order", 1, integer=True),
                                _num(t, "dsp.bessel.bw_3db_ghz", 1e-3) * 1e9),
            qi=QiConfig(_flag(t, "dsp.qi.enable", allow_none=True)),
            cdc=CdcConfig(_flag(t, "dsp.cdc.enable"), _choice(t, "dsp.cdc.mode", {"freq", "time"}),
                          _num(t, "dsp.cdc.n_taps", 1, allow_none=True, integer=True)),
            dbp=DbpConfig(_flag(t, "dsp.dbp.enable"), _num(t, "dsp.dbp.steps_per_span", 1, integer=True),
                          _xi(d["dbp"]["xi_nl"])),
            timing=TimingConfig(_flag(t, "dsp.timing.enable"), loop_bw=_num(t, "dsp.timing.loop_bw", 1e-6, 0.1)),
            eq=EqConfig(_num(t, "dsp.eq.n_taps", 1, integer=True), _num(t, "dsp.eq.mu_cma", 0),
                        _num(t, "dsp.eq.mu_rde", 0), _num(t, "dsp.eq.stage1_len", 0, integer=True),
                        _num(t, "dsp.eq.passes", 1, integer=True)),
            foe=FoeConfig(_flag(t, "dsp.foe.enable"), search_range=_num(t, "dsp.foe.search_range_ghz", 0) * 1e9),
            cpe=BpsConfig(_flag(t, "dsp.cpe.enable"), _num(t, "dsp.cpe.b_test_phases", 8, integer=True),
                          _num(t, "dsp.cpe.window", 1, integer=True),
                          _num(t, "dsp.cpe.symmetry_order", 1, integer=True)),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"dsp: {e}") from e

    system = SystemConfig(
        n_symbols=n_sym, sps=sps, mode=mode, bit_generator=gen, pulse=pulse,
        rolloff=_num(t, "rolloff", 0, 1), launch_power_dbm=_num(t, "launch_power_dbm", -30, 30),
        tx_laser=laser, lo_laser=lo, fiber=fiber, link=link, amp=amp, pd=pd,
        tia_gain_db=_num(t, "receiver.tia_gain_db"), receiver_noise=_flag(t, "receiver.noise"),
        adc=adc, dsp=dsp, seed=_num(t, "seed", 0, integer=True),
    )
    lo_db, hi_db = _num(t, "metrics.osnr_lo_db"), _num(t, "metrics.osnr_hi_db")
    if lo_db >= hi_db:
        raise ConfigError("metrics.osnr_lo_db: must be below metrics.osnr_hi_db")
    normalized = {
        "launch_power_w": float(dbm2w(system.launch_power_dbm)),
        "span_m": span * 1e3,
        "distance_m": link.distance * 1e3,
        "edfa_gain_db": gain,
        "beta2_ps2_km": fiber.beta2,
        "beta3_ps3_km": fiber.beta3,
        "gamma_w_km": fiber.gamma,
        "adc_rate_hz": adc.rate,
    }
    return ResolvedConfig(t, system, _num(t, "metrics.target_ber", 1e-12, 0.5),
                          (lo_db, hi_db, _num(t, "metrics.osnr_tol_db", 1e-4)), normalized)


def _xi(v) -> float:
    if isinstance(v, str):
        if v not in XI_NL_PRESETS:
            raise ConfigError(f"dsp.dbp.xi_nl: unknown preset {v!r}; valid: {sorted(XI_NL_PRESETS)}")
        return XI_NL_PRESETS[v]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"dsp.dbp.xi_nl: expected a number or preset name, got {v!r}")
    if not 0 <= v <= 1.5:
        raise ConfigError(f"dsp.dbp.xi_nl: {v} is outside [0, 1.5]")
    return float(v)


def load_config(path: str | Path | None, environ: dict[str, str] | None = None,
                overrides: dict | None = None) -> ResolvedConfig:
    return resolve(load_tree(path, environ, overrides))


__all__ = ["ConfigError", "DEFAULTS", "ResolvedConfig", "XI_NL_PRESETS", "env_overrides",
           "load_config", "load_tree", "resolve"]

"""Sweep scenarios, per-point evaluation and run manifests."""

from __future__ import annotations

import copy
import csv
import functools
import hashlib
import io
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from ..dsp.chain import SYMBOL_RATE
from ..metrics import (
    BracketError, LinkReport, cluster_spread, export_constellation, osnr_max_achievable,
    q_factor_db,
)
from ..system import dbp_at_launch, evaluate, noiseless_link, propagate, required_osnr, simulate, transmit
from .config import ConfigError, ResolvedConfig, load_tree, resolve

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
KINDS = ("ber", "ber_at_osnr", "required", "constellation")
MIN_EXPERIMENT_SYMBOLS = 2**14


@dataclass(frozen=True)
class Scenario:
    """A named sweep.

    ``kind`` selects what each point computes:

    ``ber``            BER of the full noisy loop at its own OSNR
    ``ber_at_osnr``    noiseless loop, ASE loaded at the receiver to ``osnr_db``
    ``required``       required OSNR for the target BER, and the margin
    ``constellation``  as ``ber``, also writing received symbols and cluster spread

    Axes listed in ``paired`` are left out of the point seed, so points that
    differ only along them share noise and data.
    """

    name: str
    summary: str
    kind: str
    axes: dict[str, tuple]
    paired: tuple[str, ...] = ()
    base: dict = field(default_factory=dict)


def _span(start: float, stop: float, step: float) -> tuple:
    return tuple(float(v) for v in np.round(np.arange(start, stop + step / 2, step), 9))


SCENARIOS: dict[str, Scenario] = {s.name: s for s in (
    Scenario("constellation_560km", "received constellations after 7 x 80 km, Kerr effect off and on",
             "constellation", {"distance_km": (560.0,), "nonlinearity": (False, True)},
             paired=("nonlinearity",)),
    Scenario("ber_vs_distance", "BER of the noisy loop against distance for two launch powers",
             "ber", {"launch_power_dbm": (-6.0, -4.0), "distance_km": _span(80, 800, 80)},
             paired=("distance_km",)),
    Scenario("ber_vs_osnr", "BER against receiver OSNR, back to back and after 800 km",
             "ber_at_osnr", {"distance_km": (0.0, 800.0), "osnr_db": _span(12, 24, 1)},
             paired=("osnr_db",)),
    Scenario("reqosnr_vs_distance", "required OSNR against distance, linear and nonlinear fiber",
             "required", {"distance_km": _span(80, 800, 80), "nonlinearity": (False, True)},
             paired=("nonlinearity",)),
    Scenario("osnr_vs_power_80", "required and achievable OSNR against launch power, 10 x 80 km",
             "required", {"launch_power_dbm": _span(-8, 0, 1)},
             base={"link": {"span_km": 80.0, "n_spans": 10}, "dsp": {"dbp": {"enable": True}}}),
    Scenario("osnr_vs_power_100", "required and achievable OSNR against launch power, 8 x 100 km",
             "required", {"launch_power_dbm": _span(-8, 0, 1)},
             base={"link": {"span_km": 100.0, "n_spans": 8}, "dsp": {"dbp": {"enable": True}}}),
    Scenario("reqosnr_vs_samplerate", "required OSNR against ADC samples per bit at 240 and 800 km",
             "required", {"distance_km": (240.0, 800.0), "samples_per_bit": _span(2, 10, 1)},
             paired=("samples_per_bit",), base={"dsp": {"dbp": {"enable": True}}}),
    Scenario("custom", "axes, kind and pairing taken from the experiment section", "ber", {}),
)}

# span_km must be applied before distance_km
_AXIS_ORDER = {"span_km": 0, "distance_km": 1}


def _set(tree: dict, path: str, value, where: str) -> None:
    keys = path.split(".")
    node = tree
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"{where}: unknown axis {path!r}")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"{where}: unknown axis {path!r}")
    node[keys[-1]] = value


def apply_axes(tree: dict, point: dict[str, Any]) -> tuple[dict, float | None]:
    """Tree for one sweep point, and the receiver OSNR when ``osnr_db`` is an axis."""
    t = copy.deepcopy(tree)
    osnr = None
    for name in sorted(point, key=lambda n: _AXIS_ORDER.get(n, 2)):
        v = point[name]
        where = f"experiment.axes.{name}"
        if name == "osnr_db":
            osnr = float(v)
        elif name == "distance_km":
            span = float(t["link"]["span_km"])
            n = v / span
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"{where}: {v} km is not a whole number of {span} km spans")
            t["link"]["n_spans"] = int(round(n))
            t["link"]["distance_km"] = None
        elif name == "span_km":
            t["link"]["span_km"] = v
            t["link"]["distance_km"] = None
        elif name == "nonlinearity":
            if not v:
                t["fiber"]["n2_m2_w"] = 0.0
        elif name == "dbp":
            t["dsp"]["dbp"]["enable"] = bool(v)
        elif name == "samples_per_bit":
            t["adc"]["samples_per_bit"] = v
            need = v * 28e9 / SYMBOL_RATE
            sps = int(t["sps"])
            while sps < need - 1e-9:
                sps *= 2
            t["sps"] = sps
        else:
            _set(t, name, v, where)
    return t, osnr


def point_seed(master_seed: int, values: dict[str, Any]) -> int:
    """Seed of one sweep point from the master seed and its (unpaired) axis values."""
    key = json.dumps([int(master_seed), sorted((k, _plain(v)) for k, v in values.items())])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


def _plain(v):
    if isinstance(v, (np.generic,)):
        return v.item()
    return v


def _axis_values(name: str, raw, where: str) -> tuple:
    if isinstance(raw, dict):
        try:
            vals = _span(float(raw["start"]), float(raw["stop"]), float(raw["step"]))
        except KeyError as e:
            raise ConfigError(f"{where}: range needs start, stop and step (missing {e})") from e
        if float(raw["step"]) <= 0:
            raise ConfigError(f"{where}: step must be positive")
    elif isinstance(raw, (list, tuple)):
        vals = tuple(raw)
    else:
        vals = (raw,)
    if not vals:
        raise ConfigError(f"{where}: sweep range is empty")
    return vals


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: Scenario
    axes: dict[str, tuple]
    paired: tuple[str, ...]
    n_symbols: int
    master_seed: int
    mode: str
    output_dir: Path
    tree: dict
    resolved: ResolvedConfig

    def points(self) -> list[dict[str, Any]]:
        """Sweep points in row-major axis order."""
        names = list(self.axes)
        out: list[dict[str, Any]] = [{}]
        for n in names:
            out = [{**p, n: v} for p in out for v in self.axes[n]]
        return out

    def seed_of(self, point: dict[str, Any]) -> int:
        return point_seed(self.master_seed, {k: v for k, v in point.items() if k not in self.paired})


def validate_config(path: str | Path | None, environ: dict[str, str] | None = None,
                    overrides: dict | None = None) -> ExperimentSpec:
    """Load, merge and check a config file; scenario defaults sit below file values."""
    tree = load_tree(path, environ, overrides)
    name = tree["experiment"]["scenario"]
    if name not in SCENARIOS:
        raise ConfigError(f"experiment.scenario: unknown scenario {name!r}; valid: {sorted(SCENARIOS)}")
    sc = SCENARIOS[name]
    if sc.base:
        tree = load_tree(path, environ, overrides, preset=sc.base)
    exp = tree["experiment"]
    kind = sc.kind if name != "custom" else exp["kind"]
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind: {kind!r} is not one of {list(KINDS)}")
    if name != "custom":
        sc_axes = dict(sc.axes)
    else:
        sc_axes = {}
    if not isinstance(exp["axes"], dict):
        raise ConfigError("experiment.axes: expected a mapping of axis name to values")
    for k, raw in exp["axes"].items():
        if name != "custom" and k not in sc.axes:
            raise ConfigError(f"experiment.axes.{k}: not an axis of {name}; valid: {sorted(sc.axes)}")
        sc_axes[k] = _axis_values(k, raw, f"experiment.axes.{k}")
    if kind == "ber_at_osnr" and "osnr_db" not in sc_axes:
        raise ConfigError("experiment.axes.osnr_db: required for kind ber_at_osnr")
    paired = tuple(exp["paired"]) if exp["paired"] else sc.paired
    for p in paired:
        if p not in sc_axes:
            raise ConfigError(f"experiment.paired: {p!r} is not a sweep axis")
    resolved = resolve(tree)
    if resolved.system.n_symbols < MIN_EXPERIMENT_SYMBOLS:
        raise ConfigError(f"n_symbols: sweeps need at least {MIN_EXPERIMENT_SYMBOLS} symbols")
    spec = ExperimentSpec(replace_kind(sc, kind), sc_axes, paired, resolved.system.n_symbols,
                          resolved.system.seed, resolved.system.mode, Path(exp["output_dir"]), tree, resolved)
    for p in spec.points():
        resolve(apply_axes(tree, p)[0])
    return spec


def replace_kind(sc: Scenario, kind: str) -> Scenario:
    return sc if sc.kind == kind else Scenario(sc.name, sc.summary, kind, sc.axes, sc.paired, sc.base)


def _nan() -> float:
    return float("nan")


def evaluate_point(tree: dict, point: dict[str, Any], seed: int, kind: str,
                   out_dir: str | Path | None = None, tap_dir: str | Path | None = None,
                   tag: str = "") -> tuple[LinkReport, dict]:
    """Compute one sweep point; returns the report and any extra columns."""
    t, osnr = apply_axes(tree, point)
    t["seed"] = seed
    rc = resolve(t)
    cfg = rc.system
    link = cfg.link
    budget = (osnr_max_achievable(cfg.launch_power_dbm, cfg.amp.noise_figure_db, cfg.fiber.span_loss_db,
                                  link.n_spans) if link.n_spans > 0 else _nan())
    common = dict(launch_power=cfg.launch_power_dbm, distance=link.distance, span_km=link.span_length,
                  sps_bit=cfg.adc.samples_per_bit, seed=seed)
    extra: dict = {}
    if kind == "required":
        lo, hi, tol = rc.osnr_search
        res = required_osnr(cfg, rc.target_ber, lo, hi, tol)
        req = res.value
        return LinkReport(ber=_nan(), ber_upper_bound=False, evm=_nan(), q_factor=_nan(),
                          osnr_measured=_nan(), osnr_required=req, osnr_max_achievable=budget,
                          osnr_margin=budget - req, **common), extra
    tap = None if tap_dir is None else Path(tap_dir) / tag
    if kind == "ber_at_osnr":
        c = dbp_at_launch(noiseless_link(cfg))
        tx, sig = _noiseless_field(json.dumps(t, sort_keys=True), None if tap is None else str(tap))
        r = evaluate(c, tx, sig, osnr, tap)
    else:
        r = simulate(cfg, osnr, tap_dir=tap)
    if kind == "constellation":
        rx, ref = r.aligned_symbols
        extra["cluster_spread"] = cluster_spread(rx)
        if out_dir is not None:
            export_constellation(rx, Path(out_dir) / f"constellation_{tag}.csv")
    b = r.ber
    return LinkReport(ber=b.reported, ber_upper_bound=b.upper_bound,
                      evm=float(r.chain.report["carrier"].metrics["evm_db"]), q_factor=q_factor_db(b.reported),
                      osnr_measured=r.osnr_db, osnr_required=_nan(), osnr_max_achievable=budget,
                      osnr_margin=_nan(), **common), extra


@functools.lru_cache(maxsize=2)
def _noiseless_field(tree_json: str, tap: str | None):
    # points that differ only in receiver OSNR share one propagation
    c = dbp_at_launch(noiseless_link(resolve(json.loads(tree_json)).system))
    tx = transmit(c)
    return tx, propagate(c, tx.field, tap)


def _point_tag(point: dict[str, Any]) -> str:
    return "_".join(f"{k}={v}" for k, v in point.items()).replace(".", "p").replace("/", "") or "point"


def _run_point(args) -> tuple[dict | None, dict, str, float]:
    tree, point, seed, kind, out_dir, tap_dir, tag = args
    t0 = time.perf_counter()
    try:
        rep, extra = evaluate_point(tree, point, seed, kind, out_dir, tap_dir, tag)
        return asdict(rep), extra, "ok", time.perf_counter() - t0
    except BracketError as e:
        status = f"failed: bracket: {e}"
    except Exception as e:  # a failed point is recorded and the sweep continues
        log.exception("point %s failed", point)
        status = f"failed: {type(e).__name__}: {e}"
    return None, {}, status, time.perf_counter() - t0


@dataclass
class RunManifest:
    scenario: str
    kind: str
    config: dict
    axes: dict
    paired: list
    version: str
    points: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0
    csv: str = ""

    def to_json(self) -> str:
        d = {"manifest_version": MANIFEST_VERSION, **asdict(self),
             "platform": platform.platform(), "python": platform.python_version(),
             "numpy": np.__version__}
        return json.dumps(d, indent=2, default=_plain)

    @property
    def failed(self) -> int:
        return sum(1 for p in self.points if p["status"] != "ok")


def csv_columns(axes: list[str], extra: list[str] = ()) -> list[str]:
    return [*axes, *LinkReport.columns(), *extra]


def run_experiment(spec: ExperimentSpec, threads: int = 1, tap_dir: str | Path | None = None,
                   out_dir: str | Path | None = None) -> RunManifest:
    """Evaluate every point, write ``<scenario>.csv`` and ``manifest.json``.

    Rows follow axis order whatever the worker count.
    """
    out = Path(out_dir) if out_dir is not None else spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    pts = spec.points()
    kind = spec.scenario.kind
    jobs = [(spec.tree, p, spec.seed_of(p), kind, str(out), None if tap_dir is None else str(tap_dir),
             _point_tag(p)) for p in pts]
    t0 = time.perf_counter()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    names = list(spec.axes)
    extra_cols = ["cluster_spread"] if kind == "constellation" else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(names, extra_cols))
    man = RunManifest(spec.scenario.name, kind, spec.tree, {k: list(v) for k, v in spec.axes.items()},
                      list(spec.paired), __version__)
    for p, (seed_job, (rep, extra, status, dt)) in zip(pts, zip(jobs, results)):
        seed = seed_job[2]
        if rep is None:
            rep = {c: _nan() for c in LinkReport.columns()}
            rep["seed"] = seed
        rep["status"] = status
        w.writerow([p[n] for n in names] + [rep[c] for c in LinkReport.columns()]
                   + [extra.get(c, _nan()) for c in extra_cols])
        man.points.append({"axes": p, "seed": seed, "status": status, "wall_clock_s": round(dt, 3)})
    csv_path = out / f"{spec.scenario.name}.csv"
    csv_path.write_text(buf.getvalue())
    man.csv = csv_path.name
    man.wall_clock_s = round(time.perf_counter() - t0, 3)
    (out / "manifest.json").write_text(man.to_json())
    return man


def list_presets() -> str:
    width = max(len(n) for n in SCENARIOS)
    lines = []
    for s in SCENARIOS.values():
        axes = ", ".join(f"{k}[{len(v)}]" for k, v in s.axes.items()) or "user-defined"
        lines.append(f"{s.name:<{width}}  {s.kind:<13} {s.summary} ({axes})")
    return "\n".join(lines)


STAGE_DOCS: dict[str, str] = {
    "bessel": "Low-pass Bessel filter on every receiver branch (order 4, 28 GHz 3-dB bandwidth by default). "
              "The bandwidth is clamped to 0.95 of Nyquist at low ADC rates.",
    "resample": "Cubic interpolation to 2 samples per symbol after an anti-alias brick-wall filter.",
    "qi": "Gram-Schmidt orthogonalization of I and Q per branch. Runs by default only after "
          "transmission, since back-to-back rectangular 8-QAM is not a proper signal.",
    "cdc": "Static chromatic dispersion compensation by the all-pass response "
           "H(w) = exp(-j beta2 L w^2 / 2 - j beta3 L w^3 / 6), in the frequency domain or as a "
           "truncated FIR filter.",
    "nlc": "Nonlinearity compensation by digital backpropagation (see 'dbp').",
    "dbp": "Digital backpropagation solves the propagation equation in the reverse direction,\n"
           "    dA/d(-z) = (D + N) A,\n"
           "with the dispersion operator D = -alpha/2 - j beta2/2 d^2/dt^2 + beta3/6 d^3/dt^3 and the\n"
           "nonlinear operator N = j xi (8/9) gamma |A|^2, both with inverted signs relative to forward\n"
           "propagation. Each span is split into steps_per_span symmetric split steps; xi_nl scales the\n"
           "nonlinear phase and the power profile is taken from the configured launch power and span loss.",
    "timing": "Gardner timing error detector with a second-order loop and cubic Farrow interpolation. "
              "One clock drives all branches.",
    "equalizer": "Butterfly FIR equalizer, CMA for the first block then radius-directed updates "
                 "against the two 8-QAM rings. Singular tap rows trigger an orthogonal re-initialization.",
    "carrier": "Frequency offset from the peak of the squared outer-ring spectrum, then blind phase search "
               "over 32 test phases in [-pi/2, pi/2) with a 64-symbol window.",
}


def describe_stage(name: str) -> str:
    if name not in STAGE_DOCS:
        raise KeyError(f"unknown stage {name!r}; valid: {', '.join(sorted(STAGE_DOCS))}")
    return f"{name}: {STAGE_DOCS[name]}"


__all__ = [
    "ExperimentSpec", "KINDS", "RunManifest", "SCENARIOS", "STAGE_DOCS", "Scenario", "apply_axes",
    "csv_columns", "describe_stage", "evaluate_point", "list_presets", "point_seed", "run_experiment",
    "validate_config",
]

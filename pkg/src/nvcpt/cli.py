"""Command-line front end.

Every subcommand reads one JSON config (``--config`` or ``$NVCPT_CONFIG``),
applies ``--set key=value`` overrides and flag overrides on top of the
defaults, and writes CSV/JSON (optionally SVG) files into ``--out-dir``.

Exit codes: 0 success, 2 input or config error, 3 numerical
non-convergence, 4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import copy
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .dynamics import (
    DissipatorConfig,
    DrivenSystem,
    PulseSequence,
    Segment,
    ToneConfig,
    contrast_metrics,
    cpt_2d_scan,
    cpt_scan,
    cpt_sequence,
    larmor_report,
    modulation_period,
    odmr_scan,
    read_scan_csv,
    simulate_rabi,
)
from .errors import ConvergenceError, InvariantError, NVError, StepSizeError
from .lineshape import (
    PARAM_NAMES,
    OdmrModelParams,
    fit_spectrum,
    initial_guess,
    odmr_profile,
    read_spectrum_csv,
    spectrum_csv_text,
    synth_spectrum,
)
from .spin_model import HamiltonianParams, MagneticField, diagonalize
from .transitions import (
    COMPOSITE_NAMES,
    TRANSITION_NAMES,
    DriveVector,
    _fmt_label,
    angle_scan,
    calibrate_field,
    transition_table,
)

ENV_CONFIG = "NVCPT_CONFIG"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_INVARIANT = 4

_SQRT_HALF = 1.0 / math.sqrt(2.0)

DEFAULTS: dict[str, Any] = {
    "hamiltonian": {
        "D": 2870.0, "Q": -4.945, "gamma_e": 2.802, "gamma_n": 308e-6,
        "A_zz": -2.162, "A_xx": -2.62, "A_yy": -2.62,
    },
    "field": {"magnitude": 30.0, "tilt": 88.0, "azimuth": 0.0},
    "drive": {"direction": [_SQRT_HALF, _SQRT_HALF, 0.0], "include_nuclear": False},
    "dissipators": {
        "gamma_pump": 1.0, "p_flip": 0.1, "gamma_2e": 0.05, "gamma_2n": 0.001, "gamma_1": 0.0,
    },
    "readout": {"contrast": 0.3, "noise_sigma": 0.0},
    "rwa_cutoff": 50.0,
    "workers": 1,
    "anglescan": {"start": 0.0, "stop": 90.0, "step": 1.0, "min_overlap": 0.5},
    "synth": {
        "nu0": [2870.0, 2875.0, 2880.0], "sigma": [0.4, 0.4, 0.4], "C": 1.0,
        "alpha": 0.012, "Delta": 13.4, "Delta2": None, "offset": 0.0,
        "start": 2850.0, "stop": 2900.0, "step": 0.05, "noise_sigma": 0.01,
    },
    "fit": {
        "frozen": ["Delta"], "max_iter": 200, "peak_threshold": 5.0, "fit_offset": True,
        "alpha": 0.012, "Delta": 13.4,
    },
    "rabi": {"transition": "2", "amplitude": 0.05, "duration": 40.0, "dt": 0.02},
    "odmr": {"probe_amplitude": 0.05, "start": 2866.0, "stop": 2884.0, "step": 0.05},
    "cpt": {
        "pump_transition": "a", "pump_frequency": None, "pump_amplitude": 0.5,
        "probe_amplitude": 0.05, "probe_center": "1", "probe_span": 0.2, "probe_step": 0.01,
        "reference": True,
    },
    "cpt2d": {
        "pump_center": "a", "pump_span": 0.1, "pump_step": 0.05, "pump_amplitude": 0.5,
        "probe_center": "1", "probe_span": 0.1, "probe_step": 0.02, "probe_amplitude": 0.05,
    },
    "sequence": {"init_us": 20.0, "ref_us": 2.0, "window_us": 130.0, "segments": None},
    "contrast": {"baseline_points": 5},
    "larmor": {"fields": [30.0, 45.0], "detrend_degree": 3, "min_extrema": 3},
    "calibrate": {
        "lines": {"1-": 2869.1, "2-": 2871.1, "3": 2874.9, "2": 2876.3, "1": 2878.3,
                  "c-d": 2881.3},
        "initial_magnitude": 30.0, "initial_tilt": 89.5, "max_iter": 100,
    },
    "seed": 0,
}

# keys whose value is free-form (null default or nested mapping of user data)
_FREE_FORM = {"synth.Delta2", "cpt.pump_frequency", "sequence.segments", "calibrate.lines"}


class ConfigError(ValueError):
    """Invalid configuration file or override."""


# ---------------------------------------------------------------------------
# configuration


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in _FREE_FORM:
            out.extend(_flatten(v, key + "."))
        else:
            out.append((key, v))
    return out


def _type_ok(default: Any, value: Any) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(base: dict, over: dict, path: str = "") -> None:
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict) and key not in _FREE_FORM:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            _merge(base[k], v, key + ".")
        else:
            if key not in _FREE_FORM and not _type_ok(base[k], v):
                raise ConfigError(
                    f"config key {key!r} expects {type(base[k]).__name__}, got {json.dumps(v)}")
            base[k] = v


def load_config_text(text: str, source: str = "<config>") -> dict:
    """Parse JSON config text; diagnostics carry line and column."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return doc


def _set_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: dict = {}
    cur = nested
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    _merge(cfg, nested)


@dataclass
class RunConfig:
    """Fully resolved configuration (defaults merged with user values)."""

    data: dict

    @classmethod
    def build(cls, user: dict | None = None, overrides: list[str] = (), seed: int | None = None) -> "RunConfig":
        cfg = copy.deepcopy(DEFAULTS)
        _merge(cfg, user or {})
        for item in overrides:
            _set_override(cfg, item)
        if seed is not None:
            cfg["seed"] = seed
        return cls(cfg)

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def hamiltonian(self) -> HamiltonianParams:
        return HamiltonianParams(**self.data["hamiltonian"])

    def field(self) -> MagneticField:
        return MagneticField(**self.data["field"])

    def drive(self) -> DriveVector:
        d = self.data["drive"]
        return DriveVector(direction=tuple(d["direction"]), include_nuclear=d["include_nuclear"])

    def dissipators(self) -> DissipatorConfig:
        return DissipatorConfig(**self.data["dissipators"])

    def system(self) -> DrivenSystem:
        eig = diagonalize(self.hamiltonian(), self.field())
        return DrivenSystem(eig, self.drive(), cutoff=self.data["rwa_cutoff"],
                            contrast=self.data["readout"]["contrast"])

    def sequence(self) -> PulseSequence:
        s = self.data["sequence"]
        if s["segments"] is None:
            return cpt_sequence(s["init_us"], s["ref_us"], s["window_us"])
        return parse_segments(s["segments"])


def parse_segments(items: Any) -> PulseSequence:
    """Sequence from ``[{duration_us, laser, tones, record, mw}, ...]``."""
    if not isinstance(items, list) or not items:
        raise ConfigError("sequence.segments must be a non-empty list")
    allowed = {"duration_us", "laser", "tones", "record", "mw"}
    segs = []
    for n, it in enumerate(items):
        if not isinstance(it, dict):
            raise ConfigError(f"sequence.segments[{n}] must be an object")
        extra = set(it) - allowed
        if extra:
            raise ConfigError(f"unknown config key 'sequence.segments[{n}].{sorted(extra)[0]}'")
        if "duration_us" not in it:
            raise ConfigError(f"sequence.segments[{n}] needs duration_us")
        tones = []
        for t in it.get("tones", []):
            if not isinstance(t, dict):
                raise ConfigError(f"sequence.segments[{n}].tones entries must be objects")
            tones.append(ToneConfig(frequency=t.get("frequency", 0.0),
                                    rabi_scale=t.get("amplitude", 0.0),
                                    phase=t.get("phase", 0.0)))
        segs.append(Segment(float(it["duration_us"]), laser=bool(it.get("laser", False)),
                            tones=tuple(tones), record=it.get("record"),
                            mw=bool(it.get("mw", False))))
    return PulseSequence(tuple(segs))


def config_help() -> str:
    """Every config key with its default, one per line."""
    lines = ["config keys (dotted name = default):"]
    for key, val in _flatten(DEFAULTS):
        lines.append(f"  {key} = {json.dumps(val)}")
    lines.append(f"config file: --config PATH or ${ENV_CONFIG}; override with --set key=value")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# output


def write_atomic(path: Path, data: str | bytes) -> Path:
    """Write via a temporary file in the target directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _svg(path: Path, draw: Callable) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "nvcpt", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        draw(ax)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return write_atomic(path, buf.getvalue())


def _grid(start: float, stop: float, step: float, what: str) -> np.ndarray:
    if not step > 0 or not stop >= start:
        raise ConfigError(f"{what}: need step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _centered(center: float, span: float, step: float, what: str) -> np.ndarray:
    if not step > 0 or not span > 0:
        raise ConfigError(f"{what}: need span > 0 and step > 0")
    k = int(math.floor(span / step + 1e-9))
    return center + step * np.arange(-k, k + 1)


def _line_frequency(system: DrivenSystem, ref: Any, what: str) -> float:
    if isinstance(ref, (int, float)) and not isinstance(ref, bool):
        return float(ref)
    if ref not in TRANSITION_NAMES and ref not in COMPOSITE_NAMES:
        raise ConfigError(f"{what}: unknown transition {ref!r}")
    return system.frequency(ref)


# ---------------------------------------------------------------------------
# commands


def cmd_levels(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    eig = diagonalize(cfg.hamiltonian(), cfg.field())
    table = transition_table(eig, cfg.drive())
    rows = ["index,label,energy_mhz"]
    rows += [f"{k},{_fmt_label(lab)},{float(e)!r}"
             for k, (lab, e) in enumerate(zip(eig.labels, eig.values.tolist()))]
    levels = {
        "field": cfg["field"],
        "levels": [{"label": _fmt_label(lab), "energy_mhz": float(e),
                    "ambiguous": k in eig.ambiguous}
                   for k, (lab, e) in enumerate(zip(eig.labels, eig.values.tolist()))],
    }
    files = [
        write_atomic(out / "levels.csv", "\n".join(rows) + "\n"),
        write_atomic(out / "levels.json", _json(levels)),
        write_atomic(out / "transitions.csv", table.to_csv()),
        write_atomic(out / "transitions.json", table.to_json()),
    ]
    if svg:
        def draw(ax):
            for t in table:
                ax.vlines(t.frequency, 0, t.matrix_element,
                          color="C0" if t.allowed else "C3")
                if t.name:
                    ax.annotate(t.name, (t.frequency, t.matrix_element), fontsize=8)
            ax.set_xlabel("frequency (MHz)")
            ax.set_ylabel("|matrix element|")
        files.append(_svg(out / "transitions.svg", draw))
    return files


def cmd_anglescan(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    a = cfg["anglescan"]
    grid = _grid(a["start"], a["stop"], a["step"], "anglescan")
    scan = angle_scan(cfg.hamiltonian(), cfg["field"]["magnitude"], grid, cfg.drive(),
                      azimuth=cfg["field"]["azimuth"], min_overlap=a["min_overlap"])
    files = [
        write_atomic(out / "anglescan_levels.csv", scan.levels_csv()),
        write_atomic(out / "anglescan_transitions.csv", scan.transitions_csv()),
        write_atomic(out / "anglescan.json", scan.to_json()),
    ]
    if svg:
        def draw(ax):
            for n in TRANSITION_NAMES:
                ls = "-" if scan.classes[n] == "allowed" else "--"
                ax.plot(scan.angles, scan.transition_curves[n], ls, label=n, lw=1)
            ax.set_xlabel("tilt (deg)")
            ax.set_ylabel("frequency (MHz)")
            ax.legend(fontsize=7, ncol=2)
        files.append(_svg(out / "anglescan.svg", draw))
    return files


def _synth_params(s: dict) -> OdmrModelParams:
    return OdmrModelParams(nu0=tuple(s["nu0"]), sigma=tuple(s["sigma"]), C=s["C"],
                           alpha=s["alpha"], Delta=s["Delta"], offset=s["offset"],
                           Delta2=s["Delta2"])


def cmd_synth(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    s = cfg["synth"]
    grid = _grid(s["start"], s["stop"], s["step"], "synth")
    p = _synth_params(s)
    spec = synth_spectrum(grid, p, noise_sigma=s["noise_sigma"], seed=cfg["seed"])
    files = [
        write_atomic(out / "spectrum.csv", spectrum_csv_text(spec)),
        write_atomic(out / "spectrum_truth.json",
                     _json({"params": p.as_dict(), "noise_sigma": s["noise_sigma"],
                            "seed": cfg["seed"]})),
    ]
    if svg:
        files.append(_svg(out / "spectrum.svg", lambda ax: (
            ax.plot(spec.frequencies, spec.values, lw=0.8), ax.set_xlabel("frequency (MHz)"))))
    return files


def cmd_fit(cfg: RunConfig, out: Path, svg: bool, input_path: str) -> tuple[list[Path], int]:
    f = cfg["fit"]
    spec = read_spectrum_csv(input_path)
    init = initial_guess(spec, k=f["peak_threshold"], alpha=f["alpha"], Delta=f["Delta"])
    unknown = set(f["frozen"]) - set(PARAM_NAMES) - {"nu0", "sigma"}
    if unknown:
        raise ConfigError(f"fit.frozen: unknown parameter names {sorted(unknown)}")
    res = fit_spectrum(spec, init, frozen=f["frozen"], max_iter=f["max_iter"],
                       fit_offset=f["fit_offset"])
    files = [write_atomic(out / "fit.json", res.to_json())]
    if svg:
        def draw(ax):
            ax.plot(spec.frequencies, spec.values, ".", ms=2, label="data")
            ax.plot(spec.frequencies, odmr_profile(spec.frequencies, res.params), label="fit")
            ax.set_xlabel("frequency (MHz)")
            ax.legend()
        files.append(_svg(out / "fit.svg", draw))
    return files, EXIT_OK if res.converged else EXIT_CONVERGENCE


def cmd_rabi(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    r = cfg["rabi"]
    system = cfg.system()
    if r["transition"] not in TRANSITION_NAMES:
        raise ConfigError(f"rabi.transition: unknown transition {r['transition']!r}")
    tone = ToneConfig(frequency=system.frequency(r["transition"]), rabi_scale=r["amplitude"])
    res = simulate_rabi(system, r["transition"], tone, cfg.dissipators(), r["duration"], r["dt"])
    rows = ["time_us,signal"] + [f"{t!r},{v!r}" for t, v in
                                 zip(res.times.tolist(), res.signal.tolist())]
    summary = {"transition": res.transition, "amplitude_g": r["amplitude"],
               "frequency_mhz": res.frequency, "expected_mhz": res.expected}
    files = [write_atomic(out / "rabi.csv", "\n".join(rows) + "\n"),
             write_atomic(out / "rabi.json", _json(summary))]
    if svg:
        files.append(_svg(out / "rabi.svg", lambda ax: (
            ax.plot(res.times, res.signal), ax.set_xlabel("time (us)"))))
    return files


def _noisy(scan, sigma: float, seed: int):
    if sigma > 0:
        rng = np.random.default_rng(seed)
        scan.signal = scan.signal + rng.normal(0.0, sigma, scan.signal.shape)
    return scan


def _scan_files(out: Path, stem: str, scan, svg: bool, xlabel: str = "probe (MHz)") -> list[Path]:
    files = [write_atomic(out / f"{stem}.csv", scan.to_csv()),
             write_atomic(out / f"{stem}.json", _json(scan.metadata))]
    if svg:
        if scan.is_2d:
            def draw(ax):
                ax.pcolormesh(scan.probe_frequencies, scan.pump_frequencies, scan.signal,
                              shading="nearest")
                ax.set_xlabel(xlabel)
                ax.set_ylabel("pump (MHz)")
        else:
            def draw(ax):
                ax.plot(scan.probe_frequencies, scan.signal)
                ax.set_xlabel(xlabel)
        files.append(_svg(out / f"{stem}.svg", draw))
    return files


def cmd_odmr(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    o = cfg["odmr"]
    grid = _grid(o["start"], o["stop"], o["step"], "odmr")
    probe = ToneConfig(frequency=float(grid[0]), rabi_scale=o["probe_amplitude"])
    scan = odmr_scan(cfg.system(), probe, grid, cfg.dissipators(), cfg.sequence(),
                     workers=cfg["workers"])
    scan = _noisy(scan, cfg["readout"]["noise_sigma"], cfg["seed"])
    return _scan_files(out, "odmr", scan, svg)


def cmd_cpt(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    c = cfg["cpt"]
    system = cfg.system()
    diss = cfg.dissipators()
    pump_f = c["pump_frequency"]
    if pump_f is None:
        pump_f = _line_frequency(system, c["pump_transition"], "cpt.pump_transition")
    elif not isinstance(pump_f, (int, float)) or isinstance(pump_f, bool):
        raise ConfigError("cpt.pump_frequency must be a number or null")
    center = _line_frequency(system, c["probe_center"], "cpt.probe_center")
    grid = _centered(center, c["probe_span"], c["probe_step"], "cpt")
    pump = ToneConfig(frequency=float(pump_f), rabi_scale=c["pump_amplitude"])
    probe = ToneConfig(frequency=float(grid[0]), rabi_scale=c["probe_amplitude"])
    seq = cfg.sequence()
    sigma, seed = cfg["readout"]["noise_sigma"], cfg["seed"]
    scan = cpt_scan(system, pump, grid, diss, seq, probe=probe, workers=cfg["workers"])
    files = _scan_files(out, "cpt", _noisy(scan, sigma, seed), svg)
    if c["reference"]:
        ref = odmr_scan(system, probe, grid, diss, seq, workers=cfg["workers"])
        files += _scan_files(out, "cpt_reference", _noisy(ref, sigma, seed + 1), svg)
    return files


def cmd_cpt2d(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    c = cfg["cpt2d"]
    system = cfg.system()
    pumps = _centered(_line_frequency(system, c["pump_center"], "cpt2d.pump_center"),
                      c["pump_span"], c["pump_step"], "cpt2d pump")
    probes = _centered(_line_frequency(system, c["probe_center"], "cpt2d.probe_center"),
                       c["probe_span"], c["probe_step"], "cpt2d probe")
    pump = ToneConfig(frequency=float(pumps[0]), rabi_scale=c["pump_amplitude"])
    probe = ToneConfig(frequency=float(probes[0]), rabi_scale=c["probe_amplitude"])
    scan = cpt_2d_scan(system, pumps, probes, cfg.dissipators(), pump=pump, probe=probe,
                       seq_template=cfg.sequence(), workers=cfg["workers"])
    scan = _noisy(scan, cfg["readout"]["noise_sigma"], cfg["seed"])
    return _scan_files(out, "cpt2d", scan, svg)


def cmd_contrast(cfg: RunConfig, out: Path, svg: bool, cpt_path: str, odmr_path: str) -> list[Path]:
    cpt = read_scan_csv(cpt_path)
    ref = read_scan_csv(odmr_path)
    rep = contrast_metrics(cpt, ref, baseline_points=cfg["contrast"]["baseline_points"])
    files = [write_atomic(out / "contrast.json", _json(rep.to_dict()))]
    if svg:
        def draw(ax):
            ax.plot(ref.probe_frequencies, ref.signal, label="ODMR")
            ax.plot(cpt.probe_frequencies, cpt.signal, label="two-tone")
            ax.axvline(rep.f_r, color="k", lw=0.5)
            ax.legend()
        files.append(_svg(out / "contrast.svg", draw))
    return files


def cmd_larmor(cfg: RunConfig, out: Path, svg: bool, scan_path: str | None) -> list[Path]:
    lm = cfg["larmor"]
    doc: dict[str, Any] = {"fields": [larmor_report(float(b)) for b in lm["fields"]]}
    if scan_path is not None:
        scan = read_scan_csv(scan_path)
        res = modulation_period(scan, field_g=cfg["field"]["magnitude"],
                                detrend_degree=lm["detrend_degree"],
                                min_extrema=lm["min_extrema"])
        doc["modulation"] = {"period_khz": res.period_khz, "n_extrema": res.n_extrema,
                             "larmor_standard_khz": res.larmor_standard_khz,
                             "larmor_literal_khz": res.larmor_literal_khz}
    return [write_atomic(out / "larmor.json", _json(doc))]


def cmd_calibrate(cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    c = cfg["calibrate"]
    lines = c["lines"]
    if not isinstance(lines, dict):
        raise ConfigError("calibrate.lines must map transition names to MHz")
    init = MagneticField(c["initial_magnitude"], c["initial_tilt"], cfg["field"]["azimuth"])
    res = calibrate_field(sorted(lines.items()), init, cfg.hamiltonian(), max_iter=c["max_iter"])
    return [write_atomic(out / "calibration.json", res.to_json())]


# ---------------------------------------------------------------------------
# argument parsing


_COMMANDS = {
    "levels": "eigenvalues, labels and the transition table",
    "anglescan": "levels and named transitions versus field tilt",
    "synth": "synthetic ODMR spectrum from the lineshape model",
    "fit": "fit the lineshape model to a spectrum CSV",
    "rabi": "resonant Rabi oscillation of a named transition",
    "odmr": "single-tone ODMR scan",
    "cpt": "two-tone (pump + probe) scan with ODMR reference",
    "cpt2d": "pump x probe two-tone map",
    "contrast": "apparent and true contrast from two scan CSVs",
    "larmor": "13C Larmor frequencies and optional wing-modulation period",
    "calibrate": "fit field magnitude and tilt to named line frequencies",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${ENV_CONFIG})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (dotted name, JSON value)")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--svg", action="store_true", help="also write SVG plots")

    parser = argparse.ArgumentParser(
        prog="nvcpt", description="NV-center spin levels, ODMR lineshapes and CPT dynamics.",
        epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in _COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=desc, description=desc,
                           epilog=config_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "fit":
            p.add_argument("input", help="spectrum CSV (frequency_mhz,signal)")
            p.add_argument("--freeze", action="append", metavar="NAME",
                           help="parameter held fixed (repeatable; replaces fit.frozen)")
        elif name == "contrast":
            p.add_argument("cpt_csv", help="two-tone scan CSV (probe_mhz,signal)")
            p.add_argument("odmr_csv", help="single-tone reference scan CSV")
        elif name == "larmor":
            p.add_argument("--scan", help="scan CSV whose wing modulation is analysed")
    return parser


def _load_user_config(path: str | None) -> dict:
    path = path or os.environ.get(ENV_CONFIG) or None
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return load_config_text(text, path)


def run(args: argparse.Namespace) -> int:
    overrides = list(args.set)
    if getattr(args, "freeze", None):
        overrides.append("fit.frozen=" + json.dumps(args.freeze))
    cfg = RunConfig.build(_load_user_config(args.config), overrides, args.seed)
    out = Path(args.out_dir)
    cmd = args.command
    code = EXIT_OK
    if cmd == "fit":
        files, code = cmd_fit(cfg, out, args.svg, args.input)
    elif cmd == "contrast":
        files = cmd_contrast(cfg, out, args.svg, args.cpt_csv, args.odmr_csv)
    elif cmd == "larmor":
        files = cmd_larmor(cfg, out, args.svg, args.scan)
    else:
        files = globals()[f"cmd_{cmd}"](cfg, out, args.svg)
    for f in files:
        print(f)
    if code == EXIT_CONVERGENCE:
        print("nvcpt: fit did not converge", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ConvergenceError, StepSizeError) as exc:
        print(f"nvcpt: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InvariantError as exc:
        print(f"nvcpt: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NVError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"nvcpt: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

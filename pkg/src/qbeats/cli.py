"""Command-line front end: parse a run config, compute, write trace.csv and metrics.txt.

Config grammar: ``key = value`` lines grouped under ``[system]``, ``[basis]``,
``[schedule]``, ``[beam]`` and ``[run]`` headers, ``#`` starts a comment.
Schedule lines read ``event = "time kind args"`` with kind one of ``click``,
``drive E``, ``pulse swap|shelve|unshelve`` or ``ionize p``.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .beats import (NormalizationError, antibunching_end, default_tau_grid, fringe_metrics,
                    g2_fixed_coupling, mean_photon, spectral_peak)
from .hilbert import build_basis, default_levels

MODES = ("steady", "g2", "feedback", "qec", "beam")
EVENT_ALIASES = {
    "click": "click_condition", "click_condition": "click_condition",
    "drive": "drive_set", "drive_set": "drive_set",
    "pulse": "unitary_pulse", "unitary_pulse": "unitary_pulse",
    "ionize": "weak_ionization", "weak_ionization": "weak_ionization",
}
SHORT_KIND = {"click_condition": "click", "drive_set": "drive", "unitary_pulse": "pulse",
              "weak_ionization": "ionize"}


def _number(text: str) -> float:
    text = text.strip()
    try:
        value = float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def _integer(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError(f"not an integer: {text!r}") from None


def _flag(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        value = text.strip().strip('"').strip("'")
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value
    return parse


def _text(text: str) -> str:
    return text.strip().strip('"').strip("'")


SCHEMA = {
    "system": {k: _number for k in ("g", "kappa", "gamma", "delta", "delta_prime", "drive",
                                    "xi_b", "c0", "c0p", "c1", "c1p", "gamma_hz")},
    "basis": {"n1_max": _integer, "n2_max": _integer, "control": _flag},
    "beam": {**{k: _number for k in ("v_mean", "v_sigma", "theta_p", "theta_t", "n_bar",
                                    "y_box", "threshold", "waist", "wavelength", "g0")},
             "n_traj": _integer, "t_grid_size": _integer},
    "run": {"mode": _choice(*MODES), "tau_max": _number, "tau_points": _integer,
            "seed": _integer, "pre_click": _choice("steady", "pumped"),
            "outcomes": _choice("known", "unknown"), "prepare": _number, "out": _text},
}
SECTION_ORDER = ("run", "system", "basis", "beam", "schedule")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class EventSpec:
    time: float
    kind: str
    args: tuple = ()

    def to_text(self) -> str:
        parts = [repr(self.time), SHORT_KIND[self.kind], *[str(a) for a in self.args]]
        return " ".join(parts)


@dataclass(frozen=True)
class RunConfig:
    mode: str
    system: tuple = ()
    basis: tuple = ()
    beam: tuple = ()
    run: tuple = ()
    events: tuple = ()

    def section(self, name: str) -> dict:
        return dict(getattr(self, name))

    def get(self, section: str, key: str, default=None):
        return self.section(section).get(key, default)

    # -- builders ------------------------------------------------------------------
    def params(self):
        from .liouville import SystemParams
        return SystemParams(**self.section("system"))

    @property
    def control(self) -> bool:
        return bool(self.get("basis", "control", self.mode in ("feedback", "qec")))

    def make_basis(self):
        b = self.section("basis")
        if self.mode == "beam":
            n1, n2 = b.get("n1_max", 2), b.get("n2_max", 1)
        else:
            n1, n2 = b.get("n1_max", 3), b.get("n2_max", 2)
        return build_basis(default_levels(control=self.control), n1, n2)

    def tau_grid(self) -> np.ndarray:
        if self.mode == "beam":
            tau_max, points = self.get("run", "tau_max", 1000.0), self.get("run", "tau_points", 10001)
        else:
            tau_max, points = self.get("run", "tau_max", 40.0), self.get("run", "tau_points", 4096)
        return default_tau_grid(tau_max, points)

    def schedule(self):
        from .control import Event, Schedule
        events = []
        for e in self.events:
            if e.kind == "click_condition":
                events.append(Event(e.time, e.kind))
            elif e.kind == "unitary_pulse":
                events.append(Event(e.time, e.kind, e.args[0]))
            else:
                events.append(Event(e.time, e.kind, float(e.args[0])))
        return Schedule(events)

    def beam_objects(self):
        from .beam import BeamConfig, ModeGeometry
        b = self.section("beam")
        geom = ModeGeometry(**{k: b[k] for k in ("waist", "wavelength", "g0") if k in b})
        keys = ("v_mean", "v_sigma", "theta_p", "theta_t", "n_bar", "y_box", "threshold")
        cfg = BeamConfig(**{k: b[k] for k in keys if k in b}, seed=self.get("run", "seed", 0))
        return cfg, geom

    # -- canonical text ------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for name in SECTION_ORDER:
            if name == "schedule":
                if self.events:
                    lines.append("[schedule]")
                    lines.extend(f'event = "{e.to_text()}"' for e in self.events)
                    lines.append("")
                continue
            items = self.section(name)
            if name == "run":
                items = {"mode": self.mode, **items}
            if not items:
                continue
            lines.append(f"[{name}]")
            for key in sorted(items, key=lambda k: (k != "mode", k)):
                v = items[key]
                if isinstance(v, bool):
                    text = "true" if v else "false"
                elif isinstance(v, float):
                    text = repr(v)
                else:
                    text = str(v)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> RunConfig:
        run = dict(self.run)
        run["seed"] = int(seed)
        return RunConfig(self.mode, self.system, self.basis, self.beam, tuple(sorted(run.items())),
                         self.events)


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if ch in "\"'":
            quote = None if quote == ch else (ch if quote is None else quote)
        elif ch == "#" and quote is None:
            return line[:i]
    return line


def _parse_event(text: str) -> EventSpec:
    parts = _text(text).split()
    if len(parts) < 2:
        raise ValueError("event needs at least a time and a kind")
    time = _number(parts[0])
    kind = EVENT_ALIASES.get(parts[1])
    if kind is None:
        raise ValueError(f"unknown event kind {parts[1]!r}")
    args = parts[2:]
    if kind == "click_condition":
        if args:
            raise ValueError("click takes no arguments")
        return EventSpec(time, kind)
    if len(args) != 1:
        raise ValueError(f"{parts[1]} takes exactly one argument")
    if kind == "unitary_pulse":
        if args[0] not in ("swap", "shelve", "unshelve"):
            raise ValueError(f"unknown pulse {args[0]!r}")
        return EventSpec(time, kind, (args[0],))
    value = _number(args[0])
    return EventSpec(time, kind, (repr(value),))


def parse_config(text: str) -> RunConfig:
    """Parse and validate; every problem is collected and reported with its line number."""
    errors: list[str] = []
    values: dict[str, dict] = {name: {} for name in SCHEMA}
    lines_of: dict[tuple, int] = {}
    events: list[EventSpec] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {lineno}: malformed section header {line!r}")
                continue
            name = line[1:-1].strip()
            if name not in SECTION_ORDER:
                errors.append(f"line {lineno}: unknown section [{name}]")
                section = "?"
            else:
                section = name
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if section == "?":
            continue
        if section == "schedule":
            if key != "event":
                errors.append(f"line {lineno}: unknown key {key!r} in [schedule] (only 'event')")
                continue
            try:
                events.append(_parse_event(value))
            except ValueError as exc:
                errors.append(f"line {lineno}: {exc}")
            continue
        parser = SCHEMA[section].get(key)
        if parser is None:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        if (section, key) in lines_of:
            errors.append(f"line {lineno}: duplicate key {key!r} (first on line {lines_of[section, key]})")
            continue
        lines_of[section, key] = lineno
        try:
            values[section][key] = parser(value)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")

    mode = values["run"].pop("mode", None)
    if mode is None and not any("mode" in e for e in errors):
        errors.append("missing key 'mode' in [run]")
    cfg = None
    if mode is not None:
        cfg = RunConfig(mode, *(tuple(sorted(values[s].items())) for s in ("system", "basis", "beam", "run")),
                        tuple(events))
        errors.extend(_validate(cfg, lines_of))
    if errors:
        raise ConfigError(errors)
    return cfg


def _where(lines_of, section, key) -> str:
    n = lines_of.get((section, key))
    return f"line {n}: " if n else ""


def _validate(cfg: RunConfig, lines_of: dict) -> list[str]:
    """Mode requirements and model invariants."""
    errors = []
    try:
        params = cfg.params()
    except ValueError as exc:
        errors.append(f"[system]: {exc}")
        params = None
    b = cfg.section("basis")
    for key in ("n1_max", "n2_max"):
        if key in b and b[key] < 1:
            errors.append(f"{_where(lines_of, 'basis', key)}{key} must be at least 1")
    run = cfg.section("run")
    if "tau_max" in run and run["tau_max"] <= 0:
        errors.append(f"{_where(lines_of, 'run', 'tau_max')}tau_max must be positive")
    if "tau_points" in run and run["tau_points"] < 3:
        errors.append(f"{_where(lines_of, 'run', 'tau_points')}tau_points must be at least 3")
    if "prepare" in run and not 0 <= run["prepare"] <= 1:
        errors.append(f"{_where(lines_of, 'run', 'prepare')}prepare is a population in [0, 1]")
    if cfg.events and cfg.mode not in ("feedback", "qec"):
        errors.append(f"[schedule] is only used by feedback and qec modes, not {cfg.mode}")
    if cfg.mode == "feedback" and len(cfg.events) < 2:
        errors.append("mode feedback needs a schedule with at least 2 events")
    if cfg.mode == "qec":
        ps = {e.args[0] for e in cfg.events if e.kind == "weak_ionization"}
        if not ps:
            errors.append("mode qec needs at least one 'ionize p' event")
        elif len(ps) > 1:
            errors.append("mode qec needs a single ionisation strength p across events")
    if cfg.mode == "beam":
        if "n_traj" not in cfg.section("beam"):
            errors.append("missing key 'n_traj' in [beam] (required by mode beam)")
        elif cfg.section("beam")["n_traj"] < 1:
            errors.append(f"{_where(lines_of, 'beam', 'n_traj')}n_traj must be at least 1")
        try:
            cfg.beam_objects()
        except ValueError as exc:
            errors.append(f"[beam]: {exc}")
    if cfg.events and not errors:
        try:
            cfg.schedule().validate(cfg.make_basis())
        except ValueError as exc:
            errors.append(f"[schedule]: {exc}")
    if params is not None and cfg.mode in ("steady", "g2", "feedback", "qec") and params.drive <= 0:
        errors.append(f"{_where(lines_of, 'system', 'drive')}drive must be positive: with no drive "
                      "the steady state is not unique")
    return errors


# -- running ----------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _fringe_block(trace, predictability=None) -> dict:
    fm = fringe_metrics(trace, predictability=predictability)
    out = {
        "visibility": fm.visibility,
        "predictability": fm.predictability,
        "complementarity": fm.complementarity,
        "beat_frequency": fm.beat_frequency,
        "minima": fm.minima_positions[:6],
        "flat": fm.flat,
        "spectral_peak": spectral_peak(trace),
        "value_at_zero": float(trace.values[0]),
        "antibunching_end": antibunching_end(trace),
    }
    return out


def _shelf_decay_rates(trace, events) -> list[float]:
    """Log-linear fitted decay rate over each shelve ... unshelve interval."""
    rates = []
    t_on = None
    for e in events:
        if e.kind == "unitary_pulse" and e.args[0] == "shelve":
            t_on = e.time
        elif e.kind == "unitary_pulse" and e.args[0] == "unshelve" and t_on is not None:
            sel = (trace.tau >= t_on) & (trace.tau <= e.time) & (trace.values > 0)
            if sel.sum() >= 3:
                rates.append(-float(np.polyfit(trace.tau[sel], np.log(trace.values[sel]), 1)[0]))
            t_on = None
    return rates


def run(cfg: RunConfig, out_dir: Path) -> dict:
    """Compute the configured mode and write outputs into ``out_dir``; returns the metrics."""
    from .liouville import make_generator, pumping_rate_estimate, steady_state
    out_dir.mkdir(parents=True, exist_ok=True)
    params = cfg.params()
    comments = {"config_sha256": cfg.sha256, "mode": cfg.mode}
    if params.gamma_hz:
        comments["gamma_hz"] = repr(params.gamma_hz)
    metrics: dict = {"mode": cfg.mode, "config_sha256": cfg.sha256}
    (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    if cfg.mode == "steady":
        basis = cfg.make_basis()
        rho = steady_state(make_generator(params, basis))
        metrics["n_driven"] = mean_photon(rho, "driven")
        metrics["n_undriven"] = mean_photon(rho, "undriven")
        for level in basis.levels:
            metrics[f"population_{level.value}"] = rho.population(level)
        metrics["trace"] = rho.trace
        metrics["min_eigenvalue"] = rho.min_eigenvalue
        metrics["pumping_rate_estimate"] = pumping_rate_estimate(params)
    elif cfg.mode == "g2":
        trace = g2_fixed_coupling(params, cfg.make_basis(), cfg.tau_grid(),
                                  cfg.get("run", "pre_click", "steady"))
        trace.to_csv(out_dir / "trace.csv", stderr=False, comments=comments)
        metrics.update(_fringe_block(trace))
        metrics["flags"] = len(trace.metadata["flags"])
    elif cfg.mode in ("feedback", "qec"):
        from .control import QubitState, qec_protocol, run_conditional_schedule
        prep = cfg.get("run", "prepare")
        target = QubitState.from_population(prep) if prep is not None else None
        known = cfg.get("run", "outcomes", "unknown") == "known"
        res = run_conditional_schedule(params, cfg.make_basis(), cfg.schedule(), cfg.tau_grid(),
                                       outcomes_known=known,
                                       pre_click=cfg.get("run", "pre_click", "pumped"),
                                       prepare=target)
        res.trace.to_csv(out_dir / "trace.csv", stderr=False, comments=comments)
        metrics.update(_fringe_block(res.trace))
        metrics["flags"] = len(res.flags)
        if cfg.mode == "feedback":
            metrics["shelf_decay_rates"] = _shelf_decay_rates(res.trace, cfg.events)
        else:
            p = float(next(e.args[0] for e in cfg.events if e.kind == "weak_ionization"))
            qubit = target or QubitState.from_population(0.5)
            outcome = qec_protocol(qubit, p, outcomes_known=known)
            metrics["p"] = p
            metrics["recovery_probability"] = outcome.extras["recovery_probability"]
            metrics["recovered_fidelity"] = outcome.extras["recovered_fidelity"]
            metrics["surviving_weight"] = res.surviving_weight
            metrics["ion_population"] = res.ion_population
    elif cfg.mode == "beam":
        from .beam import ensemble_g2
        bcfg, geom = cfg.beam_objects()
        b = cfg.section("beam")
        er = ensemble_g2(bcfg, geom, params, b["n_traj"], cfg.tau_grid(), basis=cfg.make_basis(),
                         t_grid_size=b.get("t_grid_size", 32))
        er.trace.to_csv(out_dir / "trace.csv", stderr=False, comments=comments)
        er.trace.to_csv(out_dir / "trace_stderr.csv", stderr=True, comments=comments)
        metrics.update(_fringe_block(er.trace))
        metrics["peak"] = float(er.trace.values.max())
        metrics["baseline"] = float(er.trace.values[-1])
        metrics["baseline_stderr"] = float(er.trace.stderr[-1])
        metrics["n_traj"] = b["n_traj"]
        metrics["seed"] = bcfg.seed
        metrics["mean_transit_time"] = float(np.mean(er.transit_times))
        metrics["mean_intensity"] = er.mean_intensity
    text = "".join(f"{k}: {_fmt(v)}\n" for k, v in metrics.items())
    (out_dir / "metrics.txt").write_text(text, encoding="utf-8")
    return metrics


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="qbeats", description="Cavity quantum-beat simulations from a config file")
    ap.add_argument("--config", required=True, help="run configuration file")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    ap.add_argument("--check", action="store_true", help="validate the config and exit")
    ap.add_argument("--echo", action="store_true", help="print the normalised config and exit")
    args = ap.parse_args(argv)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"{args.config}: {msg}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.echo:
        sys.stdout.write(cfg.to_text())
        return 0
    if args.check:
        print(f"{args.config}: ok (mode {cfg.mode})")
        return 0
    out = args.out or cfg.get("run", "out")
    if not out:
        print("error: no output directory (use --out or [run] out)", file=sys.stderr)
        return 2
    from .liouville import DegenerateSteadyState
    try:
        metrics = run(cfg, Path(out))
    except DegenerateSteadyState as exc:
        print(f"error: steady state: {exc}", file=sys.stderr)
        return 3
    except NormalizationError as exc:
        print(f"error: correlation normalisation: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out}: " + ", ".join(f"{k}={_fmt(metrics[k])}" for k in list(metrics)[2:5]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

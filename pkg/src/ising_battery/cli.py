"""Command-line driver: ``ising-battery <command> [--config FILE] [--preset NAME] [--key value ...]``.

Configuration is flat ``key = value`` text; every key can also be given as a
flag.  Results go to a CSV file with a ``.meta.json`` sidecar holding the
resolved configuration.  Exit codes: 0 success, 2 configuration error,
3 capacity error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import numpy as np

from . import __version__
from .discharge import DischargeSetup, evolve_and_measure
from .ergotropy import first_peak_point, max_eta_point, tau_grid
from .quench import (
    INSTANT_DEPHASE,
    UNITARY,
    ChargingProtocol,
    MilburnIntegrationError,
    NoPlateauError,
    charge,
    coherence_trace,
    extract_timescales,
)
from .spectrum import CapacityError, ModelParams, level_table, lowest_levels

COMMANDS = ("spectrum", "charge", "scan-eta", "scan-tau", "coherence", "slow-charge", "discharge", "validate")
WORKERS_ENV = "ISING_BATTERY_WORKERS"

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _nu(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "unitary"):
        return UNITARY
    if t in ("0", "instant"):
        return INSTANT_DEPHASE
    v = float(t)
    if not v > 0:
        raise ValueError("nu must be positive, 'inf' or 'instant'")
    return v


def _couplings(text: str) -> tuple[int, ...]:
    t = text.strip().lower()
    if t == "both":
        return (1, -1)
    if t in ("1", "+1"):
        return (1,)
    if t == "-1":
        return (-1,)
    raise ValueError("J must be 1, -1 or both")


def _list(item):
    def parse(text: str):
        parts = [p for p in text.replace(",", " ").split() if p]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(p) for p in parts)

    return parse


def _choice(*options):
    def parse(text: str):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t

    return parse


KEYS = {
    "command": _choice(*COMMANDS),
    "N": int,
    "Ns": _list(int),
    "J": _couplings,
    "h0": float,
    "h1": float,
    "h1s": _list(float),
    "dh": float,
    "tau": float,
    "tau_charge": float,
    "nu": _nu,
    "nus": _list(_nu),
    "decay_nu": _nu,
    "axis": _choice("h0", "dh", "N", "nu"),
    "start": float,
    "stop": float,
    "step": float,
    "values": _list(float),
    "tau_step": float,
    "tau_max": float,
    "target": _choice("eta", "first-peak"),
    "levels": _choice("reachable", "full"),
    "count": int,
    "t_min": float,
    "t_max": float,
    "n_times": int,
    "plateau": _choice("log-slope", "median"),
    "omega": float,
    "lam": float,
    "dt": float,
    "convention": _choice("printed", "standard"),
    "output": str,
    "workers": int,
}

DEFAULTS = {
    "N": 13, "J": (1, -1), "h0": 0.1, "h1": 0.8, "tau": 1.0, "nu": UNITARY, "decay_nu": 1.0,
    "tau_step": 0.01, "tau_max": 50.0, "target": "eta", "levels": "reachable", "count": 64,
    "t_min": 1e-3, "n_times": 400, "plateau": "log-slope",
    "omega": 2.0, "lam": 0.02, "dt": 0.5, "convention": "printed",
}
COMMAND_DEFAULTS = {
    "coherence": {"t_max": 3000.0, "tau": 1.0, "nu": UNITARY, "J": (1,)},
    "discharge": {"t_max": 500.0, "N": 5, "h0": 0.02, "h1": 1.72},
    "validate": {"N": 5},
}


class Config(dict):
    """Resolved values plus where each one came from."""

    def __init__(self):
        super().__init__()
        self.origin: dict[str, str] = {}

    def set(self, key: str, raw: str, origin: str):
        if key not in KEYS:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        try:
            self[key] = KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value {raw!r} for {key!r}: {exc}") from None
        self.origin[key] = origin

    def where(self, key: str) -> str:
        return self.origin.get(key, "default")


def read_config_text(text: str, source: str, cfg: Config):
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg.set(key, value, f"{source}:{lineno}")


def preset_names() -> list[str]:
    files = resources.files("ising_battery") / "presets"
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    path = resources.files("ising_battery") / "presets" / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def scan_values(cfg: Config) -> list:
    if "values" in cfg:
        vals = list(cfg["values"])
    elif all(k in cfg for k in ("start", "stop", "step")):
        if cfg["step"] <= 0 or cfg["stop"] < cfg["start"]:
            raise ConfigError(f"{cfg.where('step')}: need step > 0 and stop >= start")
        n = int(math.floor((cfg["stop"] - cfg["start"]) / cfg["step"] + 1e-9)) + 1
        vals = [round(cfg["start"] + i * cfg["step"], 12) for i in range(n)]
    else:
        raise ConfigError("scan needs 'values' or 'start', 'stop' and 'step'")
    if cfg.get("axis") == "N":
        vals = [int(v) for v in vals]
    return vals


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


# ---- per-point workers (module level so they pickle) ----

def _eta_task(args):
    protocol, taus, value, target = args
    fn = max_eta_point if target == "eta" else first_peak_point
    row = fn(protocol, taus, value)
    return None if row is None else (row.value, row.J, row.tau, row.e_in, row.w, row.eta)


def _discharge_task(setup: DischargeSetup):
    tr = evolve_and_measure(setup)
    return (setup.N, setup.h1, setup.J, tr.battery.tau, tr.battery.e_in, tr.kappa_max, tr.t_kappa_max)


def _coherence_task(args):
    protocol, times, decay_nu, plateau = args
    tr = coherence_trace(protocol, times, decay_nu)
    try:
        t1, t2 = extract_timescales(tr, plateau=plateau)
    except NoPlateauError as exc:
        t1, t2 = exc.tau1, math.nan
    return tr, t1, t2


def pmap(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _protocol(cfg, J, **over) -> ChargingProtocol:
    h0 = over.get("h0", cfg["h0"])
    if "dh" in over:
        h1 = h0 + over["dh"]
    elif "dh" in cfg and "h1" not in cfg.origin:
        h1 = h0 + cfg["dh"]
    else:
        h1 = cfg["h1"]
    return ChargingProtocol(J, over.get("N", cfg["N"]), h0, h1, over.get("tau", cfg["tau"]), over.get("nu", cfg["nu"]))


# ---- commands: each returns (header, rows, extra metadata) ----

def cmd_spectrum(cfg, workers):
    rows = []
    for J in cfg["J"]:
        params = ModelParams(J, cfg["h0"], cfg["N"])
        if cfg["levels"] == "reachable":
            t = level_table(params)
            rows += [(J, int(m), e, e - t.energies[0]) for m, e in zip(t.masks, t.energies)]
        else:
            lad = lowest_levels(params, cfg["count"])
            rows += [(J, i, e, e - lad[0]) for i, e in enumerate(lad)]
    key = "mask" if cfg["levels"] == "reachable" else "index"
    return ["J", key, "energy", "excitation"], rows, {}


def cmd_charge(cfg, workers):
    rows = []
    for J in cfg["J"]:
        d = charge(_protocol(cfg, J))
        rows += [(J, int(m), e, x, p) for m, e, x, p in zip(d.masks, d.energies, d.excitations, d.probs)]
    return ["J", "mask", "energy", "excitation", "probability"], rows, {}


def _scan(cfg, workers, target):
    axis = cfg.get("axis")
    if axis is None:
        raise ConfigError("scan needs an 'axis'")
    taus = tau_grid(cfg["tau_step"], cfg["tau_max"])
    tasks = []
    for v in scan_values(cfg):
        for J in cfg["J"]:
            over = {"h0": v} if axis == "h0" else {"dh": v} if axis == "dh" else {"N": v} if axis == "N" else {"nu": _nu(str(v))}
            if axis == "h0":
                over["dh"] = cfg.get("dh", cfg["h1"] - cfg["h0"])
            tasks.append((_protocol(cfg, J, **over), taus, v, target))
    rows = [r for r in pmap(_eta_task, tasks, workers) if r is not None]
    return [axis, "J", "tau_star", "e_in", "w", "eta"], rows, {"maximized": "eta" if target == "eta" else "first peak of e_in"}


def cmd_scan_eta(cfg, workers):
    return _scan(cfg, workers, cfg["target"])


def cmd_scan_tau(cfg, workers):
    return _scan(cfg, workers, "first-peak")


def cmd_slow_charge(cfg, workers):
    taus = tau_grid(cfg["tau_step"], cfg["tau_max"])
    nus = cfg.get("nus", (cfg["nu"],))
    tasks = []
    for v in scan_values(cfg):
        for nu in nus:
            for J in cfg["J"]:
                tasks.append((_protocol(cfg, J, dh=v, nu=nu), taus, v, "eta"))
    out = pmap(_eta_task, tasks, workers)
    rows = [(r[0], t[0].nu, *r[1:]) for r, t in zip(out, tasks) if r is not None]
    return ["dh", "nu", "J", "tau_star", "e_in", "w", "eta"], rows, {}


def cmd_coherence(cfg, workers):
    times = np.concatenate([[0.0], np.geomspace(cfg["t_min"], cfg["t_max"], cfg["n_times"])])
    Ns = cfg.get("Ns", (cfg["N"],))
    tasks = []
    for N in Ns:
        for J in cfg["J"]:
            p = _protocol(cfg, J, N=N)
            tasks.append((p, p.tau + times, cfg["decay_nu"], cfg["plateau"]))
    rows, scales = [], []
    for (p, *_), (tr, t1, t2) in zip(tasks, pmap(_coherence_task, tasks, workers)):
        rows += [(p.N, p.J, t - p.tau, c) for t, c in zip(tr.times, tr.values)]
        scales.append({"N": p.N, "J": p.J, "tau1": t1, "tau2": t2})
    return ["N", "J", "t", "c_re"], rows, {"timescales": scales}


def cmd_discharge(cfg, workers):
    setups = [
        DischargeSetup(N, J, cfg["h0"], h1, cfg.get("tau_charge"), cfg["omega"], cfg["lam"], cfg["t_max"], cfg["dt"], cfg["convention"])
        for N in cfg.get("Ns", (cfg["N"],))
        for h1 in cfg.get("h1s", (cfg["h1"],))
        for J in cfg["J"]
    ]
    rows = pmap(_discharge_task, setups, workers)
    return ["N", "h1", "J", "tau_star", "e_in", "kappa_max", "t_kappa_max"], rows, {}


def cmd_validate(cfg, workers):
    from .validation import run_checks

    rows = run_checks(cfg["N"])
    failed = [r for r in rows if not r[3]]
    return ["check", "max_error", "tolerance", "passed"], rows, {"failed": len(failed)}


HANDLERS = {
    "spectrum": cmd_spectrum,
    "charge": cmd_charge,
    "scan-eta": cmd_scan_eta,
    "scan-tau": cmd_scan_tau,
    "coherence": cmd_coherence,
    "slow-charge": cmd_slow_charge,
    "discharge": cmd_discharge,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ising-battery", description="Ising-ring quantum battery simulations")
    ap.add_argument("command", nargs="?", choices=COMMANDS)
    ap.add_argument("--config", action="append", default=[], help="key = value file (may repeat)")
    ap.add_argument("--preset", help="named figure preset, e.g. fig4")
    ap.add_argument("--list-presets", action="store_true")
    for key in KEYS:
        if key != "command":
            ap.add_argument(f"--{key}", dest=f"key_{key}", metavar="VALUE")
    return ap


def resolve(argv) -> Config:
    args = build_parser().parse_args(argv)
    cfg = Config()
    if args.preset:
        read_config_text(preset_text(args.preset), f"preset {args.preset}", cfg)
    for path in args.config:
        try:
            text = open(path, encoding="utf-8").read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        read_config_text(text, path, cfg)
    if args.command:
        cfg.set("command", args.command, "command line")
    for key in KEYS:
        raw = getattr(args, f"key_{key}", None)
        if raw is not None:
            cfg.set(key, raw, f"--{key}")
    if "command" not in cfg:
        raise ConfigError("no command given (positional argument or 'command' key)")
    for k, v in {**DEFAULTS, **COMMAND_DEFAULTS.get(cfg["command"], {})}.items():
        if k not in cfg:
            cfg[k] = v
    cfg.setdefault("t_max", 500.0)
    cfg.setdefault("output", f"{cfg['command']}.csv")
    if "workers" not in cfg:
        env = os.environ.get(WORKERS_ENV)
        try:
            cfg["workers"] = int(env) if env else (os.cpu_count() or 1)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return cfg


def check_physics(cfg: Config):
    """Reject out-of-range physical fields before any work starts."""
    try:
        for N in cfg.get("Ns", (cfg["N"],)):
            for J in cfg["J"]:
                ModelParams(J, cfg["h0"], N)
        if not 0 <= cfg["h0"] < 1 and cfg["command"] != "spectrum":
            raise ValueError("h0 must lie in [0, 1)")
        if cfg["tau_step"] <= 0 or cfg["tau_max"] < cfg["tau_step"]:
            raise ValueError("need 0 < tau_step <= tau_max")
    except ValueError as exc:
        keys = [k for k in ("N", "Ns", "J", "h0", "tau_step", "tau_max") if k in cfg.origin]
        where = "; ".join(f"{k} from {cfg.where(k)}" for k in keys) or "defaults"
        raise ConfigError(f"{exc} ({where})") from None


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return _plain(v.item())
    return v


def write_outputs(cfg: Config, header, rows, extra):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    out = cfg["output"]
    if out == "-":
        sys.stdout.write(buf.getvalue())
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    meta = {
        "command": cfg["command"],
        "version": __version__,
        "config": {k: _plain(v) for k, v in sorted(cfg.items()) if k not in ("workers", "output")},
        "columns": list(header),
        "rows": len(rows),
        **_plain(extra),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    with open(out + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=False)
        fh.write("\n")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        if "--list-presets" in argv:
            print("\n".join(preset_names()))
            return EXIT_OK
        cfg = resolve(argv)
        check_physics(cfg)
        header, rows, extra = HANDLERS[cfg["command"]](cfg, cfg["workers"])
        write_outputs(cfg, header, rows, extra)
        if cfg["command"] == "validate" and extra.get("failed"):
            print(f"validation: {extra['failed']} check(s) failed", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (MilburnIntegrationError, FloatingPointError, NoPlateauError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

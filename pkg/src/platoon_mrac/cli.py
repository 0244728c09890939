"""``platoon`` command: simulate, certify and sweep scenarios.

Exit codes are a stable contract:

0
    success
1
    input error (missing file, malformed JSON, invalid scenario or flags)
2
    runtime monitor violation (barrier breach or nonpositive spacing)
3
    certificate failure

CSV and JSON outputs are deterministic; only ``manifest.json`` carries
timestamps and wall-clock durations.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import ZBAR_MODES, audit_trajectory, certify
from .engine import DEFAULT_DECIMATION, SimulationAbort, run
from .model import (
    ScenarioError,
    VehicleParams,
    default_scenario,
    load_scenario,
    scenario_to_dict,
    validate_scenario,
)
from .numerics import NumericsError

LOG = logging.getLogger("platoon_mrac")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MONITOR = 2
EXIT_CERTIFICATE = 3

SWEEP_PARAMS = ("gamma", "c", "dt", "heterogeneity-scale")


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(x):
    # JSON has no NaN/inf; render them as strings
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _resolve_scenario(path):
    if path is None:
        LOG.info("no scenario file given; using the built-in default scenario")
        return default_scenario()
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        raise InputError(str(exc)) from exc


def _require_valid(scenario):
    violations = validate_scenario(scenario)
    for v in violations:
        if v.severity == "warning":
            LOG.warning("%s", v)
    errors = [v for v in violations if v.severity == "error"]
    if errors:
        raise InputError("invalid scenario: " + "; ".join(str(v) for v in errors))


class _Manifest:
    def __init__(self, command, scenario_path, args):
        self.doc = {
            "tool": "platoon",
            "version": __version__,
            "command": command,
            "scenario_path": None if scenario_path is None else str(scenario_path),
            "arguments": args,
            "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": {},
        }
        self._t0 = time.perf_counter()

    def finish(self, path, exit_code, scenario=None):
        if scenario is not None:
            self.doc["resolved_scenario"] = scenario_to_dict(scenario)
        self.doc["exit_code"] = exit_code
        self.doc["wall_clock_s"] = round(time.perf_counter() - self._t0, 6)
        atomic_write(path, dump_json(_clean(self.doc)))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def simulate_scenario(scenario):
    """Run one scenario and audit it. Returns ``(trajectory, audit_doc, exit_code)``."""
    abort = None
    try:
        traj = run(scenario, decimate=DEFAULT_DECIMATION, check=False)
    except SimulationAbort as exc:
        abort = exc
        traj = exc.trajectory
    audit = audit_trajectory(traj)
    doc = {"completed": abort is None, "t_final": float(traj.t[-1]), **audit.to_dict()}
    if abort is not None:
        doc["abort"] = {"message": str(abort), "vehicle": abort.vehicle, "t": abort.t,
                        "norm": abort.norm}
    # a breach means the barrier monitor tripped; spacing must stay positive throughout
    ok = abort is None and audit.collision_free
    return traj, _clean(doc), EXIT_OK if ok else EXIT_MONITOR


def cmd_simulate(args):
    out = Path(args.out)
    manifest = _Manifest("simulate", args.scenario, {"out": str(out)})
    scenario = None
    try:
        scenario = _resolve_scenario(args.scenario)
        _require_valid(scenario)
    except InputError as exc:
        LOG.error("%s", exc)
        manifest.finish(out / "manifest.json", EXIT_INPUT, scenario)
        return EXIT_INPUT
    traj, audit, code = simulate_scenario(scenario)
    csv_path, audit_path = out / "trajectory.csv", out / "audit.json"
    atomic_write(csv_path, traj.to_csv())
    atomic_write(audit_path, dump_json(audit))
    manifest.doc["outputs"] = {"trajectory": str(csv_path), "audit": str(audit_path)}
    manifest.finish(out / "manifest.json", code, scenario)
    if code == EXIT_MONITOR:
        if not audit["completed"]:
            LOG.error("runtime monitor: %s", audit["abort"]["message"])
        else:
            LOG.error("runtime monitor: spacing became nonpositive (min %s)", audit["min_spacing"])
    return code


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------

def cmd_certify(args):
    out = Path(args.out)
    if out.suffix.lower() != ".json":
        out = out / "certificate.json"
    manifest = _Manifest("certify", args.scenario, {"out": str(out), "mode": args.mode})
    scenario = None
    try:
        scenario = _resolve_scenario(args.scenario)
    except InputError as exc:
        LOG.error("%s", exc)
        manifest.finish(out.parent / "manifest.json", EXIT_INPUT)
        return EXIT_INPUT
    try:
        report = certify(scenario, mode=args.mode)
    except NumericsError as exc:
        LOG.error("certificate computation failed: %s", exc)
        manifest.finish(out.parent / "manifest.json", EXIT_CERTIFICATE, scenario)
        return EXIT_CERTIFICATE
    atomic_write(out, report.to_json())
    sys.stdout.write(report.render_text())
    code = EXIT_OK if report.passed else EXIT_CERTIFICATE
    for reason in report.failure_reasons():
        LOG.error("%s", reason)
    manifest.doc["outputs"] = {"certificate": str(out)}
    manifest.finish(out.parent / "manifest.json", code, scenario)
    return code


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def parse_values(text):
    if text is None or not text.strip():
        raise InputError("--values must list at least one value")
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"--values: {exc}") from exc
    if not values:
        raise InputError("--values must list at least one value")
    if not all(np.isfinite(values)):
        raise InputError("--values must be finite")
    return values


def scaled_heterogeneity(vehicles, scale, tau_bar):
    """Shrink or stretch each ``(tau, lam)`` about the nominal ``(tau_bar, 1)``."""
    return tuple(
        VehicleParams(tau_bar + scale * (v.tau - tau_bar), 1.0 + scale * (v.lam - 1.0),
                      v.length, v.standstill)
        for v in vehicles
    )


def sweep_variant(scenario, param, value):
    if param == "gamma":
        if not value > 0:
            raise InputError(f"gamma must be positive, got {value}")
        return scenario.replace(gains=scenario.gains.with_gamma(value))
    if param == "c":
        return scenario.replace(gains=_replace_gain(scenario.gains, c=value))
    if param == "dt":
        return scenario.replace(dt=value)
    if param == "heterogeneity-scale":
        vehicles = scaled_heterogeneity(scenario.vehicles, value, scenario.gains.tau_bar)
        return scenario.replace(vehicles=vehicles)
    raise InputError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")


def _replace_gain(gains, **changes):
    from dataclasses import replace
    return replace(gains, **changes)


def _sweep_worker(item):
    value, scenario = item
    _, audit, code = simulate_scenario(scenario)
    ratios = [r for r in audit["max_xtilde_ratio"]]
    return {
        "value": value,
        "max_xtilde_ratio": max(ratios),
        "min_spacing": min(audit["min_spacing"]),
        "final_max_abs_e": max(audit["final_abs_e"]),
        "exit_code": code,
    }


SUMMARY_FIELDS = ("value", "max_xtilde_ratio", "min_spacing", "final_max_abs_e", "exit_code")


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in rows:
        w.writerow([f"{r['value']:.9g}", f"{r['max_xtilde_ratio']:.9g}", f"{r['min_spacing']:.9g}",
                    f"{r['final_max_abs_e']:.9g}", r["exit_code"]])
    return buf.getvalue()


def cmd_sweep(args):
    out = Path(args.out)
    manifest = _Manifest("sweep", args.scenario,
                         {"out": str(out), "param": args.param, "values": args.values})
    scenario = None
    try:
        if args.param not in SWEEP_PARAMS:
            raise InputError(f"unknown sweep parameter {args.param!r}; choose from {SWEEP_PARAMS}")
        values = parse_values(args.values)
        scenario = _resolve_scenario(args.scenario)
        variants = [sweep_variant(scenario, args.param, v) for v in values]
        for v, s in zip(values, variants):
            try:
                _require_valid(s)
            except InputError as exc:
                raise InputError(f"{args.param}={v:g}: {exc}") from exc
    except InputError as exc:
        LOG.error("%s", exc)
        manifest.finish(out / "manifest.json", EXIT_INPUT, scenario)
        return EXIT_INPUT
    workers = max(1, min(len(values), args.jobs or os.cpu_count() or 1))
    items = list(zip(values, variants))
    if workers == 1:
        rows = [_sweep_worker(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, items))
    path = out / "summary.csv"
    atomic_write(path, summary_csv(rows))
    code = EXIT_MONITOR if any(r["exit_code"] == EXIT_MONITOR for r in rows) else EXIT_OK
    manifest.doc["outputs"] = {"summary": str(path)}
    manifest.doc["workers"] = workers
    manifest.finish(out / "manifest.json", code, scenario)
    return code


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="platoon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--scenario", type=Path, default=None,
                        help="scenario JSON (omitted keys take built-in defaults)")
        sp.add_argument("--out", default=out_default, help="output path")
        sp.add_argument("--seed", type=int, default=None,
                        help="reserved; the simulation uses no randomness")

    s = sub.add_parser("simulate", help="run one scenario and audit it")
    common(s, "out")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("certify", help="evaluate the static certificates")
    common(c, "certificate.json")
    c.add_argument("--mode", choices=ZBAR_MODES, default="sound", help="Z_bar variant")
    c.set_defaults(func=cmd_certify)

    w = sub.add_parser("sweep", help="simulate one variant per parameter value")
    common(w, "sweep")
    w.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    w.add_argument("--values", required=True, help="comma-separated list")
    w.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPUs)")
    w.set_defaults(func=cmd_sweep)
    return p


def _configure_logging():
    level = os.environ.get("PLATOON_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 is reserved for monitor violations
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: ``dpibr simulate|modes|bode|design|impact|prony``.

Every command reads structured-text (YAML) documents, writes CSV files with
17 significant digits and a ``manifest.json`` describing the run.  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import SystemConfig, bundled_path, load_system, read_yaml
from .errors import ConfigError, DPError, MissingChannel

log = logging.getLogger("dpibr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
BUNDLED = "bundled:"


# ----------------------------------------------------------------------------
# helpers

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; floats use 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def resolve_document(spec: str | None, default: str | None = None) -> Path:
    """``bundled:NAME`` names a packaged document; anything else is a path."""
    spec = spec or default
    if spec is None:
        raise ConfigError("no document given")
    if spec.startswith(BUNDLED):
        name = spec[len(BUNDLED):]
        if not name.endswith(".yaml"):
            name += ".yaml"
        path = bundled_path(name)
        if not path.exists():
            raise ConfigError(f"no bundled document {name!r}", spec)
        return path
    return Path(spec)


def load_config(args) -> SystemConfig:
    cfg = load_system(resolve_document(args.config, BUNDLED + "two_area"))
    if getattr(args, "pll_bw", None) is not None:
        cfg = cfg.with_pll_bandwidth(args.pll_bw)
    return cfg


def build_model(cfg: SystemConfig):
    from .system import assemble, initialize
    model = assemble(cfg)
    initialize(model)
    return model


def write_manifest(out_dir, command, cfg, args, extra=None, started=None):
    manifest = {
        "tool": "dpibr", "version": __version__, "command": command,
        "argv": [str(a) for a in sys.argv[1:]],
        "config_hash": cfg.digest() if cfg is not None else None,
        "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
        "options": {k: v for k, v in vars(args).items() if k != "func"},
    }
    manifest.update(extra or {})
    if started is not None:
        manifest["wall_time_s"] = time.perf_counter() - started
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_weight(doc):
    from .control import FilterSpec, identity_filter, paper_weight
    if doc is None or doc == "paper":
        return paper_weight()
    if doc == "identity":
        return identity_filter()
    if isinstance(doc, dict) and "num" in doc and "den" in doc:
        try:
            return FilterSpec(tuple(map(float, doc["num"])), tuple(map(float, doc["den"])))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "design.weight") from None
    raise ConfigError("weight must be 'paper', 'identity' or {num, den}", "design.weight")


# ----------------------------------------------------------------------------
# commands

def cmd_simulate(args):
    from .control import Controller
    from .simulate import Scenario, simulate
    started = time.perf_counter()
    cfg = load_config(args)
    scenario = Scenario.load(resolve_document(args.scenario))
    controllers = [Controller.load(p) for p in args.controller or []]
    model = build_model(cfg)
    traj = simulate(model, scenario, controllers=controllers, rtol=args.rtol, atol=args.atol)
    out = _out_dir(args)
    traj.to_csv(out / "trajectory.csv")
    traj.write_events(out / "events.csv")
    write_manifest(out, "simulate", cfg, args, {
        "scenario": scenario.name, "seeds": scenario.seeds(),
        "controllers": [c.ibr for c in controllers],
        "solver": {k: v for k, v in traj.stats.items() if k != "wall_time_s"},
        "kcl_max": traj.kcl_max}, started)
    print(f"{len(traj.t)} samples, {traj.stats.get('steps')} steps -> {out / 'trajectory.csv'}")
    return EXIT_OK


def _linear_model(args, cfg, inputs=None, outputs=None):
    from .analysis import linearize
    return linearize(build_model(cfg), inputs=inputs, outputs=outputs)


def cmd_modes(args):
    from .analysis import eigenanalysis, find_mode
    started = time.perf_counter()
    cfg = load_config(args)
    lm = _linear_model(args, cfg, inputs=[], outputs=[])
    modes = eigenanalysis(lm)
    sso = find_mode(modes, (args.f_min, args.f_max), names=lm.state_names) if cfg.ibrs else None
    rows = []
    for i, m in enumerate(modes):
        if m.eigenvalue.imag < 0:
            continue
        if args.max_freq is not None and m.frequency > args.max_freq:
            continue
        tops = ";".join(f"{n}={w:.3f}" for n, w in m.top_states(lm.state_names, args.top))
        rows.append([i, m.eigenvalue.real, m.eigenvalue.imag, m.frequency, 100 * m.damping,
                     int(m is sso), tops])
    header = ["index", "real", "imag", "freq_hz", "damping_pct", "sso", "top_states"]
    if args.out:
        out = _out_dir(args)
        write_csv(out / "modes.csv", header, rows)
        write_manifest(out, "modes", cfg, args, {"n_states": lm.n_states}, started)
    if sso is not None:
        print(f"SSO mode: f = {sso.frequency:.4f} Hz, zeta = {100 * sso.damping:.3f} %  "
              f"[{', '.join(n for n, _ in sso.top_states(lm.state_names, 4))}]")
    else:
        print(f"no oscillatory IBR mode in {args.f_min:g}-{args.f_max:g} Hz")
    if not args.out:
        for r in rows:
            if r[3] >= args.f_min and r[3] <= args.f_max:
                print(f"  {r[3]:9.4f} Hz  {r[4]:8.3f} %  {r[6]}")
    return EXIT_OK


def cmd_bode(args):
    from .analysis import frequency_response
    started = time.perf_counter()
    if args.points < 1:
        raise ConfigError("need at least one frequency point", "--points")
    if not 0 < args.f_min < args.f_max:
        raise ConfigError("need 0 < f_min < f_max", "--f-min/--f-max")
    cfg = load_config(args)
    lm = _linear_model(args, cfg, inputs=args.input, outputs=[args.output])
    f = np.logspace(np.log10(args.f_min), np.log10(args.f_max), args.points)
    G = frequency_response(lm, 2 * np.pi * f)[:, 0, :]
    header = ["freq_hz", "omega"]
    for name in args.input:
        header += [f"mag:{name}", f"phase_deg:{name}"]
    rows = []
    for k in range(f.size):
        row = [f[k], 2 * np.pi * f[k]]
        for j in range(len(args.input)):
            row += [abs(G[k, j]), np.degrees(np.angle(G[k, j]))]
        rows.append(row)
    out = _out_dir(args)
    write_csv(out / "bode.csv", header, rows)
    write_manifest(out, "bode", cfg, args, {}, started)
    print(f"{f.size} points -> {out / 'bode.csv'}")
    return EXIT_OK


def cmd_design(args):
    from .analysis import eigenanalysis
    from .control import sequential_design, sso_mode
    started = time.perf_counter()
    cfg = load_config(args)
    spec = read_yaml(resolve_document(args.spec)) if args.spec else {}
    if not isinstance(spec, dict):
        raise ConfigError("design spec must be a mapping", "design")
    ibrs = list(spec.get("ibrs", [ib["name"] for ib in reversed(cfg.ibrs)]))
    schedule = spec.get("ts_schedule", [45.0, 15.0][:len(ibrs)])
    u_ch, y_ch = spec.get("u_channel", "u_q"), spec.get("y_channel", "vmag")
    f_range = tuple(spec.get("f_range", (4.0, 8.0)))
    W = _parse_weight(spec.get("weight", "paper"))
    outputs = [f"{y_ch}:{n}" for n in ibrs]
    if cfg.tie_line:
        outputs.append("tie_power")
    lm = _linear_model(args, cfg, inputs=[f"{u_ch}:{n}" for n in ibrs], outputs=outputs)
    try:
        kwargs = dict(washout_T=float(spec.get("washout_T", 2.0)), order=int(spec.get("order", 15)),
                      f_range=f_range, u_channel=u_ch, y_channel=y_ch, strict=True)
        for key in ("rho", "input_disturbance", "sensor_noise"):
            if key in spec:
                kwargs[key] = float(spec[key])
        ctrls, reports, closed = sequential_design(lm, ibrs, schedule, W, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), "design") from None
    out = _out_dir(args)
    for c in ctrls:
        c.save(out / f"K_{c.ibr}.yaml")
    open_sso = sso_mode(lm, f_range)
    rows = [[0, "open-loop", "", "", "", "", "", "", open_sso.frequency, 100 * open_sso.damping]]
    for r in reports:
        rows.append([r.stage, r.ibr, r.reduced_order, r.truncation_bound, r.gamma, r.tzw_peak,
                     r.settling.bound, r.settling.worst_settling,
                     r.sso_after.frequency, 100 * r.sso_after.damping])
    write_csv(out / "design_report.csv",
              ["stage", "ibr", "reduced_order", "truncation_bound", "gamma", "tzw_peak_grid",
               "ts_bound", "ts_worst", "sso_freq_hz", "sso_damping_pct"], rows)
    mrows = [[m.eigenvalue.real, m.eigenvalue.imag, m.frequency, 100 * m.damping]
             for m in eigenanalysis(closed) if m.eigenvalue.imag >= 0 and m.frequency <= 30]
    write_csv(out / "closed_loop_modes.csv", ["real", "imag", "freq_hz", "damping_pct"], mrows)
    write_manifest(out, "design", cfg, args, {"spec": spec}, started)
    print(f"open loop SSO: {open_sso.frequency:.4f} Hz, {100 * open_sso.damping:.3f} %")
    for r in reports:
        print(f"stage {r.stage} ({r.ibr}): gamma = {r.gamma:.5g}, SSO {r.sso_after.frequency:.4f} Hz "
              f"{100 * r.sso_after.damping:.3f} %, {r.settling}")
    return EXIT_OK


def cmd_impact(args):
    from .analysis import eigenanalysis, find_mode, locational_impact
    started = time.perf_counter()
    cfg = load_config(args)
    if not cfg.dc_loads:
        raise ConfigError("configuration has no DC loads", "dc_loads")
    inputs = [f"p_dc:{d['name']}" for d in cfg.dc_loads]
    buses = [d["bus"] for d in cfg.dc_loads]
    lm = _linear_model(args, cfg, inputs=inputs, outputs=[args.output])
    if args.freq is not None:
        f_mode = float(args.freq)
    else:
        mode = find_mode(eigenanalysis(lm), (args.f_min, args.f_max), names=lm.state_names)
        if mode is None:
            raise MissingChannel(f"no oscillatory mode in {args.f_min:g}-{args.f_max:g} Hz")
        f_mode = mode.frequency
    rows = locational_impact(lm, inputs, args.output, 2 * np.pi * f_mode, buses=buses)
    out = _out_dir(args)
    write_csv(out / "impact.csv", ["rank", "load", "bus", "magnitude", "freq_hz"],
              [[r.rank, r.input.split(":", 1)[1], r.bus, r.magnitude, f_mode] for r in rows])
    write_manifest(out, "impact", cfg, args, {"mode_freq_hz": f_mode}, started)
    print(f"|G| from DC-load power to {args.output} at {f_mode:.4f} Hz:")
    for r in rows:
        print(f"  {r.rank}. bus {r.bus} ({r.input}): {r.magnitude:.6g}")
    return EXIT_OK


def cmd_prony(args):
    from .analysis import Prony
    from .simulate import Trajectory
    started = time.perf_counter()
    traj = Trajectory.from_csv(args.trajectory)
    y = traj[args.channel]
    est = Prony(order=args.order, fs=args.fs, window=tuple(args.window) if args.window else None,
                f_range=(args.f_min, args.f_max))
    try:
        est.fit(traj.t, y)
    except ValueError as exc:
        raise ConfigError(str(exc), "prony") from None
    rows = [[q.frequency, 100 * q.damping, q.amplitude, q.phase, q.energy] for q in est.components_]
    out = _out_dir(args)
    write_csv(out / "prony.csv", ["freq_hz", "damping_pct", "amplitude", "phase_rad", "energy"], rows)
    write_manifest(out, "prony", None, args, {}, started)
    dom = est.dominant()
    if dom is None:
        print(f"no oscillatory component in {args.f_min:g}-{args.f_max:g} Hz")
    else:
        print(f"dominant: f = {dom.frequency:.4f} Hz, zeta = {100 * dom.damping:.3f} %")
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpibr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dpibr {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default=None,
                        help="system YAML, or bundled:two_area (default)")
        sp.add_argument("--pll-bw", type=float, default=None,
                        help="override every IBR's PLL bandwidth (Hz)")
        sp.add_argument("--out", required=out_required, default=None, help="output directory")

    s = sub.add_parser("simulate", help="nonlinear time-domain simulation")
    common(s)
    s.add_argument("--scenario", required=True, help="scenario YAML or bundled:NAME")
    s.add_argument("--controller", action="append", help="controller YAML (repeatable)")
    s.add_argument("--rtol", type=float, default=1e-4)
    s.add_argument("--atol", type=float, default=1e-6)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("modes", help="eigenvalue table at the equilibrium")
    common(s, out_required=False)
    s.add_argument("--f-min", type=float, default=4.0)
    s.add_argument("--f-max", type=float, default=8.0)
    s.add_argument("--max-freq", type=float, default=None, help="drop modes above this (Hz)")
    s.add_argument("--top", type=int, default=4, help="participating states listed per mode")
    s.set_defaults(func=cmd_modes)

    s = sub.add_parser("bode", help="frequency response magnitude/phase")
    common(s)
    s.add_argument("--input", action="append", required=True, help="input channel (repeatable)")
    s.add_argument("--output", required=True, help="output channel")
    s.add_argument("--f-min", type=float, default=0.1)
    s.add_argument("--f-max", type=float, default=30.0)
    s.add_argument("--points", type=int, default=400)
    s.set_defaults(func=cmd_bode)

    s = sub.add_parser("design", help="sequential decentralised H-infinity design")
    common(s)
    s.add_argument("--spec", default=None, help="design spec YAML (defaults: paper pipeline)")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("impact", help="rank DC-load buses by |G| at the SSO frequency")
    common(s)
    s.add_argument("--output", default="tie_power")
    s.add_argument("--freq", type=float, default=None, help="evaluate at this frequency (Hz)")
    s.add_argument("--f-min", type=float, default=4.0)
    s.add_argument("--f-max", type=float, default=8.0)
    s.set_defaults(func=cmd_impact)

    s = sub.add_parser("prony", help="Prony fit of a recorded channel")
    s.add_argument("--trajectory", required=True, help="trajectory CSV from 'simulate'")
    s.add_argument("--channel", required=True)
    s.add_argument("--window", type=float, nargs=2, default=None, metavar=("T0", "T1"))
    s.add_argument("--order", type=int, default=20)
    s.add_argument("--fs", type=float, default=200.0)
    s.add_argument("--f-min", type=float, default=0.1)
    s.add_argument("--f-max", type=float, default=30.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prony)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MissingChannel, yaml.YAMLError, FileNotFoundError) as exc:
        print(f"dpibr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DPError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"dpibr: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

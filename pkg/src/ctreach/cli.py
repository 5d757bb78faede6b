"""Command-line front end.

Exit codes: 0 verified / success, 1 violated or undetermined, 2 usage or
input error (bad arguments, config, file format, hash mismatch),
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from ._core import BACKEND
from .config import ConfigError, RunConfig
from .controller import DEG, ControllerError, NeuralNet, evaluate, load_network, surrogate_path
from .geom import GeomError
from .graph import GraphFormatError, build_log, cat, load_graph, save_graph
from .plant import State, simulate
from .properties import (
    cell_grid, frequency_sweep, parse_mode, report_csv, sweep_csv, verify_p1, verify_p2,
)
from .queries import export_queries, falsify_graph, summary_csv
from .render import write_heatmaps

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _progress(label: str):
    state = {"t": time.perf_counter(), "last": 0.0}

    def cb(done, total):
        now = time.perf_counter()
        if now - state["last"] > 5.0 or done == total:
            state["last"] = now
            _log(f"{label}: {done}/{total} cells ({now - state['t']:.0f} s)")
    return cb


def _config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None), getattr(args, "set", None) or [])


# -- subcommands ------------------------------------------------------------

def cmd_build_graph(args) -> int:
    cfg = _config(args)
    if args.mode:
        cfg.values["run"]["mode"] = args.mode
        cfg.validate()
    cs = cfg.control_source()
    part = cfg.partition()
    out = Path(args.out) if args.out else cfg.out_dir() / "graph.cag"
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    g = cat(cs, part, cfg.cat_config(), cfg.plant(), jobs=args.jobs, progress=_progress("build-graph"))
    save_graph(g, out)
    log = out.with_suffix(out.suffix + ".log")
    log.write_text(build_log(g), encoding="utf-8")
    n_unres = sum("unresolved" in r.flags for r in g.records)
    print(f"wrote {out} ({part.n_cells} cells, {g.n_edges()} edges, {n_unres} unresolved, "
          f"{time.perf_counter() - t0:.1f} s, kernels: {BACKEND})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    g = load_graph(args.graph)
    if args.config is not None and args.check_hash:
        expected = cfg.control_source().digest()
        if expected != g.controller_hash:
            raise GraphFormatError("graph was built for a different controller than the config names")
    part = g.partition
    out = Path(args.out) if args.out else Path(args.graph).with_suffix("").parent / f"{Path(args.graph).stem}_{args.property}"
    out.mkdir(parents=True, exist_ok=True)
    if args.property == "p1":
        (pl, ph), (tl, th) = cfg.p2_region()
        initial = part.cells_in_region((pl, ph), (tl, th)) if args.initial_region else None
        rep = verify_p1(g, cfg.f("properties", "runway_halfwidth"), initial,
                        cfg.f("properties", "p1_min_percent"))
        write_heatmaps(rep.grid, part, out / "p1_verdict", f"P1 verified-safe cells ({rep.percentage:.1f}%)")
    else:
        p, t = cfg.p2_region()
        C0 = part.cells_in_region(p, t)
        thr = cfg.f("properties", "p2_threshold")
        rep = verify_p2(g, C0, cfg.i("properties", "p2_max_steps"), thr if thr > 0 else None)
        for k, S in enumerate(rep.steps):
            grid = 1.0 - 0.75 * cell_grid(part, S)
            write_heatmaps(grid, part, out / f"p2_step_{k:03d}", f"P2 reach set after {k} s")
        write_heatmaps(1.0 - 0.75 * rep.grid, part, out / "p2_final", "P2 converged set")
    (out / "report.csv").write_text(report_csv(rep, part), encoding="utf-8")
    (out / "report.txt").write_text(
        rep.summary() + f"\ngraph {args.graph}\ncontroller_hash {g.controller_hash}\nconfig_hash {g.config_hash}\n",
        encoding="utf-8",
    )
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = _config(args)
    modes = [m.strip() for m in args.modes.split(",")] if args.modes else cfg.modes()
    for m in modes:
        try:
            parse_mode(m)
        except ValueError as exc:
            raise UsageError(f"bad mode {m!r}: {exc}") from None
    cs = cfg.control_source()
    part = cfg.partition()
    out = Path(args.out) if args.out else cfg.out_dir() / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    hw = cfg.f("properties", "runway_halfwidth")

    def done(row):
        msg = f"{row.mode}: " + (f"{row.safe_percent:.2f}% safe" if row.error == "" else f"error {row.error}")
        _log(f"{msg} ({row.wall_s:.0f} s)")

    rows = frequency_sweep(cs, part, modes, cfg.cat_config(), cfg.plant(), hw, jobs=args.jobs,
                           keep_graphs=True, progress=done)
    for token, row in zip(modes, rows):
        if row.graph is None:
            continue
        stem = row.mode.replace("+", "_plus_")
        save_graph(row.graph, out / f"graph_{stem}.cag")
        write_heatmaps(row.report.grid, part, out / f"p1_{stem}", f"P1 safe cells, {row.mode} ({row.safe_percent:.1f}%)")
    text = sweep_csv(rows)
    (out / "sweep.csv").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK if all(r.error == "" for r in rows) else EXIT_FAIL


def cmd_export_queries(args) -> int:
    g = load_graph(args.graph)
    net = load_network(surrogate_path() if args.network == "builtin" else args.network)
    cs = NeuralNet(net)
    n = export_queries(g, cs, args.out)
    print(f"wrote {n} query files and skip_network.json to {args.out}")
    if args.falsify:
        rows = falsify_graph(g, cs, n=args.falsify, seed=args.seed)
        Path(args.out, "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
        bad = sum(v == "falsified" for *_, v in rows)
        print(f"falsify: {bad} of {len(rows)} queries falsified")
        return EXIT_FAIL if bad else EXIT_OK
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    cs = cfg.control_source()
    part = cfg.partition()
    s0 = State(args.p, math.radians(args.theta_deg))
    if not part.domain.contains_point(tuple(s0)):
        raise UsageError(f"start state ({args.p}, {args.theta_deg} deg) outside the partition domain")
    latent = None
    if getattr(cs, "latent_box", None) is not None:
        latent = cs.latent_box.center
    tr = simulate(s0, cs, args.duration, cfg.f("abstraction", "sim_substep"), cfg.plant(),
                  hold=1.0 / args.frequency if args.frequency else None, latent=latent,
                  domain=part.domain)
    lim = cfg.plant().phi_limit
    x_end = tr.states[-1:].copy()
    x_end[:, 1] *= DEG
    phi_end = float(np.clip(evaluate(cs, x_end, None if latent is None else latent[None, :])[0] / DEG, -lim, lim))
    phis = np.append(tr.phi, phi_end)
    out = Path(args.out) if args.out else None
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["t", "p", "theta", "phi"])
        for t, (p, th), ph in zip(tr.times, tr.states, phis):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(th)), repr(float(ph))])
    finally:
        if out:
            fh.close()
    if out:
        f = tr.final
        print(f"wrote {out}: {len(tr)} rows, final p={f.p:.6f} m theta={math.degrees(f.theta):.6f} deg"
              + (" (saturated)" if tr.saturated else "") + (" (left domain)" if tr.left_domain else ""))
    return EXIT_OK


def cmd_render(args) -> int:
    g = load_graph(args.graph)
    part = g.partition
    if args.what == "p1":
        rep = verify_p1(g, args.runway_halfwidth)
        values, title = rep.grid.astype(float), f"P1 verified-safe cells ({rep.percentage:.1f}%)"
    elif args.what == "uwidth":
        w = np.array([r.U[1] - r.U[0] for r in g.records]).reshape(part.bins)
        values, title = 1.0 - w / max(w.max(), 1e-300), f"U width (deg), black = {w.max():.4g}"
    elif args.what == "retries":
        k = np.array([r.retries for r in g.records], dtype=float).reshape(part.bins)
        values, title = 1.0 - k / max(k.max(), 1.0), f"bf retries, black = {int(k.max())}"
    else:  # unresolved
        u = np.array(["unresolved" in r.flags for r in g.records], dtype=float).reshape(part.bins)
        values, title = 1.0 - u, "unresolved cells (black)"
    stem = Path(args.out) if args.out else Path(args.graph).with_name(f"{Path(args.graph).stem}_{args.what}")
    svg, pg = write_heatmaps(values, part, stem, title)
    print(f"wrote {svg} and {pg}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_config(p):
    p.add_argument("--config", "-c", help="INI run configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctreach", description="Closed-loop reachability for the taxiing benchmark.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="compute the cell abstraction graph")
    _add_config(p)
    p.add_argument("--out", "-o", help="graph file (default OUT_DIR/graph.cag)")
    p.add_argument("--mode", help="'continuous' or a control frequency in Hz (overrides run.mode)")
    p.add_argument("--jobs", "-j", type=int, default=1)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("verify", help="check P1 or P2 on a graph")
    _add_config(p)
    p.add_argument("--graph", "-g", required=True)
    p.add_argument("--property", choices=("p1", "p2"), required=True)
    p.add_argument("--out", "-o", help="report directory")
    p.add_argument("--initial-region", action="store_true",
                   help="P1: also require every cell of the P2 initial region to be safe")
    p.add_argument("--check-hash", action="store_true", help="refuse a graph built for another controller")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="P1 safe share across control frequencies")
    _add_config(p)
    p.add_argument("--modes", help="comma list, e.g. 1,2,10,100,inf,inf+U")
    p.add_argument("--out", "-o")
    p.add_argument("--jobs", "-j", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-queries", help="write conformance queries for external verifiers")
    p.add_argument("--graph", "-g", required=True)
    p.add_argument("--network", "-n", default="builtin")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--falsify", type=int, default=0, metavar="N", help="also falsify each query with N samples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_queries)

    p = sub.add_parser("simulate", help="simulate one closed-loop trajectory to CSV")
    _add_config(p)
    p.add_argument("--p", type=float, required=True, help="initial crosstrack position (m)")
    p.add_argument("--theta-deg", type=float, required=True, help="initial heading error (deg)")
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--frequency", type=float, default=None, help="zero-order hold at this rate (Hz)")
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="heatmap of a graph quantity")
    p.add_argument("--graph", "-g", required=True)
    p.add_argument("--what", choices=("p1", "uwidth", "retries", "unresolved"), default="p1")
    p.add_argument("--runway-halfwidth", type=float, default=10.0)
    p.add_argument("--out", "-o", help="output stem; .svg and .pgm are appended")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) < 1:
        _log("error: --jobs must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, GraphFormatError, ControllerError, GeomError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        _log("interrupted")
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

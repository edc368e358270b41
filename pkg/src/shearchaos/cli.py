"""Command-line front end: ``shearchaos {sweep,lyap,foliation,snapshot,regime}``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .lyapunov import (protocol_kicked, protocol_osc_kicked, protocol_osc_sde, protocol_poisson,
                       protocol_sde)
from .models import NoiseConfig, OscParams, ShearParams
from .sweep import (HELP_DEFAULTS, ConfigError, SweepConfig, default_threads, parse_config,
                    run_sweep, write_csv, _osc, _shear)

log = logging.getLogger("shearchaos")


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _load(args, purpose="sweep") -> SweepConfig:
    cfg = parse_config(Path(args.config).read_text(), purpose)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _floats(text: str, sep: str = ",") -> list[float]:
    return [float(x) for x in text.split(sep) if x.strip()]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    n = cfg.n_cells
    log.info("%s: %d cells, %d threads", cfg.model, n, cfg.threads or default_threads())

    def progress(i, row):
        status = f"FAILED {row.error}" if row.failed else f"upper={row.lyap_upper:.4g}"
        log.info("cell %d/%d %s (%.1fs)", i + 1, n, status, row.wall_time)

    rows = run_sweep(cfg, progress=progress)
    with _output(cfg.out) as fh:
        write_csv(rows, fh)
    failed = sum(r.failed for r in rows)
    if failed:
        log.error("%d of %d cells failed", failed, n)
    return 1 if failed else 0


def cmd_lyap(args) -> int:
    cfg = _load(args)
    cells = cfg.cells()
    if len(cells) != 1:
        log.warning("config has %d cells; using the first", len(cells))
    cell = cells[0]
    pr = cfg.protocol
    seed = cfg.master_seed
    with _output(cfg.out) as fh:
        fh.write(f"# model={cfg.model} seed={seed} params={cell}\n")
        if cfg.model in ("kicked_shear", "poisson_shear") or (
                cfg.model == "osc_pair" and cell.get("forcing") == "kicks"):
            if cfg.model == "kicked_shear":
                res = protocol_kicked(_shear(cell), seed, 0, int(pr["runs"]), int(pr["iterates"]),
                                      pr["excursion_threshold"])
            elif cfg.model == "poisson_shear":
                res = protocol_poisson(_shear(cell), seed, 0, int(pr["runs"]), int(pr["kicks"]),
                                       pr["excursion_threshold"], pr["excursion_time_fraction"])
            else:
                res = protocol_osc_kicked(_osc(cell), cell["A"], cell["T"], seed, 0,
                                          int(pr["runs"]), int(pr["iterates"]), pr["osc_dt"])
            for i, r in enumerate(res.runs):
                fh.write(f"run {i}: lyap={r.value:.9g} per_time={r.per_time:.9g} "
                         f"excursion_fraction={r.excursion_fraction:.4g} flag={r.excursion_flag}\n")
            fh.write(f"upper={res.upper:.9g} lower={res.lower:.9g} per_time={res.per_time:.9g} "
                     f"flagged={res.flagged}\n")
        else:
            if cfg.model == "sde_shear":
                est = protocol_sde(_shear(cell), NoiseConfig(cell["mode"], cell["a"], pr["dt"]),
                                   pr["horizon"], seed, 0, int(pr["realizations"]), int(pr["ics"]),
                                   int(pr["renorm_every"]), pr["excursion_threshold"],
                                   pr["excursion_time_fraction"])
            else:
                est = protocol_osc_sde(_osc(cell), cell["a"], pr["horizon"], seed, 0, pr["dt"],
                                       int(pr["realizations"]), int(pr["ics"]),
                                       int(pr["renorm_every"]))
            for i, v in enumerate(est.runs):
                fh.write(f"run {i}: lyap={v:.9g}\n")
            fh.write(f"mean={est.value:.9g} stderr={est.stderr:.3g} "
                     f"excursion_fraction={est.excursion_fraction:.4g} flag={est.excursion_flag}\n")
    return 0


def _flow_params(cfg: SweepConfig):
    if cfg.model == "osc_pair":
        return _osc(cfg.params)
    return ShearParams(cfg.params["sigma"], cfg.params["lambda"], cfg.params.get("A", 0.0),
                       cfg.params.get("T", 1.0))


def cmd_foliation(args) -> int:
    cfg = _load(args, "foliation")
    sec = cfg.sections["foliation"]
    p = _flow_params(cfg)
    region = _floats(sec.get("region", "0,1,0,1"))
    t = float(sec.get("t", 5.0))
    grid = tuple(int(g) for g in _floats(sec.get("grid", "41,41")))
    dt = float(sec.get("dt", 1e-3))
    seeds = [tuple(_floats(s, ":")) for s in sec.get("seeds", "").split(";") if s.strip()]
    if not seeds:
        x0, x1, y0, y1 = region
        seeds = [(x0 + (x1 - x0) * f, 0.5 * (y0 + y1)) for f in np.linspace(0.1, 0.9, 9)]
    field = analysis.foliation_field(region, t, p, grid, dt)
    curves = analysis.trace_stable_foliation(region, t, p, grid, seeds,
                                             float(sec.get("step", 0.005)),
                                             int(float(sec.get("max_steps", 4000))), dt, field)
    header = [f"model={cfg.model} t={t} region={region} grid={grid}",
              f"params={cfg.params}",
              f"degenerate_nodes={int(field.degenerate.sum())} "
              f"northeast_fraction={field.northeast_fraction():.4f}"]
    with _output(cfg.out) as fh:
        analysis.write_polylines(fh, curves, header)
    if args.field:
        with open(args.field, "w") as fh:
            analysis.write_field(fh, field, header)
    return 0


def cmd_snapshot(args) -> int:
    cfg = _load(args, "snapshot")
    sec = cfg.sections["snapshot"]
    p = _flow_params(cfg)
    A = float(sec.get("A", cfg.params.get("A", 1.5)))
    times = _floats(sec.get("times", "0,2.5,3.5"))
    frame = sec.get("frame", "moving")
    if frame not in ("moving", "fixed"):
        raise ConfigError("snapshot.frame must be moving or fixed")
    snaps = analysis.kicked_snapshots(p, A, times, refine_tol=float(sec.get("refine_tol", 0.01)),
                                      moving_frame=frame == "moving",
                                      max_vertices=int(float(sec.get("max_vertices", 50_000))),
                                      dt=float(sec.get("dt", 1e-3)))
    with _output(cfg.out) as fh:
        fh.write(f"# model={cfg.model} A={A} params={cfg.params}\n")
        fh.write(f"# frame={frame}; reference = kick-invariant point on the initial curve\n")
        fh.write("# curve ids: 2k = orbit image at times[k], 2k+1 = kicked image at times[k]\n")
        for k, s in enumerate(snaps):
            fh.write(f"# time[{k}]={s.time} reference=({s.reference[0]:.10g}, "
                     f"{s.reference[1]:.10g})\n")
        curves = [c for s in snaps for c in (s.orbit, s.kicked)]
        analysis.write_polylines(fh, curves)
    return 0


def cmd_regime(args) -> int:
    prof = analysis.CircleMapProfile(args.drift, args.gain)
    regime = analysis.classify_regime(prof, args.threshold, args.radius)
    stat = analysis.expansion_statistic(prof, args.radius)
    with _output(args.out) as fh:
        fh.write(f"gain={args.gain:.9g} regime={regime} "
                 f"min_derivative={1.0 - 2.0 * np.pi * args.gain:.9g} "
                 f"expansion_statistic={stat:.6g}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shearchaos", description="Shear-induced chaos simulations.",
        epilog=HELP_DEFAULTS, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output path ('-' for stdout)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $SHEARCHAOS_THREADS or CPU count)")

    for name, fn, desc in (("sweep", cmd_sweep, "evaluate a parameter grid, write CSV"),
                           ("lyap", cmd_lyap, "single cell with a per-run log"),
                           ("foliation", cmd_foliation, "trace finite-time stable foliations"),
                           ("snapshot", cmd_snapshot, "kicked-curve evolution snapshots")):
        p = sub.add_parser(name, help=desc, epilog=HELP_DEFAULTS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("config")
        common(p)
        if name == "foliation":
            p.add_argument("--field", default=None, help="also write the node field table here")
        p.set_defaults(func=fn)

    p = sub.add_parser("regime", help="classify the singular-limit circle map")
    p.add_argument("gain", type=float, help="(sigma / lambda) * A")
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--radius", type=float, default=0.05)
    common(p)
    p.set_defaults(func=cmd_regime)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"shearchaos: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

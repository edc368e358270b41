"""Parameter sweeps: config parsing, grid evaluation and CSV output.

Config files are flat ``key=value`` lines. A ``[section]`` header prefixes
the keys that follow with ``section.``, except ``[params]`` and
``[general]``, whose keys stay top-level. ``#`` starts a comment.

Example::

    model=kicked_shear
    sigma=2
    lambda=1
    A=1.5
    sweep.T=2:20:0.25
    seed=42
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lyapunov import (protocol_kicked, protocol_osc_kicked, protocol_osc_sde, protocol_poisson,
                       protocol_sde)
from .models import NOISE_MODES, NoiseConfig, OscParams, ShearParams

log = logging.getLogger(__name__)

MODELS = ("kicked_shear", "poisson_shear", "sde_shear", "osc_pair")

NUMERIC_PARAMS = ("sigma", "lambda", "A", "T", "a", "a_ff", "a_fb", "nu1", "nu2")

REQUIRED = {
    "kicked_shear": ("sigma", "lambda", "A", "T"),
    "poisson_shear": ("sigma", "lambda", "A", "T"),
    "sde_shear": ("sigma", "lambda", "a"),
    "osc_pair": ("a_ff", "a_fb"),
}

PARAM_DEFAULTS = {"osc_pair": {"nu1": 1.0, "nu2": 1.1}}

PROTOCOL_DEFAULTS = {
    "kicked_shear": {"runs": 10, "iterates": 400_000, "excursion_threshold": 0.15},
    "poisson_shear": {"runs": 10, "kicks": 100_000, "excursion_threshold": 0.1,
                      "excursion_time_fraction": 0.2},
    "sde_shear": {"horizon": 5000.0, "dt": 1e-5, "realizations": 3, "ics": 4,
                  "renorm_every": 1000, "excursion_threshold": 0.3,
                  "excursion_time_fraction": 0.2},
    "osc_pair": {"runs": 10, "iterates": 1000, "osc_dt": 0.01, "horizon": 1000.0, "dt": 1e-5,
                 "realizations": 3, "ics": 4, "renorm_every": 100},
}

SECTION_KEYS = {
    "protocol": {"runs", "iterates", "kicks", "horizon", "dt", "osc_dt", "realizations", "ics",
                 "renorm_every", "excursion_threshold", "excursion_time_fraction"},
    "foliation": {"region", "t", "grid", "seeds", "step", "max_steps", "dt"},
    "snapshot": {"A", "times", "refine_tol", "frame", "max_vertices", "dt", "start"},
}

CSV_COLUMNS = ("model", "sigma", "lambda", "A", "T", "a", "a_ff", "a_fb", "nu1", "nu2",
               "lyap_upper", "lyap_lower", "lyap_per_time", "excursion_fraction",
               "excursion_flag", "n_steps", "seed")

HELP_DEFAULTS = """\
config keys (key=value; [section] headers prefix keys with 'section.'):
  model            one of kicked_shear, poisson_shear, sde_shear, osc_pair
  seed             master seed (default 0)
  sigma lambda A T a a_ff a_fb nu1 nu2   model parameters
  mode             sde_shear noise: degenerate (default), isotropic, additive
  forcing          osc_pair forcing: noise (default) or kicks
  sweep.<param>    start:stop:step, inclusive; one or two axes
  protocol.*       runs=10 iterates=400000 (kicked_shear) / 1000 (osc_pair kicks)
                   kicks=100000 (poisson_shear) horizon=5000 (sde) / 1000 (osc noise)
                   dt=1e-5 osc_dt=0.01 realizations=3 ics=4
                   renorm_every=1000 (sde) / 100 (osc noise)
                   excursion_threshold=0.15 kicked / 0.1 poisson / 0.3 sde
                   excursion_time_fraction=0.2
  foliation.*      region=x0,x1,y0,y1 t=5 grid=41,41 seeds=x:y;x:y step=0.005
  snapshot.*       A=1.5 times=0,2.5,3.5 refine_tol=0.01 frame=moving|fixed
"""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    step: float

    def values(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return [round(self.start + i * self.step, 12) for i in range(n + 1)]


@dataclass
class SweepConfig:
    model: str
    params: dict
    axes: list
    protocol: dict
    master_seed: int = 0
    out: str | None = None
    threads: int | None = None
    sections: dict = field(default_factory=dict)

    def cells(self) -> list[dict]:
        grids = [a.values() for a in self.axes]
        out = []
        for combo in itertools.product(*grids):
            cell = dict(self.params)
            for a, v in zip(self.axes, combo):
                cell[a.name] = v
            out.append(cell)
        return out

    @property
    def n_cells(self) -> int:
        return math.prod(len(a.values()) for a in self.axes) if self.axes else 1


def _number(value: str, key: str, lineno: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects a number, got {value!r}") from None


def _parse_axis(name: str, value: str, lineno: int) -> Axis:
    parts = value.split(":")
    if len(parts) != 3:
        raise ConfigError(f"line {lineno}: sweep.{name} must be start:stop:step")
    start, stop, step = (_number(x, f"sweep.{name}", lineno) for x in parts)
    if step <= 0:
        raise ConfigError(f"line {lineno}: sweep.{name} step must be > 0")
    if stop < start:
        raise ConfigError(f"line {lineno}: sweep.{name} stop < start")
    return Axis(name, start, stop, step)


def parse_config(text: str, purpose: str = "sweep") -> SweepConfig:
    """Parse a configuration; raises ConfigError on any problem.

    With ``purpose`` other than ``"sweep"`` (the foliation and snapshot
    commands) only the parameters of the unforced flow are required.
    """
    raw: dict[str, tuple[str, int]] = {}
    prefix = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            prefix = "" if name in ("params", "general", "") else name + "."
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        raw[prefix + key] = (value, lineno)

    if "model" not in raw:
        raise ConfigError("missing required key: model")
    model = raw["model"][0]
    if model not in MODELS:
        raise ConfigError(f"line {raw['model'][1]}: unknown model {model!r}; expected one of {MODELS}")

    params: dict = dict(PARAM_DEFAULTS.get(model, {}))
    axes: list[Axis] = []
    protocol = dict(PROTOCOL_DEFAULTS[model])
    sections: dict = {"foliation": {}, "snapshot": {}}
    seed, out, threads = 0, None, None
    for key, (value, lineno) in raw.items():
        if key in NUMERIC_PARAMS:
            params[key] = _number(value, key, lineno)
        elif key.startswith("sweep."):
            name = key[len("sweep."):]
            if name not in NUMERIC_PARAMS:
                raise ConfigError(f"line {lineno}: sweep axis over unknown parameter {name!r}")
            if any(a.name == name for a in axes):
                raise ConfigError(f"line {lineno}: duplicate axis {name!r}")
            axes.append(_parse_axis(name, value, lineno))
        elif key == "model":
            continue
        elif key == "seed":
            seed = int(_number(value, key, lineno))
        elif key == "out":
            out = value
        elif key == "threads":
            threads = int(_number(value, key, lineno))
        elif key == "mode":
            if value not in NOISE_MODES:
                raise ConfigError(f"line {lineno}: unknown noise mode {value!r}")
            params["mode"] = value
        elif key == "forcing":
            if value not in ("noise", "kicks"):
                raise ConfigError(f"line {lineno}: forcing must be noise or kicks")
            params["forcing"] = value
        elif key == "labels_as_printed":
            params["labels_as_printed"] = value.lower() in ("1", "true", "yes")
        elif "." in key and key.split(".", 1)[0] in SECTION_KEYS:
            sec, name = key.split(".", 1)
            if name not in SECTION_KEYS[sec]:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if sec == "protocol":
                protocol[name] = _number(value, key, lineno)
            else:
                sections[sec][name] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if len(axes) > 2:
        raise ConfigError("at most two sweep axes are supported")

    if purpose == "sweep":
        required = list(REQUIRED[model])
        if model == "osc_pair":
            required += ["A", "T"] if params.get("forcing", "noise") == "kicks" else ["a"]
    else:
        required = ["a_ff", "a_fb"] if model == "osc_pair" else ["sigma", "lambda"]
    swept = {a.name for a in axes}
    for key in required:
        if key not in params and key not in swept:
            raise ConfigError(f"missing required key: {key}")
    if model == "sde_shear":
        params.setdefault("mode", "degenerate")
    if model == "osc_pair":
        params.setdefault("forcing", "noise")
    for key in swept:
        params.pop(key, None)
    return SweepConfig(model, params, axes, protocol, seed, out, threads, sections)


# --------------------------------------------------------------------------

@dataclass
class SweepResultRow:
    model: str
    params: dict
    lyap_upper: float = float("nan")
    lyap_lower: float = float("nan")
    lyap_per_time: float = float("nan")
    excursion_fraction: float | None = None
    excursion_flag: bool | None = None
    n_steps: int = 0
    seed: int = 0
    wall_time: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _shear(cell: dict) -> ShearParams:
    return ShearParams(cell["sigma"], cell["lambda"], cell.get("A", 0.0), cell.get("T", 1.0))


def _osc(cell: dict) -> OscParams:
    return OscParams(cell.get("nu1", 1.0), cell.get("nu2", 1.1), cell["a_ff"], cell["a_fb"],
                     labels_as_printed=cell.get("labels_as_printed", False))


def evaluate_cell(cfg: SweepConfig, cell: dict, index: int) -> SweepResultRow:
    """Run the model's protocol on one grid cell."""
    pr = cfg.protocol
    row = SweepResultRow(cfg.model, {k: cell.get(k) for k in NUMERIC_PARAMS}, seed=cfg.master_seed)
    t0 = time.perf_counter()
    seed = cfg.master_seed
    if cfg.model == "kicked_shear":
        p = _shear(cell)
        res = protocol_kicked(p, seed, index, int(pr["runs"]), int(pr["iterates"]),
                              pr["excursion_threshold"])
        row.lyap_upper, row.lyap_lower, row.lyap_per_time = res.upper, res.lower, res.per_time
        row.excursion_fraction, row.excursion_flag = res.excursion_fraction, res.flagged
        row.n_steps = res.n_steps
    elif cfg.model == "poisson_shear":
        p = _shear(cell)
        res = protocol_poisson(p, seed, index, int(pr["runs"]), int(pr["kicks"]),
                               pr["excursion_threshold"], pr["excursion_time_fraction"])
        row.lyap_upper, row.lyap_lower, row.lyap_per_time = res.upper, res.lower, res.per_time
        row.excursion_fraction, row.excursion_flag = res.excursion_fraction, res.flagged
        row.n_steps = res.n_steps
    elif cfg.model == "sde_shear":
        p = _shear(cell)
        n = NoiseConfig(cell["mode"], cell["a"], pr["dt"])
        est = protocol_sde(p, n, pr["horizon"], seed, index, int(pr["realizations"]),
                           int(pr["ics"]), int(pr["renorm_every"]), pr["excursion_threshold"],
                           pr["excursion_time_fraction"])
        row.lyap_upper = row.lyap_lower = row.lyap_per_time = est.value
        row.excursion_fraction, row.excursion_flag = est.excursion_fraction, est.excursion_flag
        row.n_steps = est.n_steps
    else:
        p = _osc(cell)
        if cell.get("forcing", "noise") == "kicks":
            res = protocol_osc_kicked(p, cell["A"], cell["T"], seed, index, int(pr["runs"]),
                                      int(pr["iterates"]), pr["osc_dt"])
            row.lyap_upper, row.lyap_lower, row.lyap_per_time = res.upper, res.lower, res.per_time
            row.n_steps = res.n_steps
        else:
            est = protocol_osc_sde(p, cell["a"], pr["horizon"], seed, index, pr["dt"],
                                   int(pr["realizations"]), int(pr["ics"]),
                                   int(pr["renorm_every"]))
            row.lyap_upper = row.lyap_lower = row.lyap_per_time = est.value
            row.n_steps = est.n_steps
    row.wall_time = time.perf_counter() - t0
    return row


def default_threads() -> int:
    env = os.environ.get("SHEARCHAOS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sweep(cfg: SweepConfig, threads: int | None = None, progress=None) -> list[SweepResultRow]:
    """Evaluate every grid cell; rows come back in grid order.

    A failing cell yields a row with ``error`` set; the sweep carries on.
    """
    cells = cfg.cells()
    n_threads = threads or cfg.threads or default_threads()

    def task(i):
        try:
            row = evaluate_cell(cfg, cells[i], i)
        except Exception as exc:  # recorded per cell, never aborts the sweep
            log.warning("cell %d failed: %s", i, exc)
            row = SweepResultRow(cfg.model, {k: cells[i].get(k) for k in NUMERIC_PARAMS},
                                 seed=cfg.master_seed, error=f"{type(exc).__name__}: {exc}")
        if progress is not None:
            progress(i, row)
        return row

    if n_threads <= 1 or len(cells) <= 1:
        return [task(i) for i in range(len(cells))]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(task, range(len(cells))))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def row_values(row: SweepResultRow) -> list[str]:
    vals = {"model": row.model, **{k: row.params.get(k) for k in NUMERIC_PARAMS},
            "lyap_upper": row.lyap_upper, "lyap_lower": row.lyap_lower,
            "lyap_per_time": row.lyap_per_time, "excursion_fraction": row.excursion_fraction,
            "excursion_flag": row.excursion_flag, "n_steps": row.n_steps, "seed": row.seed}
    if row.failed:
        for k in ("lyap_upper", "lyap_lower", "lyap_per_time"):
            vals[k] = float("nan")
    return [vals["model"]] + [_fmt(vals[k]) for k in CSV_COLUMNS[1:]]


def emit_csv(rows, path) -> None:
    """Write rows under the fixed header; unused columns stay empty.

    Failed cells carry ``nan`` in the exponent columns.
    """
    try:
        with open(path, "w", newline="") as fh:
            write_csv(rows, fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(row_values(row))


def read_csv(path) -> list[dict]:
    """Read an emitted table back; numeric cells become floats, empty cells None."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            parsed = {}
            for k, v in rec.items():
                if k == "model":
                    parsed[k] = v
                elif v == "":
                    parsed[k] = None
                elif v in ("true", "false"):
                    parsed[k] = v == "true"
                else:
                    parsed[k] = float(v)
            out.append(parsed)
    return out

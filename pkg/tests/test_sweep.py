import csv
import io
import math

import pytest

from shearchaos.sweep import (CSV_COLUMNS, ConfigError, SweepResultRow, emit_csv, parse_config,
                              read_csv, run_sweep, write_csv)

ONSET = "model=kicked_shear\nsigma=2\nlambda=1\nA=1.5\nsweep.T=2:20:0.25\nseed=42"


def test_onset_config_has_73_cells():
    cfg = parse_config(ONSET)
    assert cfg.model == "kicked_shear" and cfg.master_seed == 42
    assert cfg.n_cells == 73 == len(cfg.cells())
    ts = [c["T"] for c in cfg.cells()]
    assert ts[0] == 2.0 and ts[-1] == 20.0 and ts[1] == 2.25


def test_two_axes_and_sections():
    cfg = parse_config("""
        # a two-axis degenerate-noise grid
        model = sde_shear
        [params]
        sigma = 3
        mode = isotropic
        [sweep]
        lambda = 0.5:1.5:0.5
        a = 0.1:0.3:0.1
        [protocol]
        horizon = 10
        dt = 1e-3
    """)
    assert cfg.n_cells == 9
    assert cfg.cells()[0] == {"sigma": 3.0, "mode": "isotropic", "lambda": 0.5, "a": 0.1}
    assert cfg.protocol["horizon"] == 10 and cfg.protocol["dt"] == 1e-3


@pytest.mark.parametrize("text, message", [
    ("model=kicked_shear\nsigma=2\nA=1\nT=1", "missing required key: lambda"),
    (ONSET.replace("2:20:0.25", "5:2:1"), "stop < start"),
    (ONSET.replace("2:20:0.25", "2:5:0"), "step must be > 0"),
    ("model=wobbly\nsigma=1", "unknown model"),
    (ONSET + "\nsweep.omega=1:2:1", "unknown parameter 'omega'"),
    (ONSET + "\ncolour=blue", "line 7: unknown key 'colour'"),
    (ONSET + "\njust some words", "line 7: expected key=value"),
    (ONSET + "\nprotocol.speed=3", "unknown key 'protocol.speed'"),
    ("sigma=2", "missing required key: model"),
    (ONSET + "\nsigma=fast", "line 7: sigma expects a number"),
])
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message.replace("(", r"\(")):
        parse_config(text)


def test_osc_requirements_depend_on_forcing():
    with pytest.raises(ConfigError, match="missing required key: a"):
        parse_config("model=osc_pair\na_ff=1\na_fb=1.47")
    cfg = parse_config("model=osc_pair\na_ff=1\na_fb=1.47\nforcing=kicks\nA=1\nsweep.T=1:2:0.5")
    assert cfg.n_cells == 3 and cfg.params["nu2"] == 1.1
    # the geometric subcommands only need the flow
    parse_config("model=osc_pair\na_ff=1\na_fb=1.47", purpose="foliation")


def test_unforced_sweep_rows():
    cfg = parse_config("model=kicked_shear\nsigma=2\nlambda=1\nA=0\nsweep.T=1:4:1\n"
                       "protocol.iterates=20000")
    rows = run_sweep(cfg, threads=1)
    assert [r.params["T"] for r in rows] == [1.0, 2.0, 3.0, 4.0]
    for r in rows:
        assert abs(r.lyap_upper) < 1e-3 and abs(r.lyap_lower) < 1e-3
        assert r.excursion_flag is False and not r.failed


def _csv_text(rows):
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def test_byte_identical_and_thread_independent():
    text = ("model=sde_shear\nsigma=2\nlambda=1\nsweep.a=0.1:0.4:0.1\nprotocol.horizon=5\n"
            "protocol.dt=1e-3\nseed=3")
    one = _csv_text(run_sweep(parse_config(text), threads=1))
    again = _csv_text(run_sweep(parse_config(text), threads=1))
    many = _csv_text(run_sweep(parse_config(text), threads=3))
    assert one == again == many
    assert one != _csv_text(run_sweep(parse_config(text.replace("seed=3", "seed=4")), threads=1))


def test_poisson_and_osc_cells():
    rows = run_sweep(parse_config("model=poisson_shear\nsigma=2\nlambda=1\nA=1\nT=2\n"
                                  "protocol.kicks=2000\nprotocol.runs=3"))
    assert rows[0].lyap_upper == rows[0].lyap_lower and rows[0].n_steps == 2000
    rows = run_sweep(parse_config("model=osc_pair\na_ff=1\na_fb=1.47\nforcing=kicks\nA=1\nT=3\n"
                                  "protocol.iterates=20"))
    assert rows[0].lyap_lower <= rows[0].lyap_upper
    assert rows[0].excursion_fraction is None


def test_failed_cells_are_recorded(tmp_path):
    # lambda=0 is invalid for the shear flow: the cell fails, the sweep goes on
    cfg = parse_config("model=kicked_shear\nsigma=2\nsweep.lambda=0:1:1\nA=0\nT=1\n"
                       "protocol.iterates=100")
    rows = run_sweep(cfg, threads=1)
    assert rows[0].failed and "lam" in rows[0].error
    assert not rows[1].failed
    emit_csv(rows, tmp_path / "out.csv")
    back = read_csv(tmp_path / "out.csv")
    assert math.isnan(back[0]["lyap_upper"]) and not math.isnan(back[1]["lyap_upper"])


def test_empty_rows_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    emit_csv([], path)
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_one_row_round_trip(tmp_path):
    row = SweepResultRow("kicked_shear", {"sigma": 2.0, "lambda": 1.0, "A": 1.5, "T": 3.25},
                         lyap_upper=math.pi, lyap_lower=-1 / 3, lyap_per_time=2.0 / 7,
                         excursion_fraction=0.125, excursion_flag=True, n_steps=400000, seed=42)
    path = tmp_path / "one.csv"
    emit_csv([row], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    recs = list(csv.reader(lines))
    assert len(recs[1]) == len(recs[0]) == len(CSV_COLUMNS)
    back = read_csv(path)[0]
    assert back["lyap_upper"] == float(f"{math.pi:.9g}")
    assert back["lyap_lower"] == float(f"{-1 / 3:.9g}")
    assert back["a"] is None and back["a_ff"] is None
    assert back["excursion_flag"] is True and back["n_steps"] == 400000
    assert back["model"] == "kicked_shear"


def test_emit_csv_reports_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        emit_csv([], tmp_path / "nope" / "x.csv")

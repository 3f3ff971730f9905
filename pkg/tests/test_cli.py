import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flab import lab
from flab.cli import main
from flab.errors import ConfigError
from flab.incidence import CSV_COLUMNS

TWO_ENDS = {
    "version": 1,
    "experiment": "check_two_ends_furstenberg_2d",
    "mode": "assert",
    "seed": 7,
    "params": {"generator": "random", "n": 2, "count": 20, "k": 6, "lam_exp": 0.25, "eps1": 0.5, "eps2": 0.2},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


# -- seeds ---------------------------------------------------------------------


def test_point_seed_matches_seedsequence():
    ss = np.random.SeedSequence(123, spawn_key=(4,))
    assert lab.point_seed(123, 4) == int(ss.generate_state(1, dtype=np.uint64)[0])


@given(st.integers(0, 2**64 - 1), st.integers(0, 1000), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_point_seeds_are_pure_and_distinct(master, i, j):
    assert lab.point_seed(master, i) == lab.point_seed(master, i)
    if i != j:
        assert lab.point_seed(master, i) != lab.point_seed(master, j)


def test_polylog_slack():
    assert lab.polylog_slack(2.0**-8, 0.0) == 0.0
    d = 2.0**-16
    assert lab.polylog_slack(d, 0.5) == pytest.approx(0.5 * np.log(np.log(1 / d)))


# -- validation ----------------------------------------------------------------


def test_validate_fills_defaults_and_resolves_alias():
    cfg = lab.validate_config({"experiment": "check_hairbrush_3d", "params": {"n": 3, "count": 8, "k": 5}})
    assert cfg["experiment"] == "hairbrush_3d"
    assert cfg["mode"] == "assert"
    assert cfg["params"]["generator"] == "hairbrush"


@pytest.mark.parametrize(
    "cfg, fragment",
    [
        ({"experiment": "nope"}, "unknown experiment"),
        ({"experiment": "convex_wolff", "mode": "assert", "params": {"n": 3, "count": 4, "k": 4}}, "conjecture-grade"),
        ({"experiment": "lattice", "mode": "assert", "params": {"n": 2, "N": 4, "k": [2]}}, "measurement-grade"),
        ({**TWO_ENDS, "version": 2}, "version"),
        ({**TWO_ENDS, "colour": "red"}, "unknown config keys"),
        ({**TWO_ENDS, "mode": "prove"}, "mode"),
        ({**TWO_ENDS, "seed": -1}, "seed"),
        ({**TWO_ENDS, "seed": 2**64}, "seed"),
        ({"experiment": "bush_nd", "params": {"n": 2}}, "needs parameters"),
        ({**TWO_ENDS, "sweep": {"k": 5}}, "sweep"),
        ({**TWO_ENDS, "sweep": {"k": list(range(80)), "count": list(range(80))}}, "capacity"),
    ],
)
def test_validation_errors(cfg, fragment):
    with pytest.raises(ConfigError, match=fragment):
        lab.validate_config(cfg)


# -- runs ----------------------------------------------------------------------


def test_end_to_end_two_ends_passes(tmp_path):
    out = tmp_path / "run"
    assert main(["check", "--config", str(write(tmp_path, TWO_ENDS)), "--out", str(out)]) == 0
    data = json.loads((out / "report.json").read_text())
    (row,) = data["reports"]
    assert row["verdict"] is True
    assert row["experiment"] == "two_ends_furstenberg_2d"
    assert row["ref"] and "slack_ledger" in row
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    assert "wall_time_s" in json.loads((out / "timing.json").read_text())


def test_reports_are_byte_identical(tmp_path):
    cfg = {**TWO_ENDS, "sweep": {"k": [5, 6], "count": [10, 16]}}
    path = write(tmp_path, cfg)
    outs = []
    for i, jobs in enumerate([1, 2, 1]):
        d = tmp_path / f"o{i}"
        assert main(["sweep", "--config", str(path), "--out", str(d), "--jobs", str(jobs)]) == 0
        outs.append(((d / "report.csv").read_bytes(), (d / "report.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_seed_flag_changes_output(tmp_path):
    path = write(tmp_path, TWO_ENDS)
    a = lab.report_json(lab.run(TWO_ENDS))
    assert main(["check", "--config", str(path), "--seed", "8", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "report.json").read_text() != a


def test_assert_failure_exits_one(tmp_path):
    # a huge negative slack turns the bound into lhs >= rhs * delta^-20, which no family meets
    cfg = {**TWO_ENDS, "slack": -20.0}
    assert main(["check", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 1
    cfg["mode"] = "measure"
    assert main(["check", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0


def test_config_error_exits_two(tmp_path, capsys):
    bad = {"experiment": "convex_wolff", "mode": "assert", "params": {"n": 3, "count": 4, "k": 4}}
    assert main(["check", "--config", str(write(tmp_path, bad))]) == 2
    assert "conjecture-grade" in capsys.readouterr().err
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 2


def test_empty_sweep(tmp_path):
    cfg = {**TWO_ENDS, "sweep": {"k": []}}
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == 0
    data = json.loads((out / "report.json").read_text())
    assert data["reports"] == [] and data["summary"]["points"] == 0
    assert (out / "report.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_single_point_sweep_equals_run():
    one = lab.run({**TWO_ENDS, "sweep": {"k": [6]}})
    plain = lab.run(TWO_ENDS)
    assert lab.report_csv(one) == lab.report_csv(plain)
    assert one["reports"] == plain["reports"]


def test_lattice_sweep_fit():
    res = lab.run({"experiment": "lattice", "params": {"n": 2}, "sweep": {"N": [4, 8, 16], "k": [[2], [4]]}})
    fit = res["fits"]["lattice"]
    assert fit["distance"] < 0.2
    assert fit["residual"] >= 0


def test_lattice_sweep_without_k_variation_reports_error():
    res = lab.run({"experiment": "lattice", "params": {"n": 2, "k": [2]}, "sweep": {"N": [4, 8, 16]}})
    assert "error" in res["fits"]["lattice"]


def test_delta_sweep_reports_slope():
    res = lab.run({"experiment": "hairbrush_3d", "seed": 3, "params": {"n": 3, "count": 12}, "sweep": {"k": [4, 5, 6]}})
    fit = res["fits"]["ratio_vs_delta"]
    assert fit["points"] == 3 and np.isfinite(fit["slope"])
    assert res["summary"]["failed"] == 0


def test_polylog_knob_enters_the_slack():
    base = lab.run(TWO_ENDS)["reports"][0]
    loose = lab.run({**TWO_ENDS, "polylog_c": 0.5})["reports"][0]
    assert loose["slack"] == pytest.approx(base["slack"] + lab.polylog_slack(2.0**-6, 0.5))


def test_search_mode_reports_min_ratio():
    res = lab.run({**TWO_ENDS, "mode": "search", "sweep": {"count": [8, 16]}})
    assert res["summary"]["min_ratio"] == min(r["ratio"] for r in res["reports"])


# -- other subcommands ---------------------------------------------------------


def test_gen_writes_family(tmp_path):
    out = tmp_path / "g"
    assert main(["gen", "--config", str(write(tmp_path, TWO_ENDS)), "--out", str(out)]) == 0
    fam = json.loads((out / "family.json").read_text())
    assert fam["n"] == 2 and fam["k"] == 6


def test_exponents_output(capsys):
    assert main(["exponents", "--n", "3"]) == 0
    rows = json.loads(capsys.readouterr().out)
    values = {r["name"]: r["value"] for r in rows}
    assert values["p(n)"] == "22/7"
    assert values["s(p0)"] == "5/2"
    assert main(["exponents", "--n", "3", "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("name,value,grade,detail")


def test_fourier_subcommand(tmp_path):
    out = tmp_path / "f"
    assert main(["fourier", "--R", "16", "--seed", "2", "--out", str(out), "--save-field"]) == 0
    data = json.loads((out / "report.json").read_text())
    names = {r["name"] for r in data["reports"]}
    assert {"wp_reconstruction", "wp_tail_absolute"} <= names
    assert (out / "field.bin").read_bytes()[:4] == b"FLBG"


def test_report_merges(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["check", "--config", str(write(tmp_path, TWO_ENDS)), "--out", str(a)])
    main(["check", "--config", str(write(tmp_path, {**TWO_ENDS, "seed": 9}, "c2.json")), "--out", str(b)])
    merged = tmp_path / "m"
    assert main(["report", str(a / "report.json"), str(b / "report.json"), "--out", str(merged)]) == 0
    lines = (merged / "merged.csv").read_text().splitlines()
    assert lines[0].startswith("experiment,ref,mode,name")
    assert len(lines) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "flab.cli", "exponents", "--n", "2", "--format", "csv"],
        capture_output=True,
        text=True,
        env={"FLAB_LOG": "DEBUG", "PATH": ""},
    )
    assert r.returncode == 0, r.stderr
    assert "p(n)" in r.stdout

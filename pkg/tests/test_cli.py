import csv
import io
import json
import os
import subprocess
import sys

import pytest

from stochlab.cli import RunConfig, execute, main, parse_args, report_csv
from stochlab.harness import Check, Report, registered, run_experiment

SCHEMA = ["experiment", "params", "seed", "replicas", "estimate", "stderr", "checks", "elapsed_ms"]
CHECK_KEYS = ["name", "expected", "observed", "tolerance", "pass"]


def run_cli(argv, **kw):
    out = io.StringIO()
    code = execute(parse_args(argv), stdout=out, **kw)
    return code, out.getvalue()


def cli_process(*args, env=None):
    full_env = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "stochlab", *args], capture_output=True, text=True,
                          env=full_env, timeout=300)


# parsing

def test_parse_berry_esseen_example():
    cfg = parse_args(["limits", "berry-esseen", "--p", "0.4737", "--n", "361", "--seed", "42"])
    assert cfg == RunConfig("limits", "berry-esseen", {"p": "0.4737", "n": "361"}, 42)


def test_parse_accepts_equals_and_dashes():
    cfg = parse_args(["macro", "ehrenfest", "--return-N=8", "--N", "50"])
    assert cfg.params == {"return_N": "8", "N": "50"}


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    [],
    ["limits", "no-such-experiment"],
    ["macro", "berry-esseen"],
    ["limits", "berry-esseen", "--bogus", "1"],
    ["limits", "berry-esseen", "--p"],
    ["limits", "berry-esseen", "stray"],
    ["limits", "berry-esseen", "--replicas", "0"],
    ["limits", "berry-esseen", "--seed", "-1"],
    ["limits", "berry-esseen", "--seed", str(2**64)],
    ["limits", "berry-esseen", "--out", "xml"],
    ["limits", "berry-esseen", "--n", "many"],
    ["list", "extra"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        parse_args(argv)
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("STOCHLAB_SEED", "123")
    assert parse_args(["sde", "crr"]).seed == 123
    assert parse_args(["sde", "crr", "--seed", "5"]).seed == 5
    monkeypatch.delenv("STOCHLAB_SEED")
    assert parse_args(["sde", "crr"]).seed == 0


def test_list_enumerates_every_experiment():
    code, text = run_cli(["list"])
    assert code == 0
    listed = {line.split("\t")[1] for line in text.strip().splitlines()}
    assert listed == {e.name for e in registered()}
    code, text = run_cli(["list", "sde"])
    assert {line.split("\t")[0] for line in text.strip().splitlines()} == {"sde"}


# execution

def test_json_report_schema_and_exit_0():
    code, text = run_cli(["limits", "berry-esseen", "--seed", "42"])
    assert code == 0
    doc = json.loads(text)
    assert list(doc) == SCHEMA
    assert doc["seed"] == 42
    assert all(list(c) == CHECK_KEYS for c in doc["checks"])
    assert all(c["pass"] for c in doc["checks"])


def test_same_config_gives_identical_json():
    def strip(text):
        doc = json.loads(text)
        doc.pop("elapsed_ms")
        return json.dumps(doc)

    a = run_cli(["sample", "alias", "--seed", "9"])[1]
    b = run_cli(["sample", "alias", "--seed", "9"])[1]
    assert strip(a) == strip(b)
    lines = lambda t: [l for l in t.splitlines() if "elapsed_ms" not in l]
    assert lines(a) == lines(b)
    c = run_cli(["sample", "alias", "--seed", "10"])[1]
    assert strip(a) != strip(c)


def test_zero_tolerance_fails_with_exit_1():
    code, text = run_cli(["sample", "memoryless", "--tolerance", "0"])
    assert code == 1
    assert not all(c["pass"] for c in json.loads(text)["checks"])


def test_exit_code_tracks_checks():
    for argv in (["sde", "crr"], ["sde", "crr", "--tolerance", "0"]):
        code, text = run_cli(argv)
        assert (code == 0) == all(c["pass"] for c in json.loads(text)["checks"])


def test_parameter_domain_error_exit_2(capsys):
    code, _ = run_cli(["graph", "erdos-renyi", "--p", "1.5"])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_output_file(tmp_path):
    target = tmp_path / "report.json"
    code, text = run_cli(["sde", "crr", "--output", str(target)])
    assert code == 0 and text == ""
    assert json.loads(target.read_text())["experiment"] == "crr"


def test_csv_without_table_lists_checks():
    code, text = run_cli(["sample", "memoryless", "--out", "csv"])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CHECK_KEYS
    assert len(rows) > 1


def test_csv_table_round_trips_floats():
    report = run_experiment("crr")
    rows = list(csv.reader(io.StringIO(report_csv(report))))
    assert rows[0] == ["n", "abs_error"]
    assert [float(r[1]) for r in rows[1:]] == [row[1] for row in report.table.rows]


def test_ehrenfest_csv_time_strictly_increasing():
    proc = cli_process("macro", "ehrenfest", "--N", "100", "--seed", "7", "--out", "csv")
    assert proc.returncode == 0, proc.stderr
    rows = list(csv.reader(io.StringIO(proc.stdout)))
    assert rows[0][0] == "time"
    times = [float(r[0]) for r in rows[1:]]
    assert len(times) > 100
    assert all(b > a for a, b in zip(times, times[1:]))
    # each state row conserves the flea count
    assert all(float(r[1]) + float(r[2]) == 100 for r in rows[1:])


def test_plot_flag_writes_svg(tmp_path):
    target = tmp_path / "crr.svg"
    code, _ = run_cli(["sde", "crr", "--plot", str(target)])
    assert code == 0
    svg = target.read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert svg.count("<polyline") == 1


def test_plot_to_unwritable_path_exit_2(tmp_path, capsys):
    code, _ = run_cli(["sde", "crr", "--plot", str(tmp_path / "missing" / "x.svg")])
    assert code == 2
    assert "plot error" in capsys.readouterr().err


def test_nonfinite_values_refuse_to_serialize():
    report = Report("x", {}, 0, 1, float("nan"), 0.0, [Check("c", 0.0, 0.0, 0.0)], 0.0)
    with pytest.raises(ValueError):
        report.to_json()


def test_main_entry_point_and_module():
    assert main(["list", "graph"]) == 0
    proc = cli_process("sde", "crr", env={"STOCHLAB_SEED": "3"})
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["seed"] == 3
    bad = cli_process("frobnicate")
    assert bad.returncode == 2 and "usage" in bad.stderr

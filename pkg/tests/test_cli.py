import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from pathogen.cli import main, parse_grid

GOLDEN = Path(__file__).parent / "golden" / "header.csv"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_header_is_frozen(capsys):
    code, out, _ = run(capsys, "estimate", "--model", "m3", "--lambda", "2", "--r", "0.75",
                       "--trials", "200", "--seed", "42", "--parallelism", "1")
    assert code == 0
    assert out.splitlines()[0] + "\n" == GOLDEN.read_text()
    (row,) = rows(out)
    assert row["model"] == "m3" and row["dim"] == "" and row["lambda"] == "2" and row["r"] == "0.75"
    assert row["trials"] == "200" and row["seed"] == "42" and row["wall_time_s"] == "0"
    assert float(row["estimate"]) == int(row["survivors"]) / 200


def test_inputs_echo_exactly(capsys):
    code, out, _ = run(capsys, "estimate", "--model", "s1", "--dim", "1", "--lambda", "1.23456789012",
                       "--r", "0.1", "--trials", "5", "--seed", "3", "--max-time", "5")
    (row,) = rows(out)
    assert float(row["lambda"]) == 1.23456789012 and row["r"] == "0.1" and row["dim"] == "1"


@pytest.mark.parametrize("par", ["1", "2"])
def test_estimate_byte_identical(capsys, par):
    args = ["estimate", "--model", "m1", "--lambda", "1", "--r", "0.5", "--trials", "300",
            "--seed", "7", "--max-pop", "2000"]
    _, a, _ = run(capsys, *args, "--parallelism", "1")
    _, b, _ = run(capsys, *args, "--parallelism", par)
    assert a == b


def test_run_outputs(capsys):
    code, out, _ = run(capsys, "run", "--model", "m3", "--lambda", "2", "--r", "0.4", "--seed", "1")
    assert code == 0 and json.loads(out)["verdict"] == "extinct"
    args = ["run", "--model", "m1", "--lambda", "1", "--r", "0.5", "--seed", "7", "--max-pop", "10000",
            "--series", "--genealogy"]
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b
    body = json.loads(a)
    assert set(body) >= {"verdict", "final_population", "final_type_count", "series", "genealogy"}
    assert all(len(row) == 3 for row in body["series"])
    _, out, _ = run(capsys, "run", "--model", "s2", "--dim", "1", "--lambda", "2", "--r", "0.5",
                    "--seed", "2", "--max-time", "10", "--series")
    assert all(len(row) == 5 for row in json.loads(out)["series"])


def test_run_csv(capsys):
    code, out, _ = run(capsys, "run", "--model", "m2", "--lambda", "1", "--r", "0.5", "--out-format", "csv")
    assert code == 0 and out.startswith("verdict,reason,time,final_population")


@pytest.mark.parametrize("argv", [
    ["run", "--model", "s1", "--dim", "0", "--lambda", "1", "--r", "0.5"],
    ["run", "--model", "m1", "--dim", "1", "--lambda", "1", "--r", "0.5"],
    ["run", "--model", "m1", "--lambda", "0", "--r", "0.5"],
    ["run", "--model", "m1", "--lambda", "1", "--r", "2"],
    ["run", "--model", "m9", "--lambda", "1", "--r", "0.5"],
    ["run", "--model", "m1", "--r", "0.5"],
    ["estimate", "--model", "m1", "--lambda", "1", "--r", "0.5", "--trials", "0"],
    ["estimate", "--model", "m1", "--lambda", "1", "--r", "0.5", "--max-pop", "0"],
    ["sweep", "--model", "m1", "--lambda", "1,-1", "--r", "0.5"],
    ["sweep", "--model", "m1", "--lambda", "2:1:0.5", "--r", "0.5"],
    ["bisect", "--model", "m3", "--lambda", "2", "--axis", "r", "--lo", "0.9", "--hi", "0.1"],
    ["analytic", "--model", "s1", "--lambda", "1", "--r", "0.5"],
    ["analytic", "--model", "m3", "--lambda", "-1", "--r", "0.5"],
])
def test_validation_exit_2(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == "" and err.startswith("error:")


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--model", "m1", "--lambda", "abc", "--r", "0.5"])
    assert exc.value.code == 2


def test_event_cap_exit_3(capsys):
    codes = set()
    for seed in range(10):
        code, out, _ = run(capsys, "run", "--model", "m1", "--lambda", "3", "--r", "0.5", "--seed",
                           str(seed), "--max-pop", "1000000", "--max-events", "5")
        reason = json.loads(out)["reason"]
        assert (code == 3) == (reason == "event_cap")
        codes.add(code)
    assert codes == {0, 3}
    code, out, _ = run(capsys, "estimate", "--model", "m1", "--lambda", "3", "--r", "0.5",
                       "--trials", "50", "--max-pop", "1000000", "--max-events", "5")
    assert code == 3
    assert out.splitlines()[0].endswith(",anomaly") and "event cap" in out


def test_bracket_invalid_exit_4(capsys):
    code, _, err = run(capsys, "bisect", "--model", "m3", "--lambda", "2", "--axis", "r", "--lo", "0.6",
                       "--hi", "0.9", "--resolution", "0.05", "--trials", "1000", "--seed", "9")
    assert code == 4 and "bracket invalid" in err


def test_bisect_output(capsys):
    code, out, _ = run(capsys, "bisect", "--model", "m3", "--lambda", "2", "--axis", "r", "--lo", "0.1",
                       "--hi", "0.9", "--resolution", "0.1", "--trials", "2000", "--seed", "9")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] + "\n" == GOLDEN.read_text()
    assert lines[-2] == "bracket_lo,bracket_hi"
    lo, hi = map(float, lines[-1].split(","))
    assert lo <= 0.5 <= hi and hi - lo <= 0.1


def test_sweep_rows_and_example(capsys):
    code, out, _ = run(capsys, "sweep", "--model", "s2", "--dim", "1", "--lambda", "0.45",
                       "--r", "0.1,0.5,0.9", "--trials", "2000", "--seed", "1")
    assert code == 0
    rs = rows(out)
    assert [r["r"] for r in rs] == ["0.1", "0.5", "0.9"]
    assert all(float(r["estimate"]) <= 0.005 for r in rs)
    code, out, _ = run(capsys, "sweep", "--model", "m2", "--lambda", "0.5:1.5:0.5", "--r", "0.2,0.8",
                       "--trials", "20", "--out-format", "json")
    grid = [(r["lambda"], r["r"]) for r in json.loads(out)["rows"]]
    assert grid == [(0.5, 0.2), (0.5, 0.8), (1.0, 0.2), (1.0, 0.8), (1.5, 0.2), (1.5, 0.8)]


def test_analytic(capsys):
    _, out, _ = run(capsys, "analytic", "--model", "m3", "--lambda", "2", "--r", "0.75")
    body = json.loads(out)
    assert body["survival_probability"] == 0.333333333 and body["survives"] is True
    _, out, _ = run(capsys, "analytic", "--model", "m2", "--lambda", "4", "--r", "0.5")
    assert json.loads(out)["mean_offspring"] == "inf"
    _, out, _ = run(capsys, "analytic", "--model", "m1", "--lambda", "1", "--r", "0.5")
    assert json.loads(out)["survives"] is True


def test_grid_syntax():
    assert parse_grid("0.1,0.5,0.9") == [0.1, 0.5, 0.9]
    g = parse_grid("0.5:2.5:0.25")
    assert len(g) == 9 and g[0] == 0.5 and g[-1] == 2.5
    assert parse_grid("0.1:0.9:0.1")[-1] == 0.9 and len(parse_grid("0.1:0.9:0.1")) == 9
    assert parse_grid("0:1:0.3") == [0.0, 0.3, 0.6, 0.9]
    assert parse_grid("2") == [2.0]


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.conf"
    cfg.write_text("# sample\nmodel = m3\nlambda = 2\nr = 0.75\ntrials = 100\nseed = 4\n")
    _, a, _ = run(capsys, "estimate", "--config", str(cfg))
    _, b, _ = run(capsys, "estimate", "--model", "m3", "--lambda", "2", "--r", "0.75",
                  "--trials", "100", "--seed", "4")
    assert a == b
    _, c, _ = run(capsys, "estimate", "--config", str(cfg), "--r", "0.4")
    assert rows(c)[0]["r"] == "0.4"
    cfg.write_text("bogus = 1\n")
    code, _, err = run(capsys, "estimate", "--config", str(cfg))
    assert code == 2 and "bogus" in err


def test_seed_env(monkeypatch, capsys):
    args = ["estimate", "--model", "m3", "--lambda", "2", "--r", "0.75", "--trials", "100"]
    monkeypatch.setenv("PATHOGEN_SEED", "17")
    _, a, _ = run(capsys, *args)
    assert rows(a)[0]["seed"] == "17"
    _, b, _ = run(capsys, *args, "--seed", "17")
    assert a == b
    _, c, _ = run(capsys, *args, "--seed", "18")
    assert rows(c)[0]["seed"] == "18"


def test_out_path_atomic(tmp_path, capsys):
    target = tmp_path / "est.json"
    code, out, _ = run(capsys, "estimate", "--model", "m3", "--lambda", "2", "--r", "0.75", "--trials",
                       "50", "--out-format", "json", "--out-path", str(target))
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["rows"][0]["trials"] == 50
    assert os.listdir(tmp_path) == ["est.json"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pathogen", "analytic", "--model", "m3", "--lambda", "2",
                           "--r", "0.4"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["survives"] is False

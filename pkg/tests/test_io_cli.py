import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from countproc import cli
from countproc.draws import DrawStore
from countproc.io import (
    ParseError,
    parse_count_series_csv,
    parse_functional_csv,
    read_draws,
    write_draws,
)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_count_series_parsing(tmp_path):
    s = parse_count_series_csv(_write(tmp_path, "a.csv", "s,y\n0,2\n1,3\n"))
    assert s.counts.tolist() == [2, 3]
    s = parse_count_series_csv(_write(tmp_path, "b.csv", "s,y\n2.5,1\n0,4\n1,0\n"))
    assert s.locations.tolist() == [0.0, 1.0, 2.5] and s.counts.tolist() == [4, 0, 1]


@pytest.mark.parametrize("text,fragment", [
    ("s,y\n0,-1\n", "line 2"),
    ("s,y\n0,1\n1,1.5\n", "line 3"),
    ("s,y\n0,1\n1\n", "line 3"),
    ("s,y\n0,1\nabc,1\n", "line 3"),
    ("x,y\n0,1\n", "header"),
    ("s,y\n1,1\n1,2\n", "duplicate"),
])
def test_count_series_errors(tmp_path, text, fragment):
    with pytest.raises(ParseError, match=fragment):
        parse_count_series_csv(_write(tmp_path, "bad.csv", text))


def test_functional_parsing(tmp_path):
    text = "subject,s,y\nb,2,1\na,1,0\na,0,3\nb,0,2\na,2,1\nb,1,0\n"
    ds = parse_functional_csv(_write(tmp_path, "f.csv", text))
    assert ds.n_subjects == 2 and ds.subject_labels == ["b", "a"]
    assert ds.times[ds.subject == 1].tolist() == [0, 1, 2]
    assert ds.groups is None and ds.covariates is None
    text = "subject,s,y,group,x1,x2\n1,0,1,hi,0.5,1\n1,1,0,hi,0.1,2\n2,0,0,lo,0.3,3\n"
    ds = parse_functional_csv(_write(tmp_path, "g.csv", text))
    assert ds.group_labels == ["hi", "lo"] and ds.groups.tolist() == [0, 1]
    assert ds.covariates.shape == (3, 2)


@pytest.mark.parametrize("text,fragment", [
    ("subject,s,y,x1\n1,0,1,\n", "empty"),
    ("subject,s,y,x1\n1,0,1,0.2\n1,1,1\n", "line 3"),
    ("subject,s,y,group\n1,0,1,a\n1,1,1,b\n", "changes group"),
    ("subject,s,y\n1,0,1\n1,0,2\n", "duplicate"),
    ("subject,y,s\n1,0,1\n", "header"),
    ("subject,s,y,x2\n1,0,1,3\n", "x1"),
])
def test_functional_errors(tmp_path, text, fragment):
    with pytest.raises(ParseError, match=fragment):
        parse_functional_csv(_write(tmp_path, "bad.csv", text))


floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arrays(np.float64, (4, 3), elements=floats), arrays(np.float64, 4, elements=floats))
def test_draw_store_round_trip(tmp_path_factory, theta, tau):
    path = tmp_path_factory.mktemp("d") / "draws.csv"
    store = DrawStore({"theta": theta, "tau": tau}, np.arange(10, 14), {},
                      {"seed": 5, "config_hash": "abc", "model": "rps"})
    write_draws(path, store)
    back = read_draws(path)
    np.testing.assert_array_equal(back["theta"], theta)
    np.testing.assert_array_equal(back["tau"], tau)
    np.testing.assert_array_equal(back.iterations, store.iterations)
    assert back.meta["seed"] == 5 and back.meta["config_hash"] == "abc"


def _digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


@pytest.fixture
def series_csv(tmp_path):
    assert cli.cli_dispatch(["simulate", "--scenario", "4", "--n", "50", "--seed", "3",
                             "--output-dir", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim" / "data.csv"


@pytest.mark.parametrize("command", ["fit-pspline", "fit-gp"])
def test_fit_outputs_are_deterministic(tmp_path, series_csv, command):
    before = series_csv.read_bytes()
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        argv = [command, "--input", str(series_csv), "--iters", "120", "--burnin", "20", "--seed", "8",
                "--grid-size", "40", "--output-dir", str(out)]
        assert cli.cli_dispatch(argv) == 0
        runs.append(_digest(out))
    assert runs[0] == runs[1]
    assert set(runs[0]) == {"draws.csv", "summary.csv", "plot.csv"}
    assert series_csv.read_bytes() == before
    text = (tmp_path / "run0" / "plot.csv").read_text()
    assert "# seed=8" in text and "# config_hash=" in text
    assert "grid,median,lower_2.5,upper_97.5" in text


def test_summarize_reads_draws(tmp_path, series_csv):
    cli.cli_dispatch(["fit-pspline", "--input", str(series_csv), "--iters", "60", "--burnin", "10",
                      "--output-dir", str(tmp_path / "fit")])
    assert cli.cli_dispatch(["summarize", "--input", str(tmp_path / "fit" / "draws.csv"),
                             "--output-dir", str(tmp_path / "sum")]) == 0
    body = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("# command")]
    assert body(tmp_path / "sum" / "summary.csv") == body(tmp_path / "fit" / "summary.csv")


def test_config_file_and_flag_precedence(tmp_path, series_csv):
    cfg = _write(tmp_path, "run.cfg", "# comment\niters = 80\nburnin = 30\nseed = 4\n")
    assert cli.cli_dispatch(["fit-pspline", "--input", str(series_csv), "--config", str(cfg),
                             "--seed", "9", "--output-dir", str(tmp_path / "o")]) == 0
    draws = read_draws(tmp_path / "o" / "draws.csv")
    assert len(draws) == 50 and draws.meta["seed"] == 9


@pytest.mark.parametrize("argv,code", [
    (["nope"], 2),
    ([], 2),
    (["fit-pspline"], 2),
    (["fit-pspline", "--input", "x.csv", "--bogus", "1"], 2),
    (["fit-pspline", "--input", "missing.csv"], 1),
    (["simulate", "--scenario", "9"], 1),
    (["simulate", "--scenario", "weird"], 2),
    (["benchmark", "--n", "a,b"], 2),
])
def test_exit_codes(tmp_path, argv, code):
    if argv and "--output-dir" not in argv:
        argv = argv + ["--output-dir", str(tmp_path)]
    assert cli.cli_dispatch(argv) == code


def test_unknown_config_key_is_usage_error(tmp_path, series_csv):
    cfg = _write(tmp_path, "bad.cfg", "iters = 10\nknots_per_inch = 3\n")
    assert cli.cli_dispatch(["fit-pspline", "--input", str(series_csv), "--config", str(cfg),
                             "--output-dir", str(tmp_path)]) == 2


def test_bad_data_is_runtime_error(tmp_path):
    bad = _write(tmp_path, "bad.csv", "s,y\n0,1\n1,-2\n")
    assert cli.cli_dispatch(["fit-pspline", "--input", str(bad), "--output-dir", str(tmp_path)]) == 1


def test_functional_commands(tmp_path):
    for kind, cmd in (("grouped", "fit-grouped"), ("additive", "fit-additive")):
        sim = tmp_path / kind
        assert cli.cli_dispatch(["simulate", "--scenario", kind, "--subjects", "6", "--times", "12",
                                 "--output-dir", str(sim)]) == 0
        out = tmp_path / (kind + "_fit")
        assert cli.cli_dispatch([cmd, "--input", str(sim / "data.csv"), "--iters", "60", "--burnin", "20",
                                 "--output-dir", str(out)]) == 0
        assert {"draws.csv", "summary.csv", "plot.csv"} <= {p.name for p in out.iterdir()}


def test_benchmark_command(tmp_path):
    argv = ["benchmark", "--scenario", "3", "--methods", "rps,ps,e", "--n", "100", "--replicates", "2",
            "--iters", "200", "--burnin", "50", "--seed", "7"]
    digests = []
    for k in range(2):
        out = tmp_path / f"b{k}"
        assert cli.cli_dispatch(argv + ["--output-dir", str(out)]) == 0
        digests.append(_digest(out))
    assert digests[0] == digests[1]
    rows = [l for l in (tmp_path / "b0" / "benchmark.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "scenario,method,n,mean_mad,sd_mad,replicates" and len(rows) == 4

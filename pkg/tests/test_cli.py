import csv
import json
import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from noisypower.cli import main
from noisypower.experiment import (
    ConfigError,
    ExperimentConfig,
    dump_config,
    format_float,
    parse_config,
    read_trace,
    summarize_dir,
)
from noisypower.npm import TRACE_COLUMNS

MINIMAL = {
    "schema_version": 1,
    "mode": "npm",
    "matrix": {"d": 20, "alpha": 2.0},
    "k": 2,
    "p": 4,
    "q": 2,
    "L": "auto",
    "seeds": [0],
    "output": {"dir": "out"},
}


def write_config(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw, sort_keys=False))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_minimal_run(tmp_path, capsys):
    path = write_config(tmp_path, MINIMAL)
    assert main(["run", str(path)]) == 0
    traces = sorted((tmp_path / "out").glob("trace_*.csv"))
    assert len(traces) == 1
    rows = read_trace(traces[0])
    meta = json.loads(traces[0].with_suffix(".json").read_text())
    assert len(rows) == meta["L"] + 1
    assert rows[-1]["sin_theta_k"] <= 0.1
    header = traces[0].read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    # iteration 0 has no noise norms: empty fields
    assert traces[0].read_text().splitlines()[1].startswith("0,,,")


def test_rejects_k_above_p(tmp_path, capsys):
    path = write_config(tmp_path, {**MINIMAL, "k": 5, "q": 5})
    assert main(["run", str(path)]) == 1
    assert "k:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"mode": "spectral"}, "mode"),
        ({"schema_version": 2}, "schema_version"),
        ({"seeds": []}, "seeds"),
        ({"matrix": {"d": 20}}, "matrix"),
        ({"epsilon": 1.5}, "epsilon"),
        ({"noise": {"kind": "laplace"}}, "noise.kind"),
        ({"mode": "dp_pca"}, "privacy"),
        ({"mode": "streaming"}, "stream"),
        ({"p": 30, "q": 2}, "p"),
        ({"extra": 1}, "extra"),
        ({"sweep": {"colour": [1]}}, "sweep"),
        ({"sweep": {"k": [1, 9]}}, "sweep.k"),
    ],
)
def test_validation_names_field(patch, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({**MINIMAL, **patch})
    assert exc.value.field == field
    assert str(exc.value).startswith(field)


def test_unreadable_config(tmp_path):
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("mode: [unclosed")
    assert main(["budget", str(bad)]) == 1


def test_rerun_is_byte_identical(tmp_path):
    raw = {**MINIMAL, "seeds": [0, 1], "noise": {"kind": "gaussian", "stddev": 0.001}}
    first = tmp_path / "a"
    second = tmp_path / "b"
    for d in (first, second):
        d.mkdir()
        assert main(["run", str(write_config(d, raw))]) == 0
    files = sorted(p.name for p in (first / "out").iterdir())
    assert files == sorted(p.name for p in (second / "out").iterdir())
    for name in files:
        assert (first / "out" / name).read_bytes() == (second / "out" / name).read_bytes()


def test_parallel_matches_serial(tmp_path, monkeypatch):
    raw = {**MINIMAL, "seeds": [0, 1, 2], "sweep": {"k": [1, 2]}}
    outs = {}
    for threads in ("1", "4"):
        d = tmp_path / threads
        d.mkdir()
        monkeypatch.setenv("NPM_THREADS", threads)
        assert main(["run", str(write_config(d, raw))]) == 0
        outs[threads] = {p.name: p.read_bytes() for p in (d / "out").iterdir()}
    assert outs["1"] == outs["4"]


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("NPM_THREADS", "zero")
    assert main(["run", str(write_config(tmp_path, MINIMAL))]) == 1


def test_summary_statistics_and_order(tmp_path):
    raw = {**MINIMAL, "seeds": [2, 0, 1], "sweep": {"epsilon": [0.2, 0.05]}}
    assert main(["run", str(write_config(tmp_path, raw))]) == 0
    rows = read_csv(tmp_path / "out" / "summary.csv")
    assert [(float(r["epsilon"]), int(r["seed"])) for r in rows] == [
        (0.05, 0), (0.05, 1), (0.05, 2), (0.2, 0), (0.2, 1), (0.2, 2)]
    header = list(rows[0])
    assert header[:2] == ["epsilon", "seed"]
    for eps in ("0.050000000000000003", "0.20000000000000001"):
        group = [r for r in rows if r["epsilon"] == eps]
        finals = [float(r["sin_theta_k"]) for r in group]
        assert abs(float(group[0]["sin_theta_k_mean"]) - sum(finals) / 3) <= 1e-12
        sd = math.sqrt(sum((f - sum(finals) / 3) ** 2 for f in finals) / 3)
        assert abs(float(group[0]["sin_theta_k_std"]) - sd) <= 1e-12


def test_summarize_command(tmp_path):
    assert main(["run", str(write_config(tmp_path, MINIMAL))]) == 0
    out = tmp_path / "again.csv"
    assert main(["summarize", str(tmp_path / "out"), "-o", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0]["seed"] == "0"
    assert out.read_bytes() == (tmp_path / "out" / "summary.csv").read_bytes()


def test_summarize_empty_and_missing(tmp_path):
    assert main(["summarize", str(tmp_path)]) == 1
    assert main(["summarize", str(tmp_path / "nope")]) == 1


def test_summarize_rejects_mixed_modes(tmp_path):
    a = write_config(tmp_path, {**MINIMAL, "output": {"dir": "mix"}}, "a.yaml")
    b = write_config(tmp_path, {**MINIMAL, "mode": "streaming", "stream": {"n": 400}, "seeds": [5],
                                "output": {"dir": "mix"}}, "b.yaml")
    assert main(["run", str(a)]) == 0
    assert main(["run", str(b)]) == 1
    assert main(["summarize", str(tmp_path / "mix")]) == 1


def test_dp_and_streaming_modes(tmp_path):
    dp = {**MINIMAL, "mode": "dp_pca", "L": 4, "privacy": {"eps": 0.5, "delta": 0.1, "nodes": 3, "nu": 0.0},
          "output": {"dir": "dp"}}
    assert main(["run", str(write_config(tmp_path, dp, "dp.yaml"))]) == 0
    meta = json.loads(next((tmp_path / "dp").glob("*.json")).read_text())
    assert meta["comm_total"] == 2 * 3 * 4 * 20 * 4
    stream = {**MINIMAL, "mode": "streaming", "L": 4, "stream": {"n": 2000}, "output": {"dir": "st"}}
    assert main(["run", str(write_config(tmp_path, stream, "st.yaml"))]) == 0
    meta = json.loads(next((tmp_path / "st").glob("*.json")).read_text())
    assert meta["block_size"] == 500


def test_matrix_file(tmp_path):
    (tmp_path / "m.csv").write_text("4,0,0\n0,2,0\n0,0,1\n")
    raw = {**MINIMAL, "matrix": {"file": "m.csv"}, "k": 1, "p": 1, "q": 1, "L": 20}
    assert main(["run", str(write_config(tmp_path, raw))]) == 0
    rows = read_trace(next((tmp_path / "out").glob("trace_*.csv")))
    assert rows[-1]["sin_theta_k"] < 1e-3
    (tmp_path / "bad.csv").write_text("1,2\n0,1\n")
    raw["matrix"] = {"file": "bad.csv"}
    assert main(["run", str(write_config(tmp_path, raw, "bad.yaml"))]) == 1


def test_budget_and_check_round(tmp_path, capsys):
    raw = {**MINIMAL, "epsilon": 0.2, "round": {"B": 4.0, "n_mc": 5000, "t_grid": [1, 2]}}
    path = write_config(tmp_path, raw)
    assert main(["budget", str(path)]) == 0
    out = capsys.readouterr().out
    assert "gap_dependent" in out and "gap_independent" in out and "L (configured mode)" in out
    assert main(["check-round", str(path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1] == "t,norm_freq,proj_freq,threshold,pass" and len(out) == 4
    assert main(["check-round", str(write_config(tmp_path, MINIMAL, "n.yaml"))]) == 1


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    import noisypower.experiment as ex
    from noisypower.linalg import NumericalError

    def boom(*args, **kwargs):
        raise NumericalError("collapse")

    monkeypatch.setattr(ex, "run_single", boom)
    assert main(["run", str(write_config(tmp_path, MINIMAL))]) == 2


def test_usage_errors():
    assert main([]) == 1
    assert main(["frobnicate"]) == 1


def test_floats_round_trip():
    for x in (0.1, 1 / 3, 2.0**-1074, 1e308, -0.0):
        assert float(format_float(x)) == x
    assert format_float(math.inf) == "inf" and format_float(None) == ""



@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 3),
    st.integers(0, 3),
    st.floats(0.01, 0.9),
    st.lists(st.integers(0, 1000), min_size=1, max_size=4, unique=True),
    st.sampled_from(["none", "gaussian", "budget"]),
    st.booleans(),
)
def test_config_round_trip(k, extra, eps, seeds, kind, with_sweep):
    raw = {**MINIMAL, "k": k, "q": k + extra, "p": k + extra + 1, "epsilon": eps, "seeds": seeds,
           "noise": {"kind": kind, "stddev": 0.01, "fraction": 0.5}}
    if with_sweep:
        raw["sweep"] = {"tau": [1.0, 2.0], "noise.fraction": [0.1]}
    cfg = ExperimentConfig.from_dict(raw)
    text = dump_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert dump_config(again) == text


def test_points_expand_in_axis_order():
    cfg = ExperimentConfig.from_dict({**MINIMAL, "sweep": {"k": [1, 2], "tau": [1.0, 3.0]}})
    assert cfg.points() == [{"k": 1, "tau": 1.0}, {"k": 1, "tau": 3.0}, {"k": 2, "tau": 1.0}, {"k": 2, "tau": 3.0}]
    assert cfg.at_point({"k": 1}).k == 1


def test_summarize_recomputes_from_files(tmp_path):
    raw = {**MINIMAL, "seeds": [0, 1]}
    assert main(["run", str(write_config(tmp_path, raw))]) == 0
    path = summarize_dir(tmp_path / "out")
    assert path.name == "summary.csv"

from __future__ import annotations

import json
import math

import pytest
from click.testing import CliRunner

from hardwall.core_field import C0
from hardwall.errors import ConfigInvalidError
from hardwall.harness.cli import main
from hardwall.harness.config import EXPERIMENTS, ExperimentConfig, load_config
from hardwall.harness.output import csv_text, format_value, read_summaries, write_outputs
from hardwall.harness.experiments import ExperimentResult
from hardwall.stats import TestReport


def test_config_file_with_aliases(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("experiment = martingale\nn = 12  # depth\nreplicas = 7\nalpha = 0.5*c0, 0.3\nk = 8\nout = res\n")
    cfg = load_config(p).resolved()
    assert (cfg.n, cfg.replicas, cfg.k_plus_delta, cfg.output_dir) == (12, 7, 8, "res")
    assert cfg.alphas == pytest.approx((0.5 * C0, 0.3))
    assert cfg.echo()["alphas"] == list(cfg.alphas)
    assert load_config(p, replicas=3).replicas == 3


def test_config_with_section_header(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[experiment]\nexperiment = mean\nseed = 0x10\n")
    assert load_config(p).seed == 16


@pytest.mark.parametrize("text", [
    "n = 3\n",
    "experiment = mean\ncolour = blue\n",
    "experiment = mean\nn = many\n",
    "experiment = mean\nalpha = fast\n",
])
def test_config_file_errors(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigInvalidError):
        load_config(p).resolved()


@pytest.mark.parametrize("kwargs", [
    dict(experiment="nope"),
    dict(experiment="mean", replicas=0),
    dict(experiment="mean", n=25),
    dict(experiment="mean", dx=0.5),
    dict(experiment="martingale", alphas=(2.0,)),
    dict(experiment="mean", seed=-1),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigInvalidError):
        ExperimentConfig(**kwargs).resolved()


def test_reference_defaults_cover_all_experiments():
    for name in EXPERIMENTS:
        cfg = ExperimentConfig(name).resolved()
        assert cfg.replicas >= 1 and cfg.n >= 0
    assert ExperimentConfig("martingale").resolved().alphas == (C0 / 2,)


def test_csv_format():
    assert format_value(1 / 3) == "0.333333333"
    assert format_value(12345678912.0) == "1.23456789e+10"
    assert format_value(7) == "7"
    assert format_value(True) == "1"
    text = csv_text(["a", "b"], [[1, 0.5], [2, math.pi]])
    assert text == "a,b\n1,0.5\n2,3.14159265\n"
    assert csv_text(["a"], []) == "a\n"


def test_write_outputs_mirrors_reports(tmp_path):
    res = ExperimentResult("demo", [TestReport("demo.x", 0.1, 0.2, {"k": 1})],
                           {"demo": (["k", "v"], [[1, 0.25]])}, {"gap": 1e-4})
    s = write_outputs(res, {"experiment": "demo"}, 1.5, tmp_path)
    assert s["all_passed"]
    assert (tmp_path / "demo.csv").read_text() == "k,v\n1,0.25\n"
    back = read_summaries(tmp_path)[0]
    assert back["reports"][0] == {"name": "demo.x", "statistic": 0.1, "threshold": 0.2,
                                  "passed": True, "metadata": {"k": 1}}
    assert not list(tmp_path.glob("*.tmp"))


def _run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_cli_reruns_are_byte_identical(tmp_path, cache_dir, table):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        r = _run(["run", "mean", "--n", "8", "--replicas", "5", "--seed", "3",
                  "--cache-dir", str(cache_dir), "--out", str(out)])
        assert r.exit_code in (0, 1), r.output
        outs.append(out)
    assert (outs[0] / "mean.csv").read_bytes() == (outs[1] / "mean.csv").read_bytes()
    a, b = (json.loads((o / "mean.summary.json").read_text()) for o in outs)
    a.pop("wall_seconds"), b.pop("wall_seconds")
    assert a["reports"] == b["reports"] and a["certificates"] == b["certificates"]
    rep = _run(["report", str(outs[0])])
    assert "mean.conditional_variance" in rep.output


def test_cli_error_exit_codes(tmp_path, cache_dir):
    r = _run(["run", "mean", "--n", "25", "--cache-dir", str(cache_dir), "--out", str(tmp_path)])
    assert r.exit_code == 2
    assert "memory guard" in r.output
    empty = tmp_path / "empty"
    empty.mkdir()
    assert _run(["report", str(empty)]).exit_code == 2


def test_cli_tables_selftest(tmp_path, cache_dir, table):
    r = _run(["tables", "--cache-dir", str(cache_dir)])
    assert r.exit_code == 0 and r.output.startswith("loaded")
    r = _run(["run", "tables_selftest", "--cache-dir", str(cache_dir), "--out", str(tmp_path)])
    assert r.exit_code == 0, r.output

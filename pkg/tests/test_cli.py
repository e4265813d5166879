import json
import subprocess
import sys

import numpy as np
import pytest

from losmass.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, TRACE_HEADER, build_seeds,
                         config_from_sections, echo_sections, execute, load_config, main,
                         trace_rows)
from losmass.io import (ArtifactWriter, ConfigError, DataError, EmptyDataWarning, format_data,
                        format_value, parse_config_text, parse_data_file, parse_data_lines, read_csv,
                        read_numeric_csv, write_csv, write_json)
from losmass.model import KinematicDatum
from losmass.sampler import run_chains, uncertainty_envelope


class TestDataFile:
    def test_line(self):
        assert parse_data_lines(["12.5 210.0 15.0"]) == [KinematicDatum(12.5, 210.0, 15.0)]

    def test_comments_only(self, tmp_path):
        f = tmp_path / "d.txt"
        f.write_text("# nothing\n\n# here\n")
        with pytest.warns(EmptyDataWarning):
            assert parse_data_file(f) == []

    def test_non_numeric(self):
        with pytest.raises(DataError, match="line 1: non-numeric r_p"):
            parse_data_lines(["abc 1 2"])

    @pytest.mark.parametrize("line,msg", [("-1 2 3", "line 2: r_p"), ("1 2 -3", "line 2: sigma_v3"),
                                          ("1 2", "line 2: expected 3"), ("1 x 2", "non-numeric v3")])
    def test_invalid(self, line, msg):
        with pytest.raises(DataError, match=msg):
            parse_data_lines(["1 2 3", line])

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        data = [KinematicDatum(*x) for x in np.abs(rng.normal(size=(50, 3))) * [10, 300, 20]]
        f = tmp_path / "d.txt"
        f.write_text(format_data(data, "header\nline two"))
        assert parse_data_file(f) == data


class TestConfig:
    def test_sections(self):
        s = parse_config_text("mode = run\n# c\nsampler.s1 = 5.0\nlikelihood.M0 = 4e11\n")
        assert s == {"run": {"mode": "run"}, "sampler": {"s1": "5.0"}, "likelihood": {"M0": "4e11"}}

    @pytest.mark.parametrize("text", ["a.b = 1\na.b = 2\n", "no equals\n", " = 3\n"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    @pytest.mark.parametrize("sections", [{"sampler": {"bogus": "1"}}, {"nosuch": {"a": "1"}},
                                          {"sampler": {"s1": "abc"}}, {"sampler": {"s1": "-1"}},
                                          {"run": {"mode": "dance"}}, {"synth": {"kind": "king"}}])
    def test_rejected(self, sections):
        sections = {"run": {"mode": "synth"}, **sections} if "run" not in sections else sections
        with pytest.raises(ConfigError):
            config_from_sections(sections)

    def test_missing_data(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            config_from_sections({"run": {"mode": "run", "data": str(tmp_path / "missing.txt")}})

    def test_echo_round_trip(self, tmp_path):
        (tmp_path / "d.txt").write_text("1 2 3\n")
        cfg = config_from_sections({
            "run": {"mode": "fbst", "data": str(tmp_path / "d.txt"), "output": str(tmp_path)},
            "sampler": {"s1": "7.5", "n_chains": "3", "t_min": "1"},
            "likelihood": {"window_radius": "15", "mass_constraint": "1", "R_E": "8.7"},
            "grid": {"r_min": "0.2", "r_max": "30"}, "synth": {"kind": "wd", "r_a": "4"},
        })
        again = config_from_sections(echo_sections(cfg))
        assert again == cfg
        assert parse_config_text("".join(
            f"{s}.{k} = {v}\n" for s, vals in echo_sections(cfg).items() for k, v in vals.items()))


class TestTables:
    def test_csv_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = [(k, float(x), bool(k % 2)) for k, x in enumerate(rng.normal(size=30) * 1e11)]
        write_csv(tmp_path / "t.csv", ("k", "x", "flag"), rows)
        cols = read_numeric_csv(tmp_path / "t.csv")
        assert cols["x"] == [r[1] for r in rows]
        assert cols["flag"] == [float(r[2]) for r in rows]

    def test_json_non_finite(self, tmp_path):
        write_json(tmp_path / "s.json", {"a": float("inf"), "b": [1.5, float("nan")]})
        assert json.loads((tmp_path / "s.json").read_text()) == {"a": "inf", "b": [1.5, "nan"]}

    def test_writer_partial(self, tmp_path):
        w = ArtifactWriter(tmp_path)
        w.path("a.txt").write_text("x")
        assert (tmp_path / "a.txt.partial").exists() and not (tmp_path / "a.txt").exists()
        w.commit()
        assert (tmp_path / "a.txt").read_text() == "x"


SYNTH = "mode = synth\noutput = syn\nsynth.n = 150\nsynth.seed = 3\n"
RUN = """mode = run
data = syn/data.txt
output = {out}
grid.r_min = 0.2
grid.r_max = 30.0
grid.n_r = 10
grid.n_e = 8
likelihood.window_radius = 15.0
likelihood.mass_constraint = 1
likelihood.M0 = 4.06e11
likelihood.deltaM0 = 0.2e11
likelihood.R_E = 8.7
sampler.total_steps = 120
sampler.n_chains = 2
sampler.s1 = 10
sampler.s2 = 10
sampler.T0 = 4
sampler.t_min = 1
fbst.n_runs = 2
fbst.steps = 40
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "synth.cfg").write_text(SYNTH)
    assert main([str(d / "synth.cfg")]) == 0
    for out in ("res", "res2"):
        (d / f"{out}.cfg").write_text(RUN.format(out=out))
    return d


def test_synth_artifacts(workdir):
    truth = json.loads((workdir / "syn" / "truth.json").read_text())
    assert truth["n"] == 150 and truth["df"]["kind"] == "gauss"
    assert len(parse_data_file(workdir / "syn" / "data.txt")) == 150


def test_run_artifacts(workdir):
    assert main([str(workdir / "res.cfg")]) == 0
    out = workdir / "res"
    names = {p.name for p in out.iterdir()}
    assert {"trace_0.csv", "trace_1.csv", "rho.csv", "df.csv", "summary.json"} <= names
    assert not any(n.endswith(".partial") for n in names)
    header, rows = read_csv(out / "trace_0.csv")
    assert tuple(header) == TRACE_HEADER and len(rows) == 121
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["rhat"]) == {"log_enclosed_mass_8.7", "log_total_mass", "log_likelihood"}
    cfg = load_config(workdir / "res.cfg")
    echoed = {s: {k: format_value(v) for k, v in vals.items()} for s, vals in summary["config"].items()}
    assert config_from_sections(echoed) == cfg


def test_artifacts_parse_back(workdir):
    # the traces and profile on disk equal the in-memory chain state exactly
    cfg = load_config(workdir / "res.cfg")
    data = parse_data_file(cfg.data)
    chains = run_chains(data, build_seeds(cfg, data), cfg.sampler, cfg.likelihood)
    for i, chain in enumerate(chains):
        cols = read_numeric_csv(workdir / "res" / f"trace_{i}.csv")
        expected = list(zip(*trace_rows(chain, 8.7)))
        for name, col in zip(TRACE_HEADER, expected):
            assert cols[name] == [float(v) for v in col]
    best = max(chains, key=lambda c: c.best().log_likelihood)
    env = uncertainty_envelope(best, cfg.sampler.burn_in)
    rho = read_numeric_csv(workdir / "res" / "rho.csv")
    assert rho["rho"] == env.rho.tolist() and rho["rho_sigma"] == env.rho_sigma.tolist()
    assert rho["r_lo"] == env.best.rho.grid.edges[:-1].tolist()


def test_rerun_bit_identical(workdir):
    assert main([str(workdir / "res2.cfg")]) == 0
    if not (workdir / "res" / "summary.json").exists():
        assert main([str(workdir / "res.cfg")]) == 0
    a, b = workdir / "res", workdir / "res2"
    for p in sorted(a.iterdir()):
        if p.name == "summary.json":
            sa, sb = json.loads(p.read_text()), json.loads((b / p.name).read_text())
            sa["config"]["run"].pop("output"), sb["config"]["run"].pop("output")
            assert sa == sb
        else:
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_fbst_and_report(workdir):
    assert main([str(workdir / "res.cfg"), "--mode", "fbst"]) == 0
    ev = json.loads((workdir / "res" / "evidence.json").read_text())
    assert {"X", "Y", "pr_T", "ev_standard", "evidence_if_pr_T",
            "evidence_if_one_minus_pr_T"} <= set(ev)
    assert ev["ev_standard"] == pytest.approx(1 - ev["X"] / ev["Y"])
    assert (workdir / "res" / "fbst_trace_1.csv").exists()
    assert main([str(workdir / "res.cfg"), "--mode", "report"]) == 0
    text = (workdir / "res" / "report.txt").read_text()
    assert "ev_standard" in text


def test_exit_codes(tmp_path, workdir):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mode = run\nsampler.s1 = zero\n")
    assert main([str(bad)]) == EXIT_CONFIG
    assert main([str(tmp_path / "absent.cfg")]) == EXIT_CONFIG

    (tmp_path / "junk.txt").write_text("1 2 3\nabc 1 2\n")
    cfg = tmp_path / "junk.cfg"
    cfg.write_text("mode = run\ndata = junk.txt\noutput = out\n")
    assert main([str(cfg)]) == EXIT_DATA

    # the seed potential is far too shallow for these speeds: zero support
    (tmp_path / "fast.txt").write_text("".join(f"{1 + k} {v} 1.0\n" for k, v in
                                               enumerate([1e5, -3e5, 2e5, 4e5, -1e5])))
    cfg = tmp_path / "fast.cfg"
    cfg.write_text("mode = run\ndata = fast.txt\noutput = out2\nseed.sigma = 1.0\n"
                   "seed.auto_scale = false\n"
                   "sampler.total_steps = 5\nsampler.n_chains = 1\n")
    assert main([str(cfg)]) == EXIT_NUMERIC


def test_partial_on_failure(tmp_path, monkeypatch):
    from losmass import cli

    cfg = config_from_sections({"run": {"mode": "synth", "output": str(tmp_path / "o")},
                                "synth": {"n": "20"}})

    def broken(*args, **kwargs):
        raise ArithmeticError("boom")

    monkeypatch.setattr(cli, "write_json", broken)
    assert execute(cfg) == EXIT_NUMERIC
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert names == {"data.txt.partial"}


def test_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "losmass", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "config" in r.stdout

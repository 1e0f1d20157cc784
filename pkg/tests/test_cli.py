import csv
import json
from pathlib import Path

import pytest

from pncb.cli import CONFIG_SCHEMAS, build_parser, main

DESIGN = """
schema = "pncb-design/1"
name = "tiny"
[lppam]
M = 2
T = 2
[objective]
sigma_p2 = 0.03
ebn0_db = 10.0
mode = "exact"
[search]
max_evaluations = 40
rng_seed = 5
[report]
points = [{ sigma_p2 = 0.03, ebn0_db = 10.0 }, { sigma_p2 = 0.0, ebn0_db = 10.0 }]
"""


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def designed(tmp_path_factory):
    d = tmp_path_factory.mktemp("design")
    cfg = write(d / "tiny.toml", DESIGN)
    assert main(["design", "--config", str(cfg), "--out", str(d / "a")]) == 0
    assert main(["design", "--config", str(cfg), "--out", str(d / "b")]) == 0
    return d


def test_design_outputs_and_determinism(designed):
    a, b = designed / "a", designed / "b"
    for name in ("config.json", "design.json", "codebook.json", "trace.csv", "report.json", "metrics.csv",
                 "trace.png", "manifest.json"):
        assert (a / name).is_file(), name
    for name in ("design.json", "codebook.json", "trace.csv", "report.json", "metrics.csv", "trace.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = read_rows(a / "metrics.csv")
    assert [float(r["sigma_p2"]) for r in rows] == [0.03, 0.0]
    assert len(read_rows(a / "trace.csv")) == 40
    man = json.loads((a / "manifest.json").read_text())
    assert man["subcommand"] == "design" and man["seeds"] == {"rng_seed": 5}
    assert set(man["outputs"]) >= {"codebook.json", "trace.png"}
    assert man["config"]["name"] == "tiny"


def test_seed_flag_overrides_config(designed, tmp_path):
    assert main(["design", "--config", str(designed / "tiny.toml"), "--seed", "6", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "design.json").read_text())["rng_seed"] == 6


def test_metrics_bytes_are_reproducible(designed, tmp_path):
    cb = designed / "a" / "codebook.json"
    cfg = write(tmp_path / "m.toml", f"""
schema = "pncb-metrics/1"
codebooks = ["{cb}"]
points = [{{ sigma_p2 = 0.01, ebn0_db = 10.0 }}, {{ sigma_p2 = 0.03, ebn0_db = 12.0 }}]
""")
    for out in ("x", "y"):
        assert main(["metrics", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "x/metrics.csv").read_bytes() == (tmp_path / "y/metrics.csv").read_bytes()
    rows = read_rows(tmp_path / "x/metrics.csv")
    assert len(rows) == 2 and all(r["mode"] == "exact" for r in rows)


def test_simulate_sweep_and_export(designed, tmp_path):
    cb = designed / "a" / "codebook.json"
    cfg = write(tmp_path / "s.toml", f"""
schema = "pncb-simulate/1"
codebooks = ["{cb}"]
detectors = ["ml-pn", "mpa-pn"]
ebn0_db = {{ start = 4.0, stop = 16.0, step = 2.0 }}
sigma_p2 = [0.0, 0.001, 0.01]
union_bound = true
batch = 500
[stopping]
min_errors = 20
max_bits = 12000
""")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    rows = read_rows(tmp_path / "sim/results.csv")
    assert len(rows) == 2 * 7 * 3
    assert {r["ebn0_db"] for r in rows} == {repr(float(x)) for x in range(4, 17, 2)}
    for r in rows:
        assert float(r["ber_lo"]) <= float(r["ber"]) <= float(r["ber_hi"])
        assert float(r["pep_bound"]) > 0
    for name in ("ber.png", "plotdata_ber.csv", "plotdata_ser.csv", "manifest.json"):
        assert (tmp_path / "sim" / name).is_file()
    wide = read_rows(tmp_path / "sim/plotdata_ber.csv")
    assert len(wide) == 7 and len(wide[0]) == 1 + 2 * 3

    out = tmp_path / "exp"
    assert main(["export-plotdata", str(tmp_path / "sim"), str(designed / "a/trace.csv"), "--out", str(out)]) == 0
    assert (out / "plotdata_ber.csv").read_bytes() == (tmp_path / "sim/plotdata_ber.csv").read_bytes()
    assert (out / "trace.png").is_file()


def test_validate(designed, tmp_path, capsys):
    assert main(["validate", str(designed / "a/codebook.json"), str(designed / "tiny.toml")]) == 0
    assert "ok" in capsys.readouterr().out
    bad = json.loads((designed / "a/codebook.json").read_text())
    bad["M"] = 3
    p = write(tmp_path / "bad.json", json.dumps(bad))
    assert main(["validate", str(p)]) == 3
    assert "schema error" in capsys.readouterr().err
    assert main(["validate", str(write(tmp_path / "x.json", "{not json"))]) == 3


@pytest.mark.parametrize("bundled", ["pncb1", "pncb2", "pncb3", "metrics", "simulate"])
def test_bundled_configs_validate(bundled):
    from importlib import resources

    ref = resources.files("pncb").joinpath("configs", bundled + ".toml")
    with resources.as_file(ref) as f:
        assert main(["validate", str(f)]) == 0


@pytest.mark.parametrize("text, where", [
    ('schema = "pncb-design/1"\n[lppam]\nM = 4\nT = 2\n', "objective"),
    (DESIGN.replace("M = 2", "M = 3"), "lppam"),
    (DESIGN + "\nspeed = 3\n", "speed"),
    (DESIGN.replace("sigma_p2 = 0.03\nebn0", "sigma_p2 = -1.0\nebn0"), "/objective/sigma_p2"),
    ('schema = "pncb-metrics/1"\ncodebooks = ["a.json"]\npoints = [{ sigma_p2 = 0.0, ebn0_db = 10.0 }]\n',
     "/schema"),
    ("this is = = not toml", "toml"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, where):
    cfg = write(tmp_path / "c.toml", text)
    assert main(["design", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err
    if where != "toml":
        assert where in err


def test_missing_inputs_exit_2(tmp_path):
    assert main(["metrics", "--config", str(tmp_path / "none.toml")]) == 2
    cfg = write(tmp_path / "m.toml", 'schema = "pncb-metrics/1"\ncodebooks = ["nowhere.json"]\n'
                                     'points = [{ sigma_p2 = 0.0, ebn0_db = 10.0 }]\n')
    assert main(["metrics", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["export-plotdata", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
    assert main(["design", "--config", str(cfg), "--workers", "0"]) == 2


def test_schema_error_in_codebook_input_exits_3(designed, tmp_path):
    bad = json.loads((designed / "a/codebook.json").read_text())
    del bad["codebooks"]
    cb = write(tmp_path / "bad.json", json.dumps(bad))
    cfg = write(tmp_path / "m.toml", f'schema = "pncb-metrics/1"\ncodebooks = ["{cb}"]\n'
                                     'points = [{ sigma_p2 = 0.0, ebn0_db = 10.0 }]\n')
    assert main(["metrics", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_budget_refusal_exits_4(designed, tmp_path, capsys):
    cb = designed / "a" / "codebook.json"
    cfg = write(tmp_path / "m.toml", f"""
schema = "pncb-metrics/1"
codebooks = ["{cb}"]
points = [{{ sigma_p2 = 0.01, ebn0_db = 10.0 }}]
[enumeration]
mode = "exact"
max_pairs = 100
""")
    assert main(["metrics", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4
    assert "budget refusal" in capsys.readouterr().err


def test_parser_exposes_common_flags():
    ap = build_parser()
    for cmd in ("design", "metrics", "simulate"):
        ns = ap.parse_args([cmd, "--config", "x", "--seed", "3", "--workers", "2", "--out", "o"])
        assert (ns.seed, ns.workers, ns.out) == (3, 2, "o")
    with pytest.raises(SystemExit):
        ap.parse_args(["metrics"])
    assert set(CONFIG_SCHEMAS) == {"pncb-design/1", "pncb-metrics/1", "pncb-simulate/1"}


def test_design_with_scattering_ratios(tmp_path):
    cfg = write(tmp_path / "m8.toml", """
schema = "pncb-design/1"
[lppam]
M = 8
T = 4
[objective]
sigma_p2 = 0.01
ebn0_db = 15.0
[search]
max_evaluations = 1
""")
    assert main(["design", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    design = json.loads((tmp_path / "o/design.json").read_text())
    assert design["alpha"] == [1.0]
    assert read_rows(tmp_path / "o/metrics.csv")[0]["mode"] == "pruned"

import csv
import io
import json
import runpy
from dataclasses import replace
from pathlib import Path

import pytest

from cimeval import runner
from cimeval.cli import main, parse_cache_spec
from cimeval.memsim import CacheLevelConfig, HierarchyConfig
from cimeval.offload import CimCapability
from cimeval.trace import parse_trace

DEMOS = Path(__file__).resolve().parent.parent / "demos"

THREE_HIERARCHIES = [
    {"l1": {"capacity": 32 << 10, "associativity": 4}, "l2": {"capacity": 256 << 10, "associativity": 8}},
    {"l1": {"capacity": 64 << 10, "associativity": 4}, "l2": {"capacity": 256 << 10, "associativity": 8}},
    {"l1": {"capacity": 64 << 10, "associativity": 4}, "l2": {"capacity": 2 << 20, "associativity": 8}},
]


def test_llos_fully_offloaded():
    o = runner.run_one(runner.RunConfig(), "llos")
    assert o.cim["macr"] == 1.0 and o.baseline["macr"] == 0.0
    assert o.comparison["cim_favorable"] is True
    assert o.cim["eliminated_accesses"] == o.cim["memory_accesses"] == 300


def test_disabled_cim_equals_baseline():
    o = runner.run_one(runner.RunConfig(capability=CimCapability(levels=frozenset())), "random_mix")
    assert o.cim == o.baseline
    c = o.comparison
    assert (c["energy_improvement"], c["speedup"], c["macr"]) == (1.0, 1.0, 0.0)
    assert c["proc_ratio"] is None and c["cim_favorable"] is False


def test_identical_reports_compare_as_unity():
    o = runner.run_one(runner.RunConfig(), "llos_imm")
    c = runner.compare(o.cim, o.cim)
    assert c["energy_improvement"] == 1.0 and c["speedup"] == 1.0
    assert c["delta_total_pj"] == 0.0 and c["proc_ratio"] is None


def test_fefet_cache_energy_lower():
    s = runner.run_one(runner.RunConfig(), "llos")
    f = runner.run_one(runner.RunConfig(technology="fefet_45nm", baseline_technology="fefet_45nm"), "llos")
    assert f.cim["energy"]["caches_pj"] < s.cim["energy"]["caches_pj"]
    assert f.baseline["energy"]["caches_pj"] < s.baseline["energy"]["caches_pj"]


def test_fingerprint_mismatch_refused():
    a = runner.run_one(runner.RunConfig(), "llos")
    b = runner.run_one(runner.RunConfig(cpi=2.0), "llos")
    with pytest.raises(runner.CompareError, match="fingerprint"):
        runner.compare(a.baseline, b.cim)
    with pytest.raises(runner.CompareError, match="schema"):
        runner.compare({**a.baseline, "schema_version": 9}, a.cim)
    # capability and technology are not part of the workload
    f = runner.run_one(runner.RunConfig(technology="fefet_45nm"), "llos")
    assert runner.compare(a.baseline, f.cim)["technology"] == "FeFET"


def test_low_macr_flagged_unfavorable(tmp_path):
    lines = ["0 LOAD r1, [0x1000]", "1 LOAD r2, [0x2000]", "2 ADD r3, r1, r2", "3 STORE r3, [0x3000]"]
    for k in range(80):
        lines += [f"{4 + 2 * k} LOAD r4, [{0x8000 + 64 * k:#x}]", f"{5 + 2 * k} SUB r5, r4, r5"]
    p = tmp_path / "sparse.trace"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    o = runner.run_one(runner.RunConfig(warmup=True), str(p))
    assert o.benchmark == "sparse"
    assert 0 < o.comparison["macr"] < 0.05
    assert o.comparison["energy_improvement"] > 1.0
    assert o.comparison["cim_favorable"] is False
    assert runner.compare(o.baseline, o.cim, min_macr=0.01)["cim_favorable"] is True


def test_reports_are_deterministic_and_fingerprinted(tmp_path):
    cfg = runner.RunConfig(traces=("llos_chain", "lcs_micro"), output_dir=str(tmp_path / "a"))
    runner.run(cfg)
    runner.run(replace(cfg, output_dir=str(tmp_path / "b")))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 6
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    rep = json.loads((tmp_path / "a" / "lcs_micro.cim.json").read_text())
    body = {k: v for k, v in rep.items() if k != "fingerprint"}
    assert rep["fingerprint"] == runner._sha(body)
    assert rep["schema_version"] == runner.SCHEMA_VERSION


def test_sweep_one_row_per_config():
    cfg = runner.RunConfig.from_dict({"traces": ["lcs_micro"], "sweep": {"hierarchies": THREE_HIERARCHIES}})
    rows = runner.sweep(cfg)
    assert [r["config"] for r in rows] == [
        "L1 32kB/4-way + L2 256kB/8-way", "L1 64kB/4-way + L2 256kB/8-way", "L1 64kB/4-way + L2 2MB/8-way"
    ]
    parsed = list(csv.DictReader(io.StringIO(runner.sweep_csv(rows))))
    assert len(parsed) == 3 and list(parsed[0]) == list(runner.CSV_COLUMNS)


def test_parallel_sweep_matches_serial():
    cfg = runner.RunConfig.load(DEMOS / "cache_sweep.json")
    assert cfg.workers == 2 and len(runner.sweep_points(cfg)) == 6
    assert runner.sweep(cfg) == runner.sweep(replace(cfg, workers=1))


@pytest.mark.parametrize(
    "data, message",
    [
        ({"colour": "red"}, "unknown run config key"),
        ({"sweep": {"depths": [1]}}, "unknown sweep axis"),
        ({"sweep": {}}, "must not all be empty"),
        ({"capability": {"speed": 1}}, "unknown capability key"),
        ({"cpi": 0}, "cpi"),
        ({"output_format": "xml"}, "output format"),
    ],
)
def test_config_errors(data, message):
    with pytest.raises(runner.ConfigError, match=message):
        runner.RunConfig.from_dict(data)


def test_config_paths_relative_to_file(tmp_path):
    (tmp_path / "t.trace").write_text("0 NOP\n", encoding="utf-8")
    (tmp_path / "cfg.json").write_text(json.dumps({"traces": ["t.trace", "llos"]}), encoding="utf-8")
    cfg = runner.RunConfig.load(tmp_path / "cfg.json")
    assert cfg.traces == (str(tmp_path / "t.trace"), "llos")
    with pytest.raises(runner.ConfigError, match="trace not found"):
        runner.load_trace(str(tmp_path / "missing.trace"))
    with pytest.raises(runner.ConfigError):
        runner.run(runner.RunConfig())
    with pytest.raises(runner.ConfigError, match="sweep axis"):
        runner.sweep(runner.RunConfig(traces=("llos",)))


def test_cache_spec_parsing():
    base = CacheLevelConfig(64 << 10, 4, 64, 4)
    assert parse_cache_spec("32kB/4", base) == CacheLevelConfig(32 << 10, 4, 64, 4)
    assert parse_cache_spec("2MB/8-way/16", base) == CacheLevelConfig(2 << 20, 8, 64, 16)
    with pytest.raises(Exception):
        parse_cache_spec("big", base)


# --------------------------------------------------------------------------
# command line


def test_cli_run_and_compare(tmp_path, capsys):
    out = tmp_path / "r"
    dump = tmp_path / "plan.json"
    assert main(["run", "llos", "--out", str(out), "--dump-plan", str(dump)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split()[:3] == ["benchmark", "technology", "macr"]
    assert "1.0000" in table
    assert json.loads(dump.read_text())["eliminated_accesses"] == 300
    assert main(["compare", str(out / "llos.baseline.json"), str(out / "llos.cim.json"), "--emit", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["macr"] == 1.0


def test_cli_run_flags(tmp_path, capsys):
    assert main(["run", "lcs_micro", "--tech", "fefet_45nm", "--cim-levels", "L2", "--max-fused", "3",
                 "--l1", "32kB/4", "--l2", "2MB/8", "--cpi", "1.5", "--warmup", "--emit", "json"]) == 0
    (rep,) = json.loads(capsys.readouterr().out)
    cfg = rep["cim"]["config"]
    assert cfg["capability"]["levels"] == ["L2"] and cfg["capability"]["max_fused_nodes"] == 3
    assert cfg["hierarchy_label"] == "L1 32kB/4-way + L2 2MB/8-way"
    assert cfg["cpi"] == 1.5 and cfg["warmup"] is True
    assert main(["run", "llos", "--cim-levels", "none", "--emit", "csv"]) == 0
    row = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))[0]
    assert row["cim_levels"] == "none" and row["proc_ratio"] == "n/a"


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(DEMOS / "cache_sweep.json"), "--workers", "1", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 12 and {r["technology"] for r in rows} == {"SRAM", "FeFET"}


def test_cli_gen_and_dumps(tmp_path, capsys):
    trace = tmp_path / "g.trace"
    assert main(["gen", "llos-imm:xor", "--count", "5", "--seed", "2", "-o", str(trace)]) == 0
    assert len(parse_trace(trace.read_text())) == 15
    assert main(["gen", "random-mix", "--count", "7"]) == 0
    assert len(parse_trace(capsys.readouterr().out)) == 7
    assert main(["dump-idg", str(trace)]) == 0
    assert len(json.loads(capsys.readouterr().out)["roots"]) == 5
    assert main(["dump-idg", str(trace), "--cim-ops", "ADD"]) == 0
    assert json.loads(capsys.readouterr().out)["roots"] == []
    assert main(["dump-plan", str(trace), "--warmup"]) == 0
    assert len(json.loads(capsys.readouterr().out)["candidates"]) == 5


def test_cli_errors_are_tagged(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.trace")]) == 1
    assert "cimeval: [runner] trace not found" in capsys.readouterr().err
    bad = tmp_path / "bad.trace"
    bad.write_text("0 LOAD r1\n", encoding="utf-8")
    assert main(["run", str(bad)]) == 1
    assert "[trace] line 1" in capsys.readouterr().err
    a = tmp_path / "a"
    main(["run", "llos", "--out", str(a)])
    main(["run", "llos", "--cpi", "2", "--out", str(tmp_path / "b")])
    capsys.readouterr()
    assert main(["compare", str(a / "llos.baseline.json"), str(tmp_path / "b" / "llos.cim.json")]) == 1
    assert "refusing to compare" in capsys.readouterr().err
    assert main(["dump-plan", "llos", "lcs_micro"]) == 1
    assert main(["run", "llos", "--tech", str(tmp_path / "none.ini")]) == 1


@pytest.mark.parametrize("script", ["quickstart.py", "technology_comparison.py", "cache_sweep.py"])
def test_demo_scripts_run(script, capsys):
    runpy.run_path(str(DEMOS / script), run_name="__main__")
    assert capsys.readouterr().out.strip()

import json
import subprocess
import sys

import pytest

from arprotect.cli import main
from arprotect.config import PipelineConfig, save_config
from arprotect.detector import GwoConfig
from arprotect.fuzzy import GaConfig

GRID = """
[grid]
seed = 5

[grid.fault]
fault_type = ag, bc
inception_angle = 0, 60, 120, 180, 240, 300
location = 2, 4, 7

[grid.capacitor_switch]
location = 5, 8
inception_angle = 0, 90, 180, 270
rating = 1, 2

[grid.load_switch]
location = 5, 8
inception_angle = 0, 90, 180, 270
rating = 1, 2
"""


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "grid.ini").write_text(GRID)
    save_config(PipelineConfig(ga=GaConfig(population=10, generations=4), gwo=GwoConfig(population=6, max_iter=4)),
                root / "cfg.ini")
    assert main(["generate", str(root / "grid.ini"), "--out", str(root / "corpus")]) == 0
    return root


def run(*argv):
    return main([str(a) for a in argv])


def test_generate_deterministic(corpus_dir, tmp_path):
    assert run("generate", corpus_dir / "grid.ini", "--out", tmp_path / "again") == 0
    for rel in ("manifest.csv", "records/case00000_w.csv", "records/case00050_g.csv"):
        assert (tmp_path / "again" / rel).read_bytes() == (corpus_dir / "corpus" / rel).read_bytes()


def test_generate_parallel_matches(corpus_dir, tmp_path):
    assert run("generate", corpus_dir / "grid.ini", "--out", tmp_path / "par", "--jobs", 2) == 0
    assert (tmp_path / "par" / "manifest.csv").read_bytes() == (corpus_dir / "corpus" / "manifest.csv").read_bytes()


def test_full_command_chain(corpus_dir, tmp_path, capsys):
    man = corpus_dir / "corpus" / "manifest.csv"
    cfg = corpus_dir / "cfg.ini"
    assert run("detect", "--manifest", man, "--config", cfg, "--out", tmp_path / "det", "--tune-beta") == 0
    assert (tmp_path / "det" / "config.ini").exists()
    assert (tmp_path / "det" / "detections.csv").read_text().startswith("case_id,end,event_time,dd_peak")

    assert run("extract", "--manifest", man, "--config", cfg, "--out", tmp_path / "ext", "--catalog") == 0
    assert run("select", "--manifest", man, "--features", tmp_path / "ext" / "catalog.csv",
               "--task", "region", "--k", 5, "--out", tmp_path / "sel") == 0
    assert len((tmp_path / "sel" / "ranking.csv").read_text().splitlines()) == 6

    assert run("tune-fuzzy", "--manifest", man, "--config", cfg, "--out", tmp_path / "fz") == 0
    assert (tmp_path / "fz" / "fuzzy.txt").read_text().startswith("arprotect-fuzzy 1")

    assert run("train", "--manifest", man, "--config", cfg, "--out", tmp_path / "models") == 0
    assert run("evaluate", "--manifest", man, "--models", tmp_path / "models", "--out", tmp_path / "ev") == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert set(rep["stages"]) == {"detection", "region", "location", "phase", "faulttype"}
    assert "accuracy=" in capsys.readouterr().out


def test_report_byte_identical(corpus_dir, tmp_path):
    man = corpus_dir / "corpus" / "manifest.csv"
    cfg = corpus_dir / "cfg.ini"
    for name in ("a", "b"):
        assert run("report", "--manifest", man, "--config", cfg, "--out", tmp_path / name, "--seed", 3) == 0
    for rel in ("report.json", "summary.csv", "decisions.csv", "config.ini", "models/bundle.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_relay_command(tmp_path):
    assert run("relay", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "relay_summary.json").read_text())
    assert summary["max_rel_deviation"] > 0.05


def test_missing_manifest_is_operational_error(tmp_path, capsys):
    assert run("extract", "--manifest", tmp_path / "nope.csv", "--out", tmp_path) == 1
    assert capsys.readouterr().err.startswith("ERROR FileNotFoundError:")


def test_bad_config_is_operational_error(corpus_dir, tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[pipeline]\nbeta = 7\n")
    assert run("extract", "--manifest", corpus_dir / "corpus" / "manifest.csv", "--config", tmp_path / "bad.ini",
               "--out", tmp_path) == 1
    assert capsys.readouterr().err.startswith("ERROR ConfigError:")


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["extract", "--out", "x"],
    ["generate", "--out", "x"],
    ["evaluate", "--manifest", "m.csv", "--out", "x"],
    ["extract", "--jobs", "0", "--manifest", "m.csv", "--out", "x"],
    ["detect", "--end-mode", "triple"],
])
def test_usage_errors_exit_2(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 2
    assert capsys.readouterr().err.startswith("ERROR usage:")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "arprotect", "relay", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "deviation" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "arprotect"], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stderr.startswith("ERROR usage:")

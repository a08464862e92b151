from __future__ import annotations

import json
import logging
from pathlib import Path

import pytest

from fragcorridor.cli import ConfigError, main, parse_config, run

BASE = """\
# corridor around the typical speed
measure = binary-uniform
v = 1.0
a = 0.5
b = 16.0
"""


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_valid_config():
    cfg = parse_config(BASE + "seed = 4\nhorizons = 6, 8\n")
    assert (cfg.v, cfg.a, cfg.b, cfg.seed) == (1.0, 0.5, 16.0, 4)
    assert cfg.horizons == (6.0, 8.0)


def test_missing_seed_defaults_with_notice(caplog):
    with caplog.at_level(logging.INFO, logger="fragcorridor"):
        cfg = parse_config(BASE)
    assert cfg.seed == 0
    assert any("seed" in r.getMessage() for r in caplog.records)


def test_all_violations_reported_with_lines():
    text = "measure = binary-uniform\nv = 1\na = 2.0\nb = 1.0\ncolour = red\nreplicas = many\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    problems = exc.value.problems
    assert any(p.startswith("line 4") and "a < b" in p for p in problems)
    assert any(p.startswith("line 5") and "unknown key" in p for p in problems)
    assert any(p.startswith("line 6") and "replicas" in p for p in problems)


def test_missing_required_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("measure = binary-uniform\nv = 1\na = 0.5\n")
    assert exc.value.problems == ["missing required key 'b'"]


def test_regime_checked_for_simulation(tmp_path):
    cfg = parse_config("measure = binary-uniform\nv = 1\na = 1.5\nb = 4\n")
    with pytest.raises(ConfigError):
        run(cfg, "simulate", tmp_path)
    assert run(cfg, "scale", tmp_path).results["rho"] > 0


def test_exit_codes(tmp_path):
    bad = _write(tmp_path, "measure = binary-uniform\nv = 1\na = 2\nb = 1\n", "bad.cfg")
    assert main(["scale", "--config", str(bad), "--out", str(tmp_path)]) == 2
    good = _write(tmp_path, BASE)
    assert main(["validate", "--config", str(good), "--out", str(tmp_path)]) == 0
    missing = tmp_path / "nope.cfg"
    assert main(["scale", "--config", str(missing), "--out", str(tmp_path)]) == 1


def test_extinction_reported(tmp_path):
    cfg = parse_config("measure = binary-uniform\nv = 1\na = 0.5\nb = 4\nhorizon = 40\n"
                       "replicas = 50\n")
    rec = run(cfg, "simulate", tmp_path)
    assert rec.results["extinct"] and rec.survivors == 0
    assert "extinction" in rec.results["growth"]


def _outputs(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file() and "timing" not in p.name}


@pytest.mark.parametrize("workers", ["1", "2"])
def test_outputs_byte_identical(tmp_path, monkeypatch, workers):
    cfg = _write(tmp_path, BASE + "horizon = 7\nreplicas = 12\nseed = 3\nhorizons = 6, 7\n"
                 "window_counts = true\nspectrum_points = 4\n")
    runs = []
    for k, w in enumerate(("1", workers)):
        monkeypatch.setenv("FRAGCORRIDOR_WORKERS", w)
        out = tmp_path / f"out{k}"
        for cmd in ("scale", "simulate", "dimension", "spectrum", "validate"):
            assert main([cmd, "--config", str(cfg), "--out", str(out)]) == 0
        (run_dir,) = list(out.iterdir())
        runs.append(_outputs(run_dir))
    assert runs[0] == runs[1]
    assert "martingale.csv" in runs[0] and "dimension.json" in runs[0]
    rec = json.loads(runs[0]["simulate_record.json"])
    assert rec["config"]["seed"] == 3 and "wall_clock" not in rec


def test_overrides_change_the_run_directory(tmp_path):
    cfg = _write(tmp_path, BASE)
    out = tmp_path / "o"
    main(["scale", "--config", str(cfg), "--out", str(out)])
    main(["scale", "--config", str(cfg), "--out", str(out), "--seed", "9"])
    assert len(list(out.iterdir())) == 2

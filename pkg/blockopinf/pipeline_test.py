import csv
import math
from pathlib import Path

import orjson
import pytest
from typer.testing import CliRunner

from .errors import ConfigError
from .main import app
from .pipeline import ALL_STAGES, STAGES, parse_stages, resolve_config, run_pipeline

DEFAULT_CONFIG = Path(__file__).parent.parent / "configs" / "default.ini"

SMALL_CONFIG = """
[fom]
m = 2
n_f = 16
steps = 400
frequencies_hz = 9.6, 38.2

[pod]
r_f = 4

[train]
k_train = 200

[regsearch]
count = 3
stages = 1
alpha = 1000
qois = lift, gdisp_1

[predict]
horizon = 400

[evaluate]
qois = lift, gdisp_1, gdisp_2

[compare]
repetitions = 3
evaluations = 10

[count]
r_s = 4
r_f_max = 6
"""

runner = CliRunner()


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_CONFIG)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_stages():
    assert parse_stages(None) == list(STAGES)
    assert parse_stages("train, simulate") == ["simulate", "train"]
    assert parse_stages(["compare"]) == ["compare"]
    with pytest.raises(ConfigError):
        parse_stages("simulate,fly")
    assert "compare" in ALL_STAGES and "compare" not in STAGES


def test_unknown_config_key_exits_1(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[train]\nk_trian = 10\n")
    result = runner.invoke(app, ["--config", str(path), "--out-dir", str(tmp_path / "out"), "run"])
    assert result.exit_code == 1


def test_missing_config_exits_1(tmp_path):
    result = runner.invoke(app, ["--config", str(tmp_path / "absent.ini"), "count"])
    assert result.exit_code == 1


def test_seed_flag_sets_run_and_fom_seeds(small_config):
    cfg = resolve_config(small_config, seed=7)
    assert cfg.run.seed == 7 and cfg.fom.seed == 7
    cfg = resolve_config(small_config)
    assert cfg.run.seed == 0 and cfg.fom.seed == 0


def test_random_cases_follow_the_seed(tmp_path, small_config):
    small_config.write_text(SMALL_CONFIG.replace("horizon = 400", "horizon = 400\nrandom_cases = 2"))
    digests = {}
    for name, seed in (("a", 3), ("b", 3), ("c", 4)):
        run = run_pipeline(small_config, ["simulate"], tmp_path / name, seed)
        digests[name] = [run.manifest[f"simulate/case_random{j}.bin"]["sha256"] for j in (1, 2)]
    assert digests["a"] == digests["b"]
    assert digests["a"][0] != digests["c"][0]
    assert digests["a"][0] != digests["a"][1]


def test_predict_without_training_exits_2(tmp_path, small_config):
    result = runner.invoke(app, ["--config", str(small_config), "--out-dir", str(tmp_path / "out"), "predict"])
    assert result.exit_code == 2


def test_count_and_flutter_commands(tmp_path, small_config):
    out = tmp_path / "out"
    result = runner.invoke(app, ["--config", str(small_config), "--out-dir", str(out), "count"])
    assert result.exit_code == 0
    rows = _rows(out / "count" / "parameters.csv")
    assert [int(r["r_f"]) for r in rows] == list(range(1, 7))
    assert all(int(r["block"]) < int(r["monolithic"]) for r in rows)

    result = runner.invoke(app, ["--config", str(small_config), "--out-dir", str(out), "flutter"])
    assert result.exit_code == 0
    assert len(_rows(out / "flutter" / "conditions.csv")) == 9
    manifest = orjson.loads((out / "manifest.json").read_bytes())
    assert {"count/parameters.csv", "flutter/conditions.csv", "flutter/parameter_names.csv"} <= set(manifest)


@pytest.mark.slow
def test_small_pipeline_is_deterministic(tmp_path, small_config):
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(app, ["--config", str(small_config), "--out-dir", str(out), "--stages",
                                     ",".join(ALL_STAGES), "run"])
        assert result.exit_code == 0, result.output
        manifest = orjson.loads((out / "manifest.json").read_bytes())
        for key in ("simulate/training.bin", "pod/fluid.bin", "search/block.json", "train/monolithic.ops",
                    "predict/block_train.bin", "evaluate/errors.csv", "compare/timing.csv"):
            assert key in manifest
        assert manifest["compare/timing.csv"]["volatile"] is True
        hashes.append({k: v["sha256"] for k, v in manifest.items() if not v.get("volatile")})
    assert hashes[0] == hashes[1]

    compare = _rows(tmp_path / "a" / "compare" / "compare.csv")
    assert len(compare) == 2 * 3
    for qoi in ("lift", "gdisp_1", "gdisp_2"):
        assert sorted(r["method"] for r in compare if r["qoi"] == qoi) == ["block", "monolithic"]


@pytest.mark.slow
def test_default_pipeline_accuracy(tmp_path):
    done = run_pipeline(DEFAULT_CONFIG, out_dir=tmp_path / "out")
    errors = {
        (row["method"], row["qoi"]): float(row["eps_rel"])
        for row in _rows(done.out / "evaluate" / "errors.csv")
        if row["case"] == "train"
    }
    for qoi in ("lift", "gdisp_1", "gdisp_2"):
        assert errors[("block", qoi)] <= 0.05, qoi
        # no dominance either way; both methods must produce a usable prediction
        assert math.isfinite(errors[("monolithic", qoi)]), qoi
        assert errors[("monolithic", qoi)] <= 1.0, qoi

import csv
import json

import numpy as np
import pytest

from adaptkit import io as aio
from adaptkit.cli import main
from adaptkit.config import ConfigError, load_config, parse_config
from adaptkit.flow import identity_flow, synthetic_flow, translation
from adaptkit.harness import RunConfig


def write_cfg(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


# -- config --------------------------------------------------------------------------------
def test_parse_nested_sections():
    cfg = parse_config(
        {
            "schema": 1,
            "run": {"objective": "dann", "lam": 1.0, "hidden": [8, 4]},
            "data": {"n_source": 50, "shift": {"rotation_deg": 10.0, "scale_dims": [1]}},
            "grid": [{"objective": "source_only"}, {"lam": 3.0}],
            "seeds": [0, 1],
        }
    )
    assert cfg["run"] == RunConfig(objective="dann", lam=1.0, hidden=(8, 4))
    assert cfg["data"].shift.rotation_deg == 10.0 and cfg["data"].shift.scale_dims == (1,)
    assert [g.objective for g in cfg["grid"]] == ["source_only", "dann_em"]
    assert cfg["seeds"] == [0, 1]


@pytest.mark.parametrize(
    "raw, msg",
    [
        ({"run": {}}, "schema"),
        ({"schema": 2}, "schema"),
        ({"schema": 1, "extra": 1}, "extra"),
        ({"schema": 1, "run": {"learning_rate": 0.1}}, "learning_rate"),
        ({"schema": 1, "data": {"shift": {"angle": 3}}}, "data.shift"),
        ({"schema": 1, "grid": {"lam": 1}}, "grid"),
        ({"schema": 1, "seeds": [-1]}, "seeds"),
        ([], "object"),
    ],
)
def test_bad_configs_rejected(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


# -- cli -----------------------------------------------------------------------------------
def test_landscape_writes_csv_and_json(tmp_path):
    out = tmp_path / "d"
    assert main(["landscape", "--gamma-inv", "0.3", "--out", str(out), "--n-classes", "2", "--grid-steps", "20"]) == 0
    with (out / "landscape.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["alpha", "value"] and len(rows) > 10
    summary = json.loads((out / "landscape.json").read_text())
    assert summary["gamma_inv"] == 0.3 and "brute_force" in summary


def test_gradcheck_passes(tmp_path, capsys):
    assert main(["gradcheck", "--points", "3", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert report["max_error"] < 1e-4
    assert "max error" in capsys.readouterr().out


def test_missing_config_exits_one(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert main(["train", "--config", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_subcommand_and_no_subcommand(capsys):
    assert main(["fly"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_unknown_key_exits_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", {"schema": 1, "run": {"momentum": 0.9}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "momentum" in capsys.readouterr().err


def test_train_then_eval_roundtrip(tmp_path):
    cfg = write_cfg(
        tmp_path / "c.json",
        {"schema": 1, "run": {"objective": "dann_ss", "steps": 10, "pretrain_steps": 5},
         "data": {"n_source": 200, "n_target": 200, "n_val_pool": 50, "n_test": 100}},
    )
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(a)]) == 0
    assert main(["train", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert main(["eval", "--config", cfg, "--checkpoint", str(a / "model.ckpt"), "--out", str(a)]) == 0
    assert json.loads((a / "eval.json").read_text())["accuracy"] == summary["test_accuracy"]


def test_train_json_format_and_seed_override(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"schema": 1, "run": {"objective": "source_only", "steps": 5, "pretrain_steps": 0}})
    assert main(["train", "--config", cfg, "--seed", "9", "--format", "json", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["summary"]["config"]["seed"] == 9


def test_numerical_abort_exit_two(tmp_path):
    img = np.ones((3, 3))
    aio.write_image(tmp_path / "i.pgm", img)
    flow = identity_flow(3, 3)
    flow[1, 1, 0] = np.inf
    aio.write_flow(tmp_path / "f.flo", flow)
    assert main(["warp", "--image", str(tmp_path / "i.pgm"), "--flow", str(tmp_path / "f.flo"), "--out", str(tmp_path)]) == 2


def test_warp_composes_flows(tmp_path):
    img = np.random.default_rng(0).random((6, 6))
    aio.write_image(tmp_path / "i.pgm", img)
    for name, dx in (("a", 1), ("b", 2)):
        aio.write_flow(tmp_path / f"{name}.flo", synthetic_flow(translation(dx, 0), 6, 6))
    args = ["warp", "--image", str(tmp_path / "i.pgm"), "--out", str(tmp_path / "o")]
    assert main(args + ["--flow", str(tmp_path / "a.flo"), "--flow", str(tmp_path / "b.flo")]) == 0
    composed = aio.read_flow(tmp_path / "o" / "composed.flo")
    # the second flow reads columns j - 2, so the first two columns sample outside and come back zero
    np.testing.assert_allclose(composed[:, 2:], synthetic_flow(translation(3, 0), 6, 6)[:, 2:], atol=1e-6)
    warped = aio.read_image(tmp_path / "o" / "warped.pgm")
    np.testing.assert_allclose(warped[:, 3:], aio.read_image(tmp_path / "i.pgm")[:, :3], atol=1e-12)


def test_warp_shape_mismatch_exits_one(tmp_path):
    aio.write_image(tmp_path / "i.pgm", np.ones((3, 3)))
    aio.write_flow(tmp_path / "f.flo", identity_flow(4, 3))
    assert main(["warp", "--image", str(tmp_path / "i.pgm"), "--flow", str(tmp_path / "f.flo"), "--out", str(tmp_path)]) == 1

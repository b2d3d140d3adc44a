"""CLI surface: exit codes, config parsing, artifacts, determinism."""

import hashlib
import json
import os

import numpy as np
import pytest

from invlens.cli import main
from invlens.config import (ConfigError, default_config, derive_seed,
                            parse_config_text, parse_decay_epochs)

TINY_TRAIN = """
[experiment]
seed = 0

[dataset]
kind = spheres
d = 6
n_train = 128
n_test = 64

[model]
kind = flat-flow
blocks = 2
width = 8

[objective]
kind = ice
lambda_n = 4.0
lambda_m = 1.0
nc_width = 16
nc_depth = 2

[train]
epochs = 2
batch_size = 32
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "train.cfg"
    cfg_path.write_text(TINY_TRAIN)
    out = root / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


# -- config parsing ---------------------------------------------------------------

def test_parse_unknown_key_names_alternatives():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[train]\nepochz = 3\n")
    msg = str(exc.value)
    assert "line 2" in msg and "epochz" in msg and "epochs" in msg


def test_parse_unknown_section_and_stray_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[training]\n")
    assert "unknown section" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        parse_config_text("epochs = 3\n")
    assert "outside any" in str(exc.value)


def test_parse_bad_value_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[train]\nepochs = soon\n")
    assert "line 2" in str(exc.value)


def test_parse_comments_and_defaults():
    cfg = parse_config_text("# a comment\n[train]\nepochs = 7  # trailing\n")
    assert cfg["train"]["epochs"] == 7
    assert cfg["train"]["batch_size"] == default_config()["train"]["batch_size"]


def test_parse_rejects_unknown_kind():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[model]\nkind = transformer\n")
    assert "model.kind" in str(exc.value)


def test_parse_decay_epochs():
    assert parse_decay_epochs("") == set()
    assert parse_decay_epochs("15,23") == {15, 23}
    assert parse_decay_epochs("5, nope") is None
    with pytest.raises(ConfigError):
        parse_config_text("[train]\nlr_decay_at = 1;2\n")


def test_derive_seed_stable_and_tag_sensitive():
    a = derive_seed(0, "model")
    assert a == derive_seed(0, "model")
    assert a != derive_seed(0, "dataset")
    assert a != derive_seed(1, "model")
    assert 0 <= a < 2 ** 31


# -- exit codes --------------------------------------------------------------------

def test_exit_2_on_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nepochs = never\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_exit_2_on_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_exit_2_when_eval_lacks_checkpoint(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("[dataset]\nkind = spheres\nn_train = 64\nn_test = 64\n")
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_exit_2_reproduce_without_figure():
    assert main(["reproduce"]) == 2


def test_exit_2_reproduce_unknown_figure(tmp_path):
    assert main(["reproduce", "--figure", "fig99",
                 "--out", str(tmp_path / "o")]) == 2


def test_exit_3_on_runtime_error(tmp_path, capsys):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("[dataset]\nkind = spheres\nn_train = 64\nn_test = 64\n"
                   f"[eval]\ncheckpoint = {tmp_path / 'missing.ckpt'}\n")
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "error" in capsys.readouterr().err


# -- training artifacts --------------------------------------------------------------

def test_train_writes_expected_artifacts(trained):
    _, out = trained
    for name in ("metrics.csv", "model.ckpt", "nuisance.ckpt",
                 "config.txt", "manifest.json"):
        assert (out / name).exists(), name
    assert not (out / ".lock").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("step,sCE,nCE,MLE_n,mi_lower_bound")


def test_manifest_checksums_match(trained):
    _, out = trained
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"]
    for name, sha in manifest["files"].items():
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        assert digest == sha, name
    assert manifest["config"]["train"]["epochs"] == 2
    assert "wall_clock_sec" in manifest


def test_training_is_deterministic(trained, tmp_path):
    cfg_path, out = trained
    out2 = tmp_path / "again"
    assert main(["train", "--config", str(cfg_path), "--out", str(out2)]) == 0
    assert (out / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    assert (out / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()


def test_seed_override_changes_run(trained, tmp_path):
    cfg_path, out = trained
    out2 = tmp_path / "seeded"
    assert main(["train", "--config", str(cfg_path), "--out", str(out2),
                 "--seed", "5"]) == 0
    assert (out / "metrics.csv").read_bytes() != (out2 / "metrics.csv").read_bytes()


# -- downstream commands on the trained checkpoint ------------------------------------

def _with_checkpoint(trained, tmp_path, section):
    cfg_path, out = trained
    text = cfg_path.read_text() + (f"\n[{section}]\n"
                                   f"checkpoint = {out / 'model.ckpt'}\n")
    p = tmp_path / f"{section}.cfg"
    p.write_text(text)
    return p


def test_eval_command_writes_table(trained, tmp_path, capsys):
    cfg = _with_checkpoint(trained, tmp_path, "eval")
    out = tmp_path / "eval-out"
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "test_adv_error" in stdout
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0] == "metric,value"
    metrics = {l.split(",")[0] for l in lines[1:]}
    assert {"train_error", "test_clean_error", "test_adv_error",
            "probe_test_error", "mi_lower_bound"} <= metrics


def test_attack_command_writes_metamers(trained, tmp_path):
    cfg = _with_checkpoint(trained, tmp_path, "attack")
    out = tmp_path / "attack-out"
    assert main(["attack", "--config", str(cfg), "--out", str(out)]) == 0
    res = (out / "metamer_residuals.csv").read_text().splitlines()
    assert res[0] == "pair,semantic_residual"
    worst = max(float(l.split(",")[1]) for l in res[1:])
    assert worst < 1e-6


def test_slice_command_writes_grids(trained, tmp_path, capsys):
    cfg = _with_checkpoint(trained, tmp_path, "slice")
    out = tmp_path / "slice-out"
    assert main(["slice", "--config", str(cfg), "--out", str(out)]) == 0
    files = os.listdir(out)
    assert any(f.startswith("slice_") and f.endswith(".csv") for f in files)
    assert "slice_stats.csv" in files
    csvs = [f for f in files if f.startswith("slice_") and f.endswith(".csv")
            and f != "slice_stats.csv"]
    header = (out / csvs[0]).read_text().splitlines()
    assert header[0] == "a,b,class"


def test_reuse_of_locked_out_dir_is_rejected(trained, tmp_path):
    cfg_path, _ = trained
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("pid 1")
    rc = main(["train", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 3
    (out / ".lock").unlink()

import csv
import json

import pytest

from app.cli import main
from app.dataset import load_dataset
from app.model import load_checkpoint

SMALL_DATA = ["--n", "24", "--size", "32", "--seed", "7"]
SMALL_TRAIN = ["--train-size", "8", "--val-size", "8", "--test-size", "8", "--epochs", "1", "--widths", "4,8", "--lr", "1e-3"]


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_data_writes_dataset_deterministically(tmp_path):
    flags = ["gen-data", *SMALL_DATA, "--boundary", "2", "--drop", "0.3"]
    assert main([*flags, "--out", str(tmp_path / "a")]) == 0
    assert main([*flags, "--out", str(tmp_path / "b")]) == 0
    assert len(load_dataset(tmp_path / "a")) == 24
    for name in ("labels.csv", "images/00003.png", "masks_pos/00010.png", "masks_neg_clean/00005.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_out_of_range_flag_is_usage_error(tmp_path):
    assert main(["gen-data", "--drop", "1.5", "--out", str(tmp_path)]) == 2
    assert main(["gen-data", "--bogus"]) == 2
    assert main(["experiment", "--sweep", "alpha", "--out", str(tmp_path)]) == 2


def test_config_file_and_flag_precedence(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("# dataset defaults\nn = 6\nsize = 32\nseed = 1\n", encoding="utf8")
    assert main(["gen-data", "--config", str(config), "--n", "4", "--out", str(tmp_path / "d")]) == 0
    assert len(load_dataset(tmp_path / "d")) == 4
    assert main(["gen-data", "--config", str(config), "--out", str(tmp_path / "e")]) == 0
    assert len(load_dataset(tmp_path / "e")) == 6

    bad = tmp_path / "bad.conf"
    bad.write_text("colour = blue\n", encoding="utf8")
    assert main(["gen-data", "--config", str(bad)]) == 2


def test_train_eval_heatmaps(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["gen-data", *SMALL_DATA, "--out", str(data)]) == 0
    out = tmp_path / "run"
    assert main(["train", "--data", str(data), *SMALL_TRAIN, "--variant", "res-g", "--out", str(out)]) == 0
    checkpoint = out / "checkpoints" / "res-g_s0.ckpt"
    assert checkpoint.exists()
    assert len(_read_csv(out / "train_log.csv")) == 1

    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data), "--train-size", "8", "--val-size", "8", "--test-size", "8"]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert 0.0 <= report["accuracy"] <= 1.0
    assert report["meta"]["variant"] == "res-g"

    maps = tmp_path / "maps"
    assert main(["heatmaps", "--checkpoint", str(checkpoint), "--data", str(data), "--count", "4", "--out", str(maps)]) == 0
    assert sorted(p.name for p in maps.iterdir()) == ["00000.png", "00001.png", "00002.png", "00003.png"]
    first = (maps / "00000.png").read_bytes()
    assert main(["heatmaps", "--checkpoint", str(checkpoint), "--data", str(data), "--ids", "00000", "--out", str(maps)]) == 0
    assert (maps / "00000.png").read_bytes() == first


def test_corrupt_checkpoint_fails(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["gen-data", *SMALL_DATA, "--out", str(tmp_path / "data")]) == 0
    assert main(["heatmaps", "--checkpoint", str(bad), "--data", str(tmp_path / "data")]) == 1


def test_experiment_grid_and_determinism(tmp_path):
    flags = ["experiment", *SMALL_DATA, *SMALL_TRAIN, "--variants", "none,res-g", "--seeds", "0,1"]
    assert main([*flags, "--out", str(tmp_path / "a")]) == 0
    assert main([*flags, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    rows = _read_csv(tmp_path / "a" / "results.csv")
    assert len(rows) == 4
    assert len(_read_csv(tmp_path / "a" / "summary.csv")) == 2
    for name in ("results.csv", "summary.csv", "train_log.csv", "checkpoints/res-g_s1.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_failures_do_not_abort(tmp_path):
    # a train size larger than the train split fails those cells only
    flags = ["experiment", *SMALL_DATA, *SMALL_TRAIN, "--variants", "none", "--seeds", "0"]
    code = main([*flags, "--sweep", "train_size", "--sweep-values", "4,50", "--out", str(tmp_path)])
    assert code == 1
    rows = _read_csv(tmp_path / "results.csv")
    assert [r["status"] for r in rows] == ["success", "failed"]
    assert [r["sweep_value"] for r in rows] == ["4", "50"]
    assert "alpha" not in (tmp_path / "report.txt").read_text()


def test_alpha_sweep_includes_edge_values(tmp_path):
    flags = ["experiment", *SMALL_DATA, *SMALL_TRAIN, "--variants", "res-l", "--seeds", "0"]
    assert main([*flags, "--sweep", "alpha", "--sweep-values", "0,0.001,0.01,0.1,1", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "results.csv")
    assert [r["sweep_value"] for r in rows] == ["0.0", "0.001", "0.01", "0.1", "1.0"]
    assert all(r["status"] == "success" for r in rows)
    assert len(_read_csv(tmp_path / "summary.csv")) == 5
    params, _ = load_checkpoint(tmp_path / "checkpoints" / "res-l_s0_alpha0.01.ckpt")
    assert "imp.conv0.weight" in params


def test_eval_split_larger_than_dataset_is_usage_error(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", *SMALL_DATA, "--out", str(data)]) == 0
    out = tmp_path / "run"
    assert main(["train", "--data", str(data), *SMALL_TRAIN, "--out", str(out)]) == 0
    checkpoint = out / "checkpoints" / "none_s0.ckpt"
    sizes = ["--train-size", "100", "--val-size", "200", "--test-size", "200"]
    assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data), *sizes]) == 2


def test_eval_every_leaves_validation_gaps(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", *SMALL_DATA, "--out", str(data)]) == 0
    train = [*SMALL_TRAIN[:6], "--epochs", "3", "--eval-every", "2", "--widths", "4,8", "--lr", "1e-3"]
    assert main(["train", "--data", str(data), *train, "--variant", "res-g", "--out", str(tmp_path / "run")]) == 0
    rows = _read_csv(tmp_path / "run" / "train_log.csv")
    assert [r["val_accuracy"] != "" for r in rows] == [False, True, True]

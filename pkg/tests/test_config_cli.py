import csv
import os
import re

import numpy as np
import pytest
import torch
from PIL import Image

from conftest import write_identical_pairs
from csgan import cli
from csgan import config as config_mod
from csgan.trainer import load_checkpoint

TINY = ["--set", "model.base_width=4", "--set", "model.n_blocks=1", "--set", "model.d_widths=[4, 8]"]
ERROR_LINE = re.compile(r"^csgan: error\[E_[A-Z]+\]: .+$")


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def assert_error(code, err, reason):
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1 and ERROR_LINE.match(lines[0]), err
    assert f"error[{reason}]" in lines[0]


@pytest.fixture
def trained(tmp_path, tiny_root, capsys):
    out = tmp_path / "run"
    code, _, err = run(
        ["train", "--dataset-root", tiny_root, "--image-size", 16, "--epochs", 2, "--out", out, *TINY,
         "--set", "train.checkpoint_every=1"],
        capsys,
    )
    assert code == 0, err
    return out


def test_resolve_layers_file_then_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('method = "cyclegan"\n[train]\nepochs = 7\nmu_A = 1.5\n[model]\nd_widths = [4, 8]\n')
    values = config_mod.resolve(str(path), {"train.epochs": 3})
    assert values["method"] == "cyclegan" and values["train.epochs"] == 3 and values["train.mu_A"] == 1.5
    cfg = config_mod.train_config(values)
    assert cfg.objective.weights.mu_A == 1.5 and cfg.objective.weights.mu_B == 0.0
    assert cfg.discriminator.widths == (4, 8)


def test_dumps_round_trips(tmp_path):
    values = config_mod.resolve(None, {"train.lr": 1e-4, "dataset.root": "x"})
    path = tmp_path / "snap.toml"
    path.write_text(config_mod.dumps(values))
    assert config_mod.resolve(str(path)) == values


def test_unknown_key_lists_valid_keys(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[train]\nepoch = 5\n")
    with pytest.raises(config_mod.ConfigError) as info:
        config_mod.resolve(str(path))
    msg = str(info.value)
    assert "train.epoch" in msg and "train.epochs" in msg and "dataset.root" in msg


def test_out_dir_env_default(monkeypatch):
    monkeypatch.setenv("CSGAN_OUT_DIR", "/tmp/somewhere")
    assert config_mod.resolve()["output_dir"] == "/tmp/somewhere"
    monkeypatch.delenv("CSGAN_OUT_DIR")
    assert config_mod.resolve()["output_dir"] == "runs"


def test_cli_unknown_key(tmp_path, capsys):
    code, _, err = run(["train", "--set", "train.bogus=1", "--out", tmp_path], capsys)
    assert_error(code, err, "E_CONFIG")
    assert "train.bogus" in err and "train.epochs" in err


def test_cli_unknown_method(tmp_path, tiny_root, capsys):
    code, _, err = run(["train", "--method", "psman", "--dataset-root", tiny_root, "--out", tmp_path], capsys)
    assert_error(code, err, "E_METHOD")
    for name in ("gan", "pix2pix", "cyclegan", "ps2gan", "csgan"):
        assert name in err


def test_cli_usage_error(capsys):
    code, _, err = run(["train", "--epochs", "many"], capsys)
    assert_error(code, err, "E_USAGE")
    assert code == 2


def test_cli_missing_dataset_root(tmp_path, capsys):
    code, _, err = run(["train", "--out", tmp_path], capsys)
    assert_error(code, err, "E_CONFIG")


def test_cli_pairing_error(tmp_path, tiny_root, capsys):
    os.remove(os.path.join(tiny_root, "trainB", "img_002.png"))
    code, _, err = run(["train", "--dataset-root", tiny_root, "--out", tmp_path, *TINY], capsys)
    assert_error(code, err, "E_PAIRING")
    assert "img_002" in err


def test_cli_zero_epochs(tmp_path, tiny_root, capsys):
    out = tmp_path / "zero"
    code, _, err = run(["train", "--dataset-root", tiny_root, "--image-size", 16, "--epochs", 0, "--out", out, *TINY], capsys)
    assert code == 0, err
    assert os.listdir(out / "checkpoints") == ["epoch_0000.pt"]
    assert not (out / "loss_curves.png").exists()
    with open(out / "loss.csv") as fh:
        assert len(fh.read().strip().splitlines()) == 1


def test_cli_train_artifacts_and_snapshot(trained):
    assert sorted(os.listdir(trained / "checkpoints")) == ["epoch_0000.pt", "epoch_0001.pt", "epoch_0002.pt"]
    for name in ("loss.csv", "loss_curves.png", "config.resolved.toml"):
        assert (trained / name).exists()
    snap = config_mod.resolve(str(trained / "config.resolved.toml"))
    ckpt = load_checkpoint(str(trained / "checkpoints" / "epoch_0002.pt"))
    assert config_mod.train_config(snap).fingerprint() == ckpt.fingerprint


def test_cli_snapshot_reproduces_run(trained, tmp_path, capsys):
    again = tmp_path / "again"
    code, _, err = run(["train", "--config", trained / "config.resolved.toml", "--out", again], capsys)
    assert code == 0, err
    assert (trained / "loss.csv").read_bytes() == (again / "loss.csv").read_bytes()


def test_cli_eval_selected_metrics_and_determinism(trained, tiny_root, tmp_path, capsys):
    ckpt = trained / "checkpoints" / "epoch_0002.pt"
    outputs = []
    for tag in ("e1", "e2"):
        out = tmp_path / tag
        code, stdout, err = run(
            ["eval", "--checkpoint", ckpt, "--dataset-root", tiny_root, "--metrics", "mse,psnr", "--out", out], capsys
        )
        assert code == 0, err
        outputs.append(out)
    with open(outputs[0] / "metrics_AtoB.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image", "mse", "psnr"]
    assert len(rows) == 1 + 3 + 1 and rows[-1][0] == "AGGREGATE"
    for name in ("metrics_AtoB.csv", "metrics_AtoB.md"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
    assert "SSIM" not in (outputs[0] / "metrics_AtoB.md").read_text()
    assert (outputs[0] / "metrics_AtoB.png").exists()


def test_cli_eval_fingerprint_mismatch(trained, tiny_root, tmp_path, capsys):
    cfg = tmp_path / "other.toml"
    cfg.write_text("[model]\nbase_width = 8\nn_blocks = 1\nd_widths = [4, 8]\n[dataset]\nimage_size = 16\n")
    code, _, err = run(
        ["eval", "--checkpoint", trained / "checkpoints" / "epoch_0002.pt", "--config", cfg,
         "--dataset-root", tiny_root, "--out", tmp_path / "x"],
        capsys,
    )
    assert_error(code, err, "E_CHECKPOINT")
    assert "incompatible" in err


def test_cli_eval_identity_stub(tmp_path, capsys, monkeypatch):
    write_identical_pairs(str(tmp_path / "same"), "test", 3, side=16)
    ckpt_dir = tmp_path / "ckpt"
    write_identical_pairs(str(tmp_path / "same"), "train", 2, side=16)
    code, _, err = run(
        ["train", "--dataset-root", tmp_path / "same", "--image-size", 16, "--epochs", 0, "--out", ckpt_dir, *TINY],
        capsys,
    )
    assert code == 0, err
    real = cli.bundle_from_checkpoint

    def identity_bundle(ckpt):
        bundle, cfg = real(ckpt)
        bundle.G_AB.forward = lambda x: x
        return bundle, cfg

    monkeypatch.setattr(cli, "bundle_from_checkpoint", identity_bundle)
    out = tmp_path / "ev"
    code, _, err = run(
        ["eval", "--checkpoint", ckpt_dir / "checkpoints" / "epoch_0000.pt", "--dataset-root", tmp_path / "same",
         "--metrics", "ssim,mse", "--out", out],
        capsys,
    )
    assert code == 0, err
    with open(out / "metrics_AtoB.csv") as fh:
        agg = list(csv.DictReader(fh))[-1]
    assert float(agg["ssim"]) == 1.0 and float(agg["mse"]) == 0.0


@pytest.fixture
def ckpt256(tmp_path, capsys):
    root = tmp_path / "data256"
    write_identical_pairs(str(root), "train", 2, side=32)
    out = tmp_path / "m256"
    code, _, err = run(["train", "--dataset-root", root, "--image-size", 256, "--epochs", 0, "--out", out, *TINY], capsys)
    assert code == 0, err
    return out / "checkpoints" / "epoch_0000.pt"


def test_cli_infer_shape_routing_and_determinism(ckpt256, tmp_path, capsys):
    src = tmp_path / "in.png"
    Image.fromarray(np.random.default_rng(0).integers(0, 256, (256, 256, 3), dtype=np.uint8)).save(src)
    paths = {}
    for tag, direction in (("ab1", "AtoB"), ("ab2", "AtoB"), ("ba", "BtoA")):
        paths[tag] = tmp_path / f"{tag}.png"
        code, _, err = run(["infer", "--checkpoint", ckpt256, "--input", src, "--direction", direction, "--out", paths[tag]], capsys)
        assert code == 0, err
    with Image.open(paths["ab1"]) as img:
        assert img.size == (256, 256)
    assert paths["ab1"].read_bytes() == paths["ab2"].read_bytes()
    assert paths["ab1"].read_bytes() != paths["ba"].read_bytes()

    bundle, _ = cli.bundle_from_checkpoint(load_checkpoint(str(ckpt256)))
    x = torch.from_numpy(np.array(Image.open(src))).permute(2, 0, 1)
    expected = cli._translate(bundle.G_BA, x).permute(1, 2, 0).numpy()
    np.testing.assert_array_equal(np.asarray(Image.open(paths["ba"])), expected)


def test_cli_infer_undecodable(ckpt256, tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"garbage")
    code, _, err = run(["infer", "--checkpoint", ckpt256, "--input", bad, "--out", tmp_path / "o.png"], capsys)
    assert_error(code, err, "E_IO")


def test_cli_missing_checkpoint(tmp_path, capsys):
    code, _, err = run(["infer", "--checkpoint", tmp_path / "nope.pt", "--input", "x", "--out", tmp_path / "o.png"], capsys)
    assert code != 0 and ERROR_LINE.match(err.strip())


def test_cli_grid(trained, tiny_root, tmp_path, capsys):
    ck = trained / "checkpoints"
    out = tmp_path / "grid"
    args = ["grid", "--checkpoint", ck / "epoch_0001.pt", "--checkpoint", ck / "epoch_0002.pt",
            "--dataset-root", tiny_root, "--split", "train", "--n-samples", 4, "--out", out]
    code, stdout, err = run(args, capsys)
    assert code == 0, err
    assert "4 rows x 4 columns" in stdout
    with Image.open(out / "grid_AtoB.png") as img:
        assert img.size == (4 * 16, 4 * 16)
    assert (out / "grid_AtoB_labeled.png").exists()


def test_cli_grid_clamps_and_seeds(trained, tiny_root, tmp_path, capsys):
    ck = trained / "checkpoints" / "epoch_0002.pt"
    base = ["grid", "--checkpoint", ck, "--dataset-root", tiny_root, "--n-samples"]
    with pytest.warns(UserWarning, match="exceeds"):
        code, stdout, err = run(base + [10, "--out", tmp_path / "g"], capsys)
    assert code == 0 and "3 rows" in stdout
    blobs = []
    for tag in ("s1", "s2"):
        code, _, _ = run(base + [2, "--seed", 7, "--out", tmp_path / tag], capsys)
        blobs.append((tmp_path / tag / "grid_AtoB.png").read_bytes())
    assert blobs[0] == blobs[1]


def test_cli_grid_without_checkpoints(tiny_root, capsys):
    code, _, err = run(["grid", "--dataset-root", tiny_root], capsys)
    assert_error(code, err, "E_USAGE")

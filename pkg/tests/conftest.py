import os

import numpy as np
import pytest
from PIL import Image

from csgan.networks import DiscriminatorConfig, GeneratorConfig
from csgan.objectives import make_preset
from csgan.trainer import TrainConfig


def write_split_folders(root, split, n, size=(20, 25), seed=0, ext="png"):
    """Write ``n`` random A/B pairs; returns the stems."""
    rng = np.random.default_rng([seed, len(split)])
    stems = [f"img_{i:03d}" for i in range(n)]
    for side in "AB":
        os.makedirs(os.path.join(root, f"{split}{side}"), exist_ok=True)
    for s in stems:
        for side in "AB":
            arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
            Image.fromarray(arr).save(os.path.join(root, f"{split}{side}", f"{s}.{ext}"))
    return stems


def write_combined(root, split, n, side=16, seed=0):
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(root, split), exist_ok=True)
    halves = []
    for i in range(n):
        a = rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)
        b = rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)
        Image.fromarray(np.concatenate([a, b], axis=1)).save(os.path.join(root, split, f"p{i}.png"))
        halves.append((a, b))
    return halves


def write_identical_pairs(root, split, n, side=32, seed=0):
    """Pairs whose A and B images are the same picture."""
    rng = np.random.default_rng(seed)
    for s in "AB":
        os.makedirs(os.path.join(root, f"{split}{s}"), exist_ok=True)
    for i in range(n):
        arr = rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)
        for s in "AB":
            Image.fromarray(arr).save(os.path.join(root, f"{split}{s}", f"x{i}.png"))


def tiny_config(method="csgan", image_size=16, **kw) -> TrainConfig:
    base = dict(
        epochs_total=2,
        epochs_constant=1,
        batch_size=2,
        seed=0,
        objective=make_preset(method),
        generator=GeneratorConfig(base_width=4, n_residual_blocks=1, image_size=image_size),
        discriminator=DiscriminatorConfig(widths=(4, 8)),
        checkpoint_every=1,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def tiny_root(tmp_path):
    root = tmp_path / "tiny"
    write_split_folders(str(root), "train", 5, size=(16, 16), seed=1)
    write_split_folders(str(root), "test", 3, size=(16, 16), seed=2)
    return str(root)

"""Paired two-domain image datasets.

Two on-disk layouts are understood:

- ``split-folders``: ``<root>/<split>A/<name>.<ext>`` and ``<root>/<split>B/<name>.<ext>``,
  paired by exact filename stem.
- ``combined-AB``: ``<root>/<split>/<name>.<ext>``, each file holding domain A in
  the left half and domain B in the right half.

Images are decoded as 8-bit RGB and resized (bilinear, no crop) to a square
``image_size``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
LAYOUTS = ("split-folders", "combined-AB")
DIRECTIONS = ("AtoB", "BtoA")
SPLITS = ("train", "test")


class PairingError(ValueError):
    """Raised when a dataset cannot be assembled into complete A/B pairs."""


class ImageReadError(OSError):
    """Raised when an image file cannot be decoded."""


class RangeError(TypeError):
    """Raised when an image tensor carries the wrong range tag (dtype)."""


@dataclass(frozen=True)
class PairedDataset:
    name: str
    layout: str
    split: str
    image_size: int
    pairs: tuple[tuple[str, str], ...]
    swap_domains: bool = False
    flip: bool = False

    def __post_init__(self):
        if not self.pairs:
            raise PairingError(f"dataset {self.name!r} ({self.split}) has no image pairs")
        if self.image_size < 1:
            raise ValueError("image_size must be positive")

    def __len__(self):
        return len(self.pairs)

    def names(self) -> list[str]:
        return [_stem(a) for a, _ in self.pairs]

    def load_pair(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Return the ``index``-th pair as two uint8 tensors of shape (3, S, S)."""
        path_a, path_b = self.pairs[index]
        if self.layout == "combined-AB":
            img = _read_rgb(path_a)
            w, h = img.size
            half = w // 2
            a = img.crop((0, 0, half, h))
            b = img.crop((half, 0, 2 * half, h))
        else:
            a, b = _read_rgb(path_a), _read_rgb(path_b)
        a, b = self._resize(a), self._resize(b)
        if self.swap_domains:
            a, b = b, a
        return _to_tensor(a), _to_tensor(b)

    def _resize(self, img: Image.Image) -> Image.Image:
        size = (self.image_size, self.image_size)
        if img.size == size:
            return img
        return img.resize(size, Image.BILINEAR)


class PairedBatch(NamedTuple):
    real_A: torch.Tensor
    real_B: torch.Tensor
    names: list[str]


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _read_rgb(path: str) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageReadError(f"cannot decode image {path}: {exc}") from exc


def _to_tensor(img: Image.Image) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.uint8)
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).contiguous()


def _list_images(directory: str) -> dict[str, str]:
    found = {}
    for entry in sorted(os.listdir(directory)):
        if entry.lower().endswith(IMAGE_EXTENSIONS):
            stem = _stem(entry)
            if stem in found:
                raise PairingError(f"duplicate image stem {stem!r} in {directory}")
            found[stem] = os.path.join(directory, entry)
    return found


def load_paired_dataset(
    root: str,
    layout: str = "split-folders",
    split: str = "train",
    image_size: int = 256,
    name: str | None = None,
    swap_domains: bool = False,
    flip: bool = False,
) -> PairedDataset:
    """Index a paired dataset on disk.

    ``swap_domains`` exchanges which side is treated as domain A (e.g. to
    translate photo to sketch with a sketch-first folder naming).
    """
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {', '.join(LAYOUTS)}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {', '.join(SPLITS)}")
    name = name or os.path.basename(os.path.normpath(root))

    if layout == "split-folders":
        dir_a = os.path.join(root, f"{split}A")
        dir_b = os.path.join(root, f"{split}B")
        for d in (dir_a, dir_b):
            if not os.path.isdir(d):
                raise PairingError(f"missing folder {d}")
        files_a, files_b = _list_images(dir_a), _list_images(dir_b)
        orphans = sorted(set(files_a) ^ set(files_b))
        if orphans:
            side = "A" if orphans[0] in files_a else "B"
            raise PairingError(
                f"image {orphans[0]!r} in {split}{side} has no counterpart"
                + (f" (and {len(orphans) - 1} more)" if len(orphans) > 1 else "")
            )
        pairs = tuple((files_a[s], files_b[s]) for s in sorted(files_a))
    else:
        directory = os.path.join(root, split)
        if not os.path.isdir(directory):
            raise PairingError(f"missing folder {directory}")
        files = _list_images(directory)
        pairs = tuple((files[s], files[s]) for s in sorted(files))

    if not pairs:
        raise PairingError(f"no image pairs found under {root} ({layout}, {split})")
    return PairedDataset(
        name=name,
        layout=layout,
        split=split,
        image_size=image_size,
        pairs=pairs,
        swap_domains=swap_domains,
        flip=flip,
    )


def partition(ds: PairedDataset, n_train: int) -> tuple[PairedDataset, PairedDataset]:
    """Split a pooled dataset into train/test by sorted filename order.

    The first ``n_train`` pairs (by stem) form the training split; every
    remaining pair goes to the test split.
    """
    if not 0 < n_train < len(ds):
        raise ValueError(f"n_train must lie in (0, {len(ds)})")
    ordered = tuple(sorted(ds.pairs, key=lambda p: _stem(p[0])))
    return (
        replace(ds, split="train", pairs=ordered[:n_train]),
        replace(ds, split="test", pairs=ordered[n_train:]),
    )


def parse_direction(text: str) -> str:
    """Normalize ``AtoB``/``A2B``/``A->B``/``ab`` style spellings."""
    key = re.sub(r"[^ab]", "", text.lower().replace("to", "").replace("2", ""))
    if key == "ab":
        return "AtoB"
    if key == "ba":
        return "BtoA"
    raise ValueError(f"unknown direction {text!r}; expected one of {', '.join(DIRECTIONS)}")


def to_model_range(img: torch.Tensor) -> torch.Tensor:
    """Map a uint8 image to float32 in [-1, 1] via v / 127.5 - 1."""
    if img.dtype != torch.uint8:
        raise RangeError(f"to_model_range expects a uint8 tensor, got {img.dtype}")
    return img.to(torch.float32) / 127.5 - 1.0


def from_model_range(img: torch.Tensor) -> torch.Tensor:
    if not img.is_floating_point():
        raise RangeError(f"from_model_range expects a floating tensor, got {img.dtype}")
    out = ((img.detach() + 1.0) * 127.5).round().clamp_(0, 255)
    return out.to(torch.uint8)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Permutation of ``range(n)`` determined only by ``(seed, epoch)``."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def batches(
    ds: PairedDataset, batch_size: int, seed: int, epoch: int = 1
) -> Iterator[PairedBatch]:
    """Yield every pair once, shuffled by ``(seed, epoch)``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_order(len(ds), seed, epoch)
    flips = np.random.default_rng([seed, epoch, 1]).random(len(ds)) < 0.5
    names = ds.names()
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        real_a, real_b = [], []
        for i in idx:
            a, b = ds.load_pair(int(i))
            a, b = to_model_range(a), to_model_range(b)
            if ds.flip and flips[i]:
                a, b = a.flip(-1), b.flip(-1)
            real_a.append(a)
            real_b.append(b)
        yield PairedBatch(torch.stack(real_a), torch.stack(real_b), [names[int(i)] for i in idx])

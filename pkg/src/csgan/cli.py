"""Command line: ``csgan train | eval | infer | grid``.

Every failure prints one line ``csgan: error[CODE]: message`` to stderr and
exits with a nonzero status.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np
import torch
from PIL import Image

from . import config as config_mod
from . import plotting, reports
from .data import (
    ImageReadError,
    PairingError,
    from_model_range,
    load_paired_dataset,
    parse_direction,
    to_model_range,
)
from .lpips import load_provider
from .metrics import MetricError, evaluate_dataset, parse_metrics
from .networks import ConfigError as NetworkConfigError
from .objectives import NumericError
from .trainer import CheckpointError, bundle_from_checkpoint, load_checkpoint, read_loss_log, train

log = logging.getLogger("csgan")

EXIT_CODES = {
    "E_USAGE": 2,
    "E_CONFIG": 3,
    "E_METHOD": 3,
    "E_PAIRING": 4,
    "E_IO": 5,
    "E_CHECKPOINT": 6,
    "E_NUMERIC": 7,
    "E_METRIC": 8,
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csgan", description="Cyclic-synthesized GAN image translation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def dataset_flags(sp, split_default):
        sp.add_argument("--dataset-root")
        sp.add_argument("--layout", choices=["split-folders", "combined-AB"])
        sp.add_argument("--split", default=split_default, choices=["train", "test"])
        sp.add_argument("--image-size", type=int)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config")
    t.add_argument("--method")
    dataset_flags(t, "train")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda", dest="lam", type=float, help="cycle weight for both domains")
    t.add_argument("--mu", type=float, help="cyclic-synthesized weight for both domains")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")

    e = sub.add_parser("eval", help="score a checkpoint on a test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    dataset_flags(e, "test")
    e.add_argument("--metrics")
    e.add_argument("--direction")
    e.add_argument("--out")
    e.add_argument("--lpips-weights")

    i = sub.add_parser("infer", help="translate one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--direction", default="AtoB")
    i.add_argument("--image-size", type=int)
    i.add_argument("--out", required=True)

    g = sub.add_parser("grid", help="qualitative comparison grid")
    g.add_argument("--checkpoint", action="append", default=[], dest="checkpoints")
    g.add_argument("--config")
    dataset_flags(g, "test")
    g.add_argument("--n-samples", type=int, default=4)
    g.add_argument("--direction", default="AtoB")
    g.add_argument("--seed", type=int, help="shuffle sample selection")
    g.add_argument("--out")
    return p


def _overrides(args) -> dict:
    o = {
        "method": getattr(args, "method", None),
        "dataset.root": getattr(args, "dataset_root", None),
        "dataset.layout": getattr(args, "layout", None),
        "dataset.image_size": getattr(args, "image_size", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.lr": getattr(args, "lr", None),
        "train.seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None),
    }
    if getattr(args, "lam", None) is not None:
        o["train.lambda_A"] = o["train.lambda_B"] = args.lam
    if getattr(args, "mu", None) is not None:
        o["train.mu_A"] = o["train.mu_B"] = args.mu
    if getattr(args, "metrics", None):
        o["eval.metrics"] = args.metrics
    if getattr(args, "direction", None):
        o["eval.direction"] = args.direction
    if getattr(args, "lpips_weights", None):
        o["lpips.weights"] = args.lpips_weights
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise CliError("E_USAGE", f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        o[k.strip()] = v.strip()
    return o


def _dataset(values: dict, split: str, image_size: int | None = None):
    root = values["dataset.root"]
    if not root:
        raise CliError("E_CONFIG", "dataset.root is not set (use --dataset-root or the config file)")
    return load_paired_dataset(
        root,
        layout=values["dataset.layout"],
        split=split,
        image_size=image_size or values["dataset.image_size"],
        name=values["dataset.name"] or None,
        swap_domains=values["dataset.swap_domains"],
        flip=values["dataset.flip"] and split == "train",
    )


def cmd_train(args) -> int:
    values = config_mod.resolve(args.config, _overrides(args))
    cfg = config_mod.train_config(values)
    ds = _dataset(values, args.split)
    out = values["output_dir"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.resolved.toml"), "w") as fh:
        fh.write(config_mod.dumps(values))
    resume = load_checkpoint(args.resume, cfg.fingerprint()) if args.resume else None
    result = train(cfg, ds, out_dir=out, resume=resume)
    rows = read_loss_log(os.path.join(out, "loss.csv"))
    if rows:
        plotting.plot_loss_curves(rows, os.path.join(out, "loss_curves.png"))
    print(f"trained {cfg.objective.method} for {result.trainer.epoch} epochs ({result.trainer.step} steps); outputs in {out}")
    return 0


def _load_bundle(path: str, values: dict | None = None):
    ckpt = load_checkpoint(path)
    bundle, cfg = bundle_from_checkpoint(ckpt)
    if values is not None:
        expected = config_mod.train_config(values).fingerprint()
        if expected != ckpt.fingerprint:
            raise CheckpointError(f"checkpoint {path} (fingerprint {ckpt.fingerprint}) is incompatible with config ({expected})")
    return bundle, cfg


def cmd_eval(args) -> int:
    values = config_mod.resolve(args.config, _overrides(args))
    bundle, cfg = _load_bundle(args.checkpoint, values if args.config else None)
    size = cfg.generator.image_size
    if args.image_size and args.image_size != size:
        raise CheckpointError(f"checkpoint was trained at image_size {size}, not {args.image_size}")
    direction = parse_direction(values["eval.direction"])
    metrics = parse_metrics(values["eval.metrics"])
    provider = load_provider(values["lpips.weights"], values["lpips.backbone"], values["lpips.backbone_weights"] or None)
    if "lpips" in metrics and provider is None:
        log.info("no LPIPS provider configured (lpips.weights); omitting the lpips column")
    ds = _dataset(values, args.split, size)
    net = bundle.G_AB if direction == "AtoB" else bundle.G_BA
    report = evaluate_dataset(net, ds, direction, metrics, method=cfg.objective.method, lpips_provider=provider)

    out = values["output_dir"]
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, f"metrics_{direction}")
    reports.write_report_csv(report, stem + ".csv")
    with open(stem + ".md", "w") as fh:
        fh.write(reports.markdown_table([report]))
    plotting.plot_metric_distributions(report.per_image, report.metrics, stem + ".png")
    print(reports.markdown_table([report]), end="")
    return 0


def _read_image(path: str, size: int) -> torch.Tensor:
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
    except OSError as exc:
        raise ImageReadError(f"cannot decode image {path}: {exc}") from exc
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return torch.from_numpy(np.asarray(img, dtype=np.uint8).copy()).permute(2, 0, 1)


@torch.no_grad()
def _translate(net, img: torch.Tensor) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    return from_model_range(net(to_model_range(img)[None].to(dtype))[0].float())


def _hwc(t: torch.Tensor) -> np.ndarray:
    return t.permute(1, 2, 0).numpy()


def cmd_infer(args) -> int:
    bundle, cfg = _load_bundle(args.checkpoint)
    direction = parse_direction(args.direction)
    size = args.image_size or cfg.generator.image_size
    if size % 4:
        raise CliError("E_USAGE", f"image size {size} is not divisible by 4")
    net = bundle.G_AB if direction == "AtoB" else bundle.G_BA
    out = _translate(net, _read_image(args.input, size))
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    Image.fromarray(_hwc(out)).save(args.out)
    print(args.out)
    return 0


def cmd_grid(args) -> int:
    if not args.checkpoints:
        raise CliError("E_USAGE", "grid needs at least one --checkpoint")
    values = config_mod.resolve(args.config, _overrides(args))
    direction = parse_direction(args.direction)
    loaded = [_load_bundle(p) for p in args.checkpoints]
    size = loaded[0][1].generator.image_size
    ds = _dataset(values, args.split, args.image_size or size)

    n = args.n_samples
    if n < 1:
        raise CliError("E_USAGE", "--n-samples must be >= 1")
    if n > len(ds):
        warnings.warn(f"n_samples {n} exceeds the {len(ds)} available images; using {len(ds)}")
        n = len(ds)
    order = np.arange(len(ds))
    if args.seed is not None:
        order = np.random.default_rng(args.seed).permutation(len(ds))
    rows = []
    for idx in order[:n]:
        a, b = ds.load_pair(int(idx))
        src, target = (a, b) if direction == "AtoB" else (b, a)
        row = [_hwc(src), _hwc(target)]
        for bundle, _ in loaded:
            net = bundle.G_AB if direction == "AtoB" else bundle.G_BA
            row.append(_hwc(_translate(net, src)))
        rows.append(row)

    out = values["output_dir"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"grid_{direction}.png")
    plotting.save_grid(rows, path)
    titles = ["Input", "Ground truth"] + [cfg.objective.method for _, cfg in loaded]
    plotting.plot_labeled_grid(rows, titles, os.path.join(out, f"grid_{direction}_labeled.png"))
    print(f"{path}: {len(rows)} rows x {len(rows[0])} columns")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "grid": cmd_grid}


def _classify(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, config_mod.ConfigError):
        return "E_METHOD" if "unknown method" in str(exc) else "E_CONFIG"
    if isinstance(exc, PairingError):
        return "E_PAIRING"
    if isinstance(exc, CheckpointError):
        return "E_CHECKPOINT"
    if isinstance(exc, NumericError):
        return "E_NUMERIC"
    if isinstance(exc, MetricError):
        return "E_METRIC"
    if isinstance(exc, (ImageReadError, OSError)):
        return "E_IO"
    if isinstance(exc, (NetworkConfigError, ValueError)):
        return "E_CONFIG"
    raise exc


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
        )
        return COMMANDS[args.command](args)
    except Exception as exc:
        code = _classify(exc)
        message = " ".join(str(exc).split())
        print(f"csgan: error[{code}]: {message}", file=sys.stderr)
        return EXIT_CODES[code]


if __name__ == "__main__":
    sys.exit(main())

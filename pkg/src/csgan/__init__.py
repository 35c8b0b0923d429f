"""Cyclic-synthesized GAN for paired image-to-image translation."""

from .data import (
    PairedBatch,
    PairedDataset,
    batches,
    from_model_range,
    load_paired_dataset,
    to_model_range,
)
from .metrics import MetricReport, SsimParams, evaluate_dataset, mse, psnr_from_mse, ssim
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    ModelBundle,
    build_bundle,
    build_discriminator,
    build_generator,
    init_weights,
    receptive_field,
)
from .objectives import (
    LossBreakdown,
    LossWeights,
    ObjectiveSpec,
    cs_loss,
    cycle_loss,
    forward_cycle,
    l1_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    make_preset,
    total_objective,
)
from .trainer import Checkpoint, TrainConfig, load_checkpoint, lr_at, save_checkpoint, train

__version__ = "0.1.0"

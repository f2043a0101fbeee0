"""Desk-scale single-image dehazing co-trained with monocular depth estimation.

The package synthesizes hazy scenes from the physical scattering model, trains
a dehazing network and a depth network that reweight each other's losses
through difference perceptrons, and ships the metrics and CLI needed to
evaluate, ablate, and report on the result.  Everything runs on numpy with an
in-repo reverse-mode autodiff; runs are deterministic and checkpointable
bit-exactly.
"""

__version__ = "0.1.0"

from .autodiff import Tensor
from .blocks import (DifferencePerceptron, DilatedResidualDenseBlock,
                     LocalGlobalBlock, ModulationFusion, MultiScaleFusion)
from .dehaze_net import DehazeNet, EncoderTaps
from .depth_net import DepthMap, DepthNet, depth_l1
from .errors import (CheckpointError, DegenerateTransmissionError,
                     InvalidArgumentError, NonFiniteLossError, ShapeMismatchError)
from .losses import (LossReport, PerceptualExtractor, contrastive_perceptual,
                     dehaze_loss, depth_loss, unet_loss, weighted_mean_abs)
from .metrics import EvalRecord, evaluate_split, psnr, ssim
from .optim import adam_init, adam_step, cosine_lr
from .scene import (ClearScene, HazeParams, HazyImage, apply_haze, build_dataset,
                    generate_scene, invert_haze_oracle, normalize_depth, transmission)
from .trainer import TrainConfig, Trainer, TrainState, train

__all__ = [
    "Tensor", "DifferencePerceptron", "DilatedResidualDenseBlock",
    "LocalGlobalBlock", "ModulationFusion", "MultiScaleFusion",
    "DehazeNet", "EncoderTaps", "DepthMap", "DepthNet", "depth_l1",
    "CheckpointError", "DegenerateTransmissionError", "InvalidArgumentError",
    "NonFiniteLossError", "ShapeMismatchError",
    "LossReport", "PerceptualExtractor", "contrastive_perceptual",
    "dehaze_loss", "depth_loss", "unet_loss", "weighted_mean_abs",
    "EvalRecord", "evaluate_split", "psnr", "ssim",
    "adam_init", "adam_step", "cosine_lr",
    "ClearScene", "HazeParams", "HazyImage", "apply_haze", "build_dataset",
    "generate_scene", "invert_haze_oracle", "normalize_depth", "transmission",
    "TrainConfig", "Trainer", "TrainState", "train",
]

"""Second-stage refinement of diffusion outputs.

The post network only ever sees the diffusion output; the full pipeline is
apply_post ∘ sample with deterministic sampling.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import NumericalFailureError
from ..ingestion.schemas import ImageStack, ModelKind, PairedDataset, Split, TrainConfig
from .diffusion import NoiseSchedule, sample, sample_stack
from .training import Retain, fit, to_tensor
from .unet import check_image_shape

logger = logging.getLogger(__name__)


def _post_step(model: nn.Module, xb: torch.Tensor, yb: torch.Tensor, generator) -> float:
    loss = F.mse_loss(model(xb), yb)
    if not torch.isfinite(loss):
        logger.error("Non-finite post-processing loss")
        raise NumericalFailureError(f"Loss became {loss.item()}")
    model.zero_grad(set_to_none=True)
    loss.backward()
    return loss.item()


def train_post(
    model: nn.Module,
    inputs: ImageStack,
    targets: ImageStack,
    config: TrainConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> tuple[nn.Module, pd.DataFrame]:
    """Fit the refinement network by pixel MSE; returns (model, loss history)."""
    if len(inputs) != len(targets) or inputs.image_shape != targets.image_shape:
        raise ValueError(
            f"Inputs ({len(inputs)}, {inputs.image_shape}) and targets "
            f"({len(targets)}, {targets.image_shape}) are not aligned"
        )
    dtype = next(model.parameters()).dtype
    side = inputs.image_shape[0]
    model.image_size = side
    logger.info("Training post-processing model on %d images", len(inputs))
    history = fit(
        model,
        to_tensor(inputs.images, dtype),
        to_tensor(targets.images, dtype),
        _post_step,
        config,
        ModelKind.POST,
        checkpoint_path=checkpoint_path,
        checkpoint_extra={"image_size": side},
        retain=Retain.BEST,
        progress=progress,
    )
    return model, history


@torch.no_grad()
def apply_post(model: nn.Module, image: np.ndarray) -> np.ndarray:
    """One forward pass over an (H, W) image or an (N, H, W) batch."""
    image = np.asarray(image)
    if image.ndim not in (2, 3):
        raise ValueError(f"Expected an image or a batch of images, got shape {image.shape}")
    check_image_shape(model, image.shape)
    dtype = next(model.parameters()).dtype
    batch = to_tensor(image if image.ndim == 3 else image[None], dtype)
    model.eval()
    out = model(batch).squeeze(1).double().numpy()
    if not np.isfinite(out).all():
        raise NumericalFailureError("Post-processing produced non-finite values")
    return out if image.ndim == 3 else out[0]


def denoise_pipeline(
    dmodel: nn.Module,
    pmodel: nn.Module,
    x: np.ndarray,
    schedule: NoiseSchedule,
    generator: torch.Generator,
) -> np.ndarray:
    """Deterministic diffusion sample of one image, refined by the post network."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"Expected a single image, got shape {x.shape}")
    check_image_shape(dmodel, x.shape)
    check_image_shape(pmodel, x.shape)
    dtype = next(dmodel.parameters()).dtype
    stage1 = sample(dmodel, to_tensor(x[None], dtype), schedule, generator, deterministic=True)
    return apply_post(pmodel, stage1.squeeze(1).numpy()[0])


def denoise_stack(
    dmodel: nn.Module,
    pmodel: Optional[nn.Module],
    stack: ImageStack,
    schedule: NoiseSchedule,
    seed: int = 0,
    batch_size: int = 32,
    deterministic: bool = True,
    progress: bool = False,
) -> ImageStack:
    """Stage 1 over a whole stack, followed by stage 2 when a post model is given."""
    stage1 = sample_stack(dmodel, stack, schedule, seed, batch_size, deterministic, progress)
    if pmodel is None:
        return stage1
    refined = np.concatenate([
        apply_post(pmodel, stage1.images[start:start + batch_size])
        for start in range(0, len(stage1), batch_size)
    ])
    return ImageStack(images=refined, pixel_size=stack.pixel_size, metadata=stack.metadata)


def build_post_training_set(
    dmodel: nn.Module,
    dataset: PairedDataset,
    schedule: NoiseSchedule,
    seed: int = 0,
    batch_size: int = 32,
    progress: bool = False,
) -> tuple[ImageStack, ImageStack]:
    """Deterministic diffusion outputs over the train split, paired with clean targets."""
    train_set = dataset.select(Split.TRAIN)
    if len(train_set) == 0:
        raise ValueError("Dataset has no training images")
    inputs = sample_stack(
        dmodel, train_set.noisy, schedule, seed, batch_size, deterministic=True, progress=progress
    )
    return inputs, train_set.clean

"""Conditional denoising diffusion: schedule, training objective, sampling.

The model learns p(y0 | x) for a clean image y0 given its noisy observation
x. Forward diffusion mixes y0 with white noise at level γ ∈ (0, 1]:

    y = √γ · y0 + √(1 − γ) · ε

and the network predicts ε from (x, y, γ). Ancestral sampling runs the
learned reverse chain from pure noise back to t = 1.
"""

import logging
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn
from tqdm import tqdm

from ..errors import NumericalFailureError
from ..ingestion.schemas import (
    GammaSampling,
    ImageStack,
    ModelKind,
    PairedDataset,
    Split,
    TrainConfig,
)
from .training import Retain, fit, to_tensor
from .unet import check_image_shape

logger = logging.getLogger(__name__)


class NoiseSchedule(BaseModel):
    """Per-step noise parameters, index i holding step t = i + 1."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray

    @model_validator(mode="after")
    def consistent(self) -> "NoiseSchedule":
        if self.beta.ndim != 1 or len(self.beta) == 0:
            raise ValueError("Schedule needs at least one step")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("Every beta must lie in (0, 1)")
        if np.any(np.diff(self.gamma) >= 0):
            raise ValueError("gamma must be strictly decreasing")
        return self

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def gamma_prev(self) -> np.ndarray:
        """γ_{t−1} for each step, with γ_0 = 1."""
        return np.concatenate([[1.0], self.gamma[:-1]])


def schedule_from_betas(beta: np.ndarray) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    alpha = 1.0 - beta
    gamma = np.cumprod(alpha)
    gamma_prev = np.concatenate([[1.0], gamma[:-1]])
    sigma = np.sqrt(beta * (1.0 - gamma_prev) / (1.0 - gamma))
    return NoiseSchedule(beta=beta, alpha=alpha, gamma=gamma, sigma=sigma)


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear β schedule over T steps."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(
            f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return schedule_from_betas(np.linspace(beta_start, beta_end, T))


def schedule_for(config: TrainConfig) -> NoiseSchedule:
    return make_schedule(config.T, config.beta_start, config.beta_end)


def respace_schedule(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    """
    Shorter chain over a subset of the trained noise levels.

    Keeps γ at `steps` evenly spaced indices (always including the last) and
    sets β'_k = 1 − γ'_k / γ'_{k−1}, so cumulative products are preserved.
    """
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if steps >= schedule.T:
        return schedule
    idx = np.linspace(schedule.T - 1, 0, steps).round().astype(int)[::-1]
    gamma = schedule.gamma[idx]
    beta = 1.0 - gamma / np.concatenate([[1.0], gamma[:-1]])
    return schedule_from_betas(beta)


def forward_diffuse(y0, gamma, eps):
    """√γ · y0 + √(1 − γ) · ε for arrays or tensors; γ may broadcast."""
    if tuple(y0.shape) != tuple(eps.shape):
        raise ValueError(f"y0 {tuple(y0.shape)} and eps {tuple(eps.shape)} differ in shape")
    g = gamma.detach().cpu().numpy() if isinstance(gamma, torch.Tensor) else np.asarray(gamma)
    if np.any(g <= 0) or np.any(g > 1):
        raise ValueError("gamma must lie in (0, 1]")
    if g.ndim == 0:
        gamma = float(g)
    return gamma**0.5 * y0 + (1 - gamma) ** 0.5 * eps


def sample_gamma(
    schedule: NoiseSchedule,
    batch: int,
    generator: torch.Generator,
    rule: GammaSampling = GammaSampling.CONTINUOUS,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Draw t ~ U{1..T} and a noise level for it.

    Continuous: γ ~ U(γ_t, γ_{t−1}). Discrete: γ = γ_t. Returns (t, γ) with γ
    in float64.
    """
    t = torch.randint(1, schedule.T + 1, (batch,), generator=generator)
    lo = torch.from_numpy(schedule.gamma)[t - 1]
    if rule == GammaSampling.DISCRETE:
        return t, lo
    hi = torch.from_numpy(schedule.gamma_prev)[t - 1]
    u = torch.rand(batch, generator=generator, dtype=torch.float64)
    return t, lo + (hi - lo) * u


def training_step(
    model: nn.Module,
    x: torch.Tensor,
    y0: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    gamma_sampling: GammaSampling = GammaSampling.CONTINUOUS,
) -> tuple[float, dict[str, torch.Tensor]]:
    """
    One ε-prediction step on a (B, 1, H, W) batch.

    Returns the mean squared error between predicted and true noise, and the
    gradient of every parameter (empty if the model has none). Raises
    NumericalFailureError on a non-finite loss without touching gradients.
    """
    if x.shape != y0.shape:
        raise ValueError(f"x {tuple(x.shape)} and y0 {tuple(y0.shape)} differ in shape")
    t, gamma = sample_gamma(schedule, y0.shape[0], generator, gamma_sampling)
    gamma = gamma.to(y0.dtype)
    eps = torch.randn(y0.shape, generator=generator, dtype=y0.dtype)
    y_noisy = forward_diffuse(y0, gamma.view(-1, 1, 1, 1), eps)
    pred = model(x, y_noisy, gamma)
    loss = F.mse_loss(pred, eps)

    if not torch.isfinite(loss):
        logger.error(
            "Non-finite loss: t in [%d, %d], gamma in [%.3g, %.3g], |pred| max %.3g",
            int(t.min()), int(t.max()), float(gamma.min()), float(gamma.max()),
            float(torch.nan_to_num(pred.detach()).abs().max()),
        )
        raise NumericalFailureError(f"Loss became {loss.item()}")

    grads: dict[str, torch.Tensor] = {}
    if loss.requires_grad:
        model.zero_grad(set_to_none=True)
        loss.backward()
        grads = {
            name: p.grad.detach()
            for name, p in model.named_parameters()
            if p.grad is not None
        }
    return loss.item(), grads


@torch.no_grad()
def sample(
    model,
    x: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    deterministic: bool = False,
) -> torch.Tensor:
    """
    Ancestral sampling of y0 given x, batch shape (B, 1, H, W).

    Starts from y_T ~ N(0, I). Each step takes the posterior mean
    (y − β_t/√(1−γ_t) · ε̂) / √α_t and adds σ_t · z, except at t = 1 and
    when `deterministic` is set.
    """
    y = torch.randn(x.shape, generator=generator, dtype=x.dtype)
    for t in range(schedule.T, 0, -1):
        i = t - 1
        g = float(schedule.gamma[i])
        gamma_batch = torch.full((x.shape[0],), g, dtype=x.dtype)
        eps_hat = model(x, y, gamma_batch)
        y = (y - (float(schedule.beta[i]) / math.sqrt(1.0 - g)) * eps_hat) / math.sqrt(
            float(schedule.alpha[i])
        )
        if not deterministic and t > 1:
            y = y + float(schedule.sigma[i]) * torch.randn(x.shape, generator=generator, dtype=x.dtype)
        if not torch.isfinite(y).all():
            raise NumericalFailureError(f"Sampling iterate became non-finite at t = {t}")
    return y


def sample_stack(
    model: nn.Module,
    stack: ImageStack,
    schedule: NoiseSchedule,
    seed: int = 0,
    batch_size: int = 32,
    deterministic: bool = False,
    progress: bool = False,
) -> ImageStack:
    """Sample one estimate per image of a stack, metadata carried over."""
    check_image_shape(model, stack.image_shape)
    dtype = next(model.parameters()).dtype
    generator = torch.Generator().manual_seed(seed)
    model.eval()
    outputs = []
    starts = range(0, len(stack), batch_size)
    for start in tqdm(starts, desc="Sampling", disable=not progress):
        x = to_tensor(stack.images[start:start + batch_size], dtype)
        outputs.append(sample(model, x, schedule, generator, deterministic).squeeze(1).numpy())
    return ImageStack(
        images=np.concatenate(outputs),
        pixel_size=stack.pixel_size,
        metadata=stack.metadata,
    )


def train(
    model: nn.Module,
    dataset: PairedDataset,
    config: TrainConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> tuple[nn.Module, pd.DataFrame]:
    """Fit the ε-predictor on the train split; returns (model, loss history)."""
    train_set = dataset.select(Split.TRAIN)
    if len(train_set) == 0:
        raise ValueError("Dataset has no training images")
    schedule = schedule_for(config)
    dtype = next(model.parameters()).dtype
    side = train_set.noisy.image_shape[0]
    model.image_size = side

    def step(m, xb, yb, generator):
        return training_step(m, xb, yb, schedule, generator, config.gamma_sampling)[0]

    logger.info(
        "Training diffusion model on %d images (T=%d, %s gamma)",
        len(train_set), config.T, config.gamma_sampling.value,
    )
    history = fit(
        model,
        to_tensor(train_set.noisy.images, dtype),
        to_tensor(train_set.clean.images, dtype),
        step,
        config,
        ModelKind.DIFFUSION,
        checkpoint_path=checkpoint_path,
        checkpoint_extra={"image_size": side},
        retain=Retain.LAST,
        progress=progress,
    )
    return model, history

"""Mini-batch fit loop shared by both training stages."""

import copy
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from ..errors import NumericalFailureError, TrainingDivergedError
from ..ingestion.schemas import ModelKind, TrainConfig
from .checkpoint import save_checkpoint

logger = logging.getLogger(__name__)

# step(model, inputs, targets, generator) -> loss; leaves gradients in .grad
StepFn = Callable[[nn.Module, torch.Tensor, torch.Tensor, torch.Generator], float]

HISTORY_COLUMNS = ["epoch", "step", "loss"]


class Retain(str, Enum):
    """Which weights survive a divergence."""

    LAST = "last"
    BEST = "best"


def set_serial_mode() -> None:
    """Single-threaded, deterministic torch kernels for bit-reproducible runs."""
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def history_frame(records: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(records, columns=HISTORY_COLUMNS)


def to_tensor(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(N, H, W) array → (N, 1, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(images)).to(dtype).unsqueeze(1)


def fit(
    model: nn.Module,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    step: StepFn,
    config: TrainConfig,
    kind: ModelKind,
    checkpoint_path: Optional[Union[str, Path]] = None,
    checkpoint_extra: Optional[dict] = None,
    retain: Retain = Retain.LAST,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Run config.epochs of shuffled mini-batch Adam steps.

    All randomness (shuffling and whatever `step` draws) comes from one
    generator seeded with config.rng_seed. Checkpoints are written every
    config.checkpoint_every epochs and after the final epoch. On a
    non-finite loss the retained weights (end of the last completed epoch,
    or the lowest mean-loss epoch) are restored together with the optimizer
    state of that moment, written to the checkpoint path, and
    TrainingDivergedError is raised.
    """
    if len(inputs) == 0:
        raise ValueError("Cannot train on an empty dataset")
    if inputs.shape != targets.shape:
        raise ValueError(f"Inputs {tuple(inputs.shape)} and targets {tuple(targets.shape)} differ")

    generator = torch.Generator().manual_seed(config.rng_seed)
    loader = DataLoader(
        TensorDataset(inputs, targets),
        batch_size=config.batch_size,
        shuffle=True,
        generator=generator,
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    records: list[dict] = []
    retained = copy.deepcopy(model.state_dict())
    retained_optim = copy.deepcopy(optimizer.state_dict())
    best = math.inf

    def checkpoint(state: Optional[dict] = None) -> Optional[Path]:
        if checkpoint_path is None:
            return None
        return save_checkpoint(
            checkpoint_path, model, kind,
            config=config, optimizer=optimizer, extra=checkpoint_extra, state_dict=state,
        )

    model.train()
    for epoch in tqdm(range(config.epochs), desc=f"Training {kind.value}", disable=not progress):
        epoch_losses = []
        for xb, yb in loader:
            try:
                loss = step(model, xb, yb, generator)
            except NumericalFailureError as exc:
                model.load_state_dict(retained)
                optimizer.load_state_dict(retained_optim)
                kept = checkpoint(retained)
                logger.error(
                    "%s training diverged at epoch %d step %d; restored %s weights",
                    kind.value, epoch, len(records), retain.value,
                )
                raise TrainingDivergedError(
                    f"{kind.value} training diverged at epoch {epoch}: {exc}",
                    history=history_frame(records),
                    checkpoint_path=str(kept) if kept else None,
                ) from exc
            optimizer.step()
            records.append({"epoch": epoch, "step": len(records), "loss": loss})
            epoch_losses.append(loss)

        mean_loss = float(np.mean(epoch_losses))
        logger.info("%s epoch %d/%d: mean loss %.5f", kind.value, epoch + 1, config.epochs, mean_loss)
        if retain == Retain.LAST or mean_loss < best:
            best = min(best, mean_loss)
            retained = copy.deepcopy(model.state_dict())
            retained_optim = copy.deepcopy(optimizer.state_dict())
        if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
            checkpoint()

    model.eval()
    return history_frame(records)

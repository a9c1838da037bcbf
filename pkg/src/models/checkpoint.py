"""Self-describing model checkpoints.

A checkpoint is a zip archive (readable with ``numpy.load`` as an .npz)
holding:

    meta.json                 version, model kind, architecture, image size,
                              noise schedule, config echo, tensor index
    param/<name>.npy          model parameters and buffers
    optim/<idx>/<key>.npy     optimizer state, when saved

Arrays are little-endian and member timestamps are fixed, so saving the same
weights twice produces identical bytes.
"""

import io
import logging
import zipfile
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch import nn

from ..ingestion.schemas import ModelKind, TrainConfig
from .unet import build_model

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
META_FILE = "meta.json"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class TensorRecord(BaseModel):
    name: str
    member: str
    dtype: str
    shape: list[int]


class CheckpointMeta(BaseModel):
    version: int = CHECKPOINT_VERSION
    kind: ModelKind
    architecture: dict[str, Any]
    image_size: Optional[int] = None
    schedule: Optional[dict[str, Any]] = Field(None, description="T, beta_start, beta_end")
    config: Optional[dict[str, Any]] = None
    param_groups: list[dict[str, Any]] = Field(default_factory=list)
    tensors: list[TensorRecord] = Field(default_factory=list)
    extra: dict[str, Any] = Field(default_factory=dict)


class LoadedCheckpoint(NamedTuple):
    model: nn.Module
    meta: CheckpointMeta
    optimizer_state: Optional[dict]


def _npy_bytes(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    array = array.astype(array.dtype.newbyteorder("<"), copy=False)
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, array, allow_pickle=False)
    return buffer.getvalue()


def _write_member(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(
    path: Union[str, Path],
    model: nn.Module,
    kind: ModelKind,
    config: Optional[TrainConfig] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
    extra: Optional[dict] = None,
    state_dict: Optional[dict] = None,
) -> Path:
    """Write model (or the given state_dict) plus optional optimizer state."""
    path = Path(path)
    state = state_dict if state_dict is not None else model.state_dict()
    arrays: dict[str, np.ndarray] = {
        f"param/{name}": tensor.detach().cpu().numpy() for name, tensor in state.items()
    }
    param_groups: list[dict] = []
    if optimizer is not None:
        opt_state = optimizer.state_dict()
        for idx, entry in opt_state["state"].items():
            for key, value in entry.items():
                arrays[f"optim/{idx}/{key}"] = torch.as_tensor(value).detach().cpu().numpy()
        param_groups = opt_state["param_groups"]

    schedule = None
    if config is not None and kind == ModelKind.DIFFUSION:
        schedule = {"T": config.T, "beta_start": config.beta_start, "beta_end": config.beta_end}
    extra = dict(extra or {})
    meta = CheckpointMeta(
        kind=kind,
        architecture=model.architecture(),
        image_size=extra.pop("image_size", getattr(model, "image_size", None)),
        schedule=extra.pop("schedule", schedule),
        config=config.model_dump(mode="json") if config is not None else None,
        param_groups=param_groups,
        tensors=[
            TensorRecord(name=name, member=f"{name}.npy", dtype=arr.dtype.str, shape=list(arr.shape))
            for name, arr in sorted(arrays.items())
        ],
        extra=extra,
    )

    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as archive:
        _write_member(archive, META_FILE, meta.model_dump_json(indent=2).encode())
        for record in meta.tensors:
            _write_member(archive, record.member, _npy_bytes(arrays[record.name]))
    logger.info("Saved %s checkpoint to %s (%d tensors)", kind.value, path, len(meta.tensors))
    return path


def read_checkpoint_meta(path: Union[str, Path]) -> CheckpointMeta:
    try:
        with zipfile.ZipFile(path) as archive:
            meta = CheckpointMeta.model_validate_json(archive.read(META_FILE))
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ValueError(f"{path}: not a checkpoint archive") from exc
    if meta.version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.version}")
    return meta


def load_checkpoint(
    path: Union[str, Path],
    expected_kind: Optional[ModelKind] = None,
) -> LoadedCheckpoint:
    """Rebuild the model from the archived architecture and load its weights."""
    meta = read_checkpoint_meta(path)
    if expected_kind is not None and meta.kind != expected_kind:
        raise ValueError(f"{path}: expected a {expected_kind.value} checkpoint, got {meta.kind.value}")

    with zipfile.ZipFile(path) as archive:
        arrays = {
            record.name: np.load(io.BytesIO(archive.read(record.member)), allow_pickle=False)
            for record in meta.tensors
        }

    model = build_model(meta.kind, meta.architecture)
    state = {
        name.removeprefix("param/"): torch.from_numpy(np.array(arr))
        for name, arr in arrays.items()
        if name.startswith("param/")
    }
    model.load_state_dict(state)
    model.image_size = meta.image_size
    model.eval()

    optimizer_state = None
    if meta.param_groups:
        per_param: dict[int, dict[str, torch.Tensor]] = {}
        for name, arr in arrays.items():
            if name.startswith("optim/"):
                _, idx, key = name.split("/", 2)
                per_param.setdefault(int(idx), {})[key] = torch.from_numpy(np.array(arr))
        optimizer_state = {"state": per_param, "param_groups": meta.param_groups}
    return LoadedCheckpoint(model, meta, optimizer_state)

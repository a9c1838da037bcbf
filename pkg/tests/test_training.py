"""Tests for the shared fit loop: history, checkpoints and divergence handling."""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from src.errors import NumericalFailureError, TrainingDivergedError
from src.ingestion.schemas import ModelKind, TrainConfig
from src.models.checkpoint import load_checkpoint
from src.models.training import HISTORY_COLUMNS, Retain, fit, to_tensor
from src.models.unet import PostUNet


def _data(n: int = 8, side: int = 8):
    g = torch.Generator().manual_seed(0)
    x = torch.randn(n, 1, side, side, generator=g)
    return x, 0.5 * x


def _mse_step(model, xb, yb, generator):
    loss = F.mse_loss(model(xb), yb)
    model.zero_grad(set_to_none=True)
    loss.backward()
    return loss.item()


def _failing_after(calls: int):
    count = {"n": 0}

    def step(model, xb, yb, generator):
        count["n"] += 1
        if count["n"] > calls:
            raise NumericalFailureError("loss became nan")
        return _mse_step(model, xb, yb, generator)

    return step


class TestFit:
    def test_history_rows(self):
        x, y = _data()
        config = TrainConfig(epochs=3, batch_size=3, learning_rate=1e-3)
        history = fit(PostUNet(4, 2), x, y, _mse_step, config, ModelKind.POST)
        assert list(history.columns) == HISTORY_COLUMNS
        assert len(history) == 3 * 3
        assert history["step"].tolist() == list(range(9))
        assert history["epoch"].tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2]

    def test_seeded_shuffle(self):
        x, y = _data()
        config = TrainConfig(epochs=2, batch_size=3, rng_seed=5)
        losses = []
        for _ in range(2):
            torch.manual_seed(0)
            losses.append(fit(PostUNet(4, 2), x, y, _mse_step, config, ModelKind.POST)["loss"].tolist())
        assert losses[0] == losses[1]

    def test_periodic_checkpoint(self, tmp_path):
        x, y = _data()
        config = TrainConfig(epochs=3, batch_size=4, checkpoint_every=2)
        model = PostUNet(4, 2)
        fit(model, x, y, _mse_step, config, ModelKind.POST, checkpoint_path=tmp_path / "p.ckpt")
        loaded = load_checkpoint(tmp_path / "p.ckpt", ModelKind.POST)
        for k, v in model.state_dict().items():
            assert torch.equal(loaded.model.state_dict()[k], v)
        assert loaded.optimizer_state is not None

    def test_empty_input(self):
        empty = torch.zeros(0, 1, 8, 8)
        with pytest.raises(ValueError):
            fit(PostUNet(4, 2), empty, empty, _mse_step, TrainConfig(), ModelKind.POST)

    def test_misaligned(self):
        x, _ = _data()
        with pytest.raises(ValueError):
            fit(PostUNet(4, 2), x, x[:3], _mse_step, TrainConfig(), ModelKind.POST)


class TestDivergence:
    def test_restores_last_epoch(self, tmp_path):
        x, y = _data()
        config = TrainConfig(epochs=5, batch_size=4, learning_rate=1e-2)
        model = PostUNet(4, 2)

        # two batches per epoch: fail on the first step of the third epoch
        reference = PostUNet(4, 2)
        reference.load_state_dict(model.state_dict())
        fit(reference, x, y, _mse_step, config.model_copy(update={"epochs": 2}), ModelKind.POST)

        with pytest.raises(TrainingDivergedError) as info:
            fit(model, x, y, _failing_after(4), config, ModelKind.POST, checkpoint_path=tmp_path / "p.ckpt")
        err = info.value
        assert len(err.history) == 4
        assert err.checkpoint_path == str(tmp_path / "p.ckpt")
        for k, v in reference.state_dict().items():
            assert torch.equal(model.state_dict()[k], v)
        kept = load_checkpoint(err.checkpoint_path).model
        for k, v in reference.state_dict().items():
            assert torch.equal(kept.state_dict()[k], v)

    def test_restored_checkpoint_keeps_matching_optimizer_state(self, tmp_path):
        x, y = _data()
        config = TrainConfig(epochs=5, batch_size=4, learning_rate=1e-2, checkpoint_every=100)
        model = PostUNet(4, 2)
        reference = PostUNet(4, 2)
        reference.load_state_dict(model.state_dict())
        fit(reference, x, y, _mse_step, config.model_copy(update={"epochs": 2}), ModelKind.POST,
            checkpoint_path=tmp_path / "ref.ckpt")

        # two batches per epoch: one successful step in the third epoch moves Adam past the retained state
        with pytest.raises(TrainingDivergedError) as info:
            fit(model, x, y, _failing_after(5), config, ModelKind.POST, checkpoint_path=tmp_path / "p.ckpt")
        assert len(info.value.history) == 5

        expected = load_checkpoint(tmp_path / "ref.ckpt").optimizer_state["state"]
        kept = load_checkpoint(info.value.checkpoint_path).optimizer_state["state"]
        assert kept.keys() == expected.keys()
        for idx, entry in expected.items():
            for key, value in entry.items():
                assert torch.equal(kept[idx][key], value)

    def test_failure_in_first_epoch_restores_initial(self):
        x, y = _data()
        model = PostUNet(4, 2)
        initial = {k: v.clone() for k, v in model.state_dict().items()}
        with pytest.raises(TrainingDivergedError) as info:
            fit(model, x, y, _failing_after(1), TrainConfig(epochs=2, batch_size=4), ModelKind.POST, retain=Retain.BEST)
        assert info.value.checkpoint_path is None
        for k, v in model.state_dict().items():
            assert torch.equal(v, initial[k])

    def test_is_numerical_failure(self):
        assert issubclass(TrainingDivergedError, NumericalFailureError)


class TestToTensor:
    def test_adds_channel(self):
        assert to_tensor(np.zeros((3, 4, 4))).shape == (3, 1, 4, 4)

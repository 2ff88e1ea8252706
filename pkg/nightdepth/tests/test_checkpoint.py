import pytest
import torch

from nightdepth.training.checkpoint import config_differences, load_checkpoint, read_payload, save_checkpoint
from nightdepth.training.config import TrainConfig
from nightdepth.training.state import build_state
from nightdepth.training.trainer import train_step
from nightdepth.utils.validation import ValidationError


@pytest.fixture
def trained_state(fast_config, tiny_batch):
    state = build_state(fast_config)
    train_step(tiny_batch, state)
    state.history.append({"epoch": 1, "step": 1, "abs_rel": 0.5})
    return state


def test_save_load_save_is_byte_identical(tmp_path, trained_state):
    first = save_checkpoint(tmp_path / "a" / "first.pt", trained_state)
    reloaded = load_checkpoint(first)
    second = save_checkpoint(tmp_path / "b" / "second.pt", reloaded)
    assert first.read_bytes() == second.read_bytes()


def test_reload_restores_weights_and_counters(tmp_path, trained_state):
    path = save_checkpoint(tmp_path / "ckpt.pt", trained_state)
    reloaded = load_checkpoint(path)
    assert (reloaded.step, reloaded.epoch) == (trained_state.step, trained_state.epoch)
    assert reloaded.config == trained_state.config
    assert reloaded.mask_params == trained_state.mask_params
    assert reloaded.history == trained_state.history
    for name, module in trained_state.modules().items():
        for a, b in zip(module.state_dict().values(), reloaded.modules()[name].state_dict().values()):
            assert torch.equal(a, b)


def test_runtime_fields_may_change(tmp_path, trained_state, fast_config):
    path = save_checkpoint(tmp_path / "ckpt.pt", trained_state)
    state = load_checkpoint(path, fast_config.with_overrides({"epochs": 5}))
    assert state.config.epochs == 5


def test_config_mismatch_is_rejected_unless_overridden(tmp_path, trained_state, fast_config):
    path = save_checkpoint(tmp_path / "ckpt.pt", trained_state)
    changed = fast_config.with_overrides({"lr": 2e-4})
    with pytest.raises(ValidationError) as excinfo:
        load_checkpoint(path, changed)
    assert excinfo.value.value == ["lr"]
    state = load_checkpoint(path, changed, allow_config_override=True)
    assert state.config.lr == 2e-4
    assert config_differences(read_payload(path)["config"], changed) == {"lr": (5e-4, 2e-4)}


def test_missing_checkpoint_is_rejected(tmp_path):
    with pytest.raises(ValidationError) as excinfo:
        load_checkpoint(tmp_path / "nope.pt")
    assert excinfo.value.suggestions


def test_foreign_checkpoint_is_rejected(tmp_path):
    path = tmp_path / "other.pt"
    torch.save({"kind": "daytime_depth"}, path)
    with pytest.raises(ValidationError):
        read_payload(path)


def test_device_override(tmp_path, trained_state):
    path = save_checkpoint(tmp_path / "ckpt.pt", trained_state)
    assert load_checkpoint(path, device="cpu").config.device == "cpu"
    assert isinstance(trained_state.config, TrainConfig)

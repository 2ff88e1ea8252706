import dataclasses

import pytest
import torch

from nightdepth.data.dataset_io import NightSequenceDataset, collate_triplets
from nightdepth.data.synthdata import SyntheticSetConfig, generate_synthetic_set
from nightdepth.training.config import TrainConfig

TINY_SET = SyntheticSetConfig(num_sequences=2, frames_per_sequence=6, width=48, height=32, seed=0,
                              cars=4, poles=2)


@pytest.fixture(scope="session")
def tiny_sequences():
    """Two 6-frame day/night sequences at 32×48 (12 frames, 8 triplets)."""
    return generate_synthetic_set(TINY_SET)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_sequences):
    return NightSequenceDataset(tiny_sequences)


@pytest.fixture
def tiny_batch(tiny_dataset):
    return collate_triplets([tiny_dataset[0], tiny_dataset[4]])


@pytest.fixture
def day_batch(tiny_batch):
    """The same triplets with the clean frames in place of the night ones."""
    return dataclasses.replace(tiny_batch, night=tiny_batch.day)


@pytest.fixture
def fast_config():
    return TrainConfig(batch_size=2, epochs=1, mask_a=0.2, mask_b=0.8, seed=0)


def parameter_hash(module: torch.nn.Module) -> list:
    return [p.detach().clone() for p in module.parameters()]


def same_parameters(before: list, module: torch.nn.Module) -> bool:
    return all(torch.equal(a, b) for a, b in zip(before, module.parameters()))

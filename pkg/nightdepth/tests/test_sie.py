import numpy as np
import pytest
import torch
import torch.nn as nn

from nightdepth.enhancement.sie import (
    EPS_ILLUM,
    SelfCalibratedEnhancer,
    SieOutput,
    StageRecord,
    fidelity_loss,
    illumination_smoothness_loss,
    pretrain_enhancer,
    sie_forward,
    sie_loss,
)
from nightdepth.utils.validation import ValidationError


class ZeroNet(nn.Module):
    """Stub Φ: constant zero output with the requested channel count."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels

    def forward(self, image):
        return torch.zeros(image.shape[0], self.channels, *image.shape[-2:], dtype=image.dtype)


def _record(x, image):
    return StageRecord(input=image, illumination=x, enhanced=image, residual=torch.zeros_like(image))


def test_illumination_stays_in_range():
    torch.manual_seed(0)
    enhancer = SelfCalibratedEnhancer()
    with torch.no_grad():
        out = sie_forward(enhancer, torch.rand(1000, 3, 4, 4))
    for stage in out.per_stage:
        assert float(stage.illumination.min()) >= EPS_ILLUM
        assert float(stage.illumination.max()) <= 1.0
        assert float(stage.enhanced.min()) >= 0.0 and float(stage.enhanced.max()) <= 1.0


def test_single_stage_enhances_by_division():
    torch.manual_seed(1)
    enhancer = SelfCalibratedEnhancer(num_stages=1)
    image = torch.rand(2, 3, 6, 6)
    out = sie_forward(enhancer, image)
    assert len(out.per_stage) == 1
    expected = torch.clamp(image / out.illum_first_stage, 0.0, 1.0)
    assert torch.equal(out.enhanced_first_stage, expected)


def test_zero_residual_repeats_the_stage():
    torch.manual_seed(2)
    enhancer = SelfCalibratedEnhancer(calib_net=ZeroNet(3), num_stages=3)
    # tanh is not applied by the stub, so the residual is exactly zero.
    out = sie_forward(enhancer, torch.rand(1, 3, 5, 5))
    first = out.per_stage[0].illumination
    for stage in out.per_stage[1:]:
        assert torch.equal(stage.illumination, first)


def test_half_illumination_doubles_the_image():
    enhancer = SelfCalibratedEnhancer(illum_net=ZeroNet(1), calib_net=ZeroNet(3), num_stages=1)
    image = torch.tensor([[[[0.1, 0.3], [0.45, 0.8]]]]).repeat(1, 3, 1, 1)
    out = sie_forward(enhancer, image)
    assert torch.allclose(out.illum_first_stage, torch.full((1, 1, 2, 2), 0.5))
    assert torch.allclose(out.enhanced_first_stage, torch.clamp(2 * image, 0, 1))


def test_enhancement_never_darkens():
    torch.manual_seed(3)
    image = torch.rand(4, 3, 8, 8) * 0.3
    out = sie_forward(SelfCalibratedEnhancer(), image)
    assert float(out.enhanced_first_stage.mean()) >= float(image.mean())


def test_stage_count_does_not_change_parameter_count():
    one = sum(p.numel() for p in SelfCalibratedEnhancer(num_stages=1).parameters())
    five = sum(p.numel() for p in SelfCalibratedEnhancer(num_stages=5).parameters())
    assert one == five


def test_rejects_zero_stages():
    with pytest.raises(ValidationError):
        SelfCalibratedEnhancer(num_stages=0)


def test_forward_is_deterministic_for_a_seed():
    image = torch.rand(2, 3, 8, 8)
    outputs = []
    for _ in range(2):
        torch.manual_seed(11)
        outputs.append(sie_forward(SelfCalibratedEnhancer(), image))
    for a, b in zip(outputs[0].per_stage, outputs[1].per_stage):
        assert torch.equal(a.illumination, b.illumination)
        assert torch.equal(a.enhanced, b.enhanced)


def test_fidelity_hand_value():
    x = torch.full((1, 1, 2, 2), 0.5)
    image = torch.full((1, 1, 2, 2), 0.25)
    assert float(fidelity_loss(SieOutput([_record(x, image)]))) == pytest.approx(0.0625)
    assert float(fidelity_loss(SieOutput([_record(image, image)]))) == 0.0


def test_constant_illumination_is_smooth():
    x = torch.full((1, 1, 6, 6), 0.4)
    assert float(illumination_smoothness_loss(SieOutput([_record(x, x.repeat(1, 3, 1, 1))]))) == 0.0


def test_smoothness_of_single_bright_pixel():
    size = 5
    field = np.zeros((size, size))
    field[2, 2] = 1.0
    offsets = np.arange(-2, 3)
    g = np.exp(-(offsets ** 2) / 2.0)
    kernel = np.outer(g, g)
    kernel /= kernel.sum()

    expected = 0.0
    for i in range(size):
        for j in range(size):
            for di in range(5):
                for dj in range(5):
                    ni = min(max(i + di - 2, 0), size - 1)
                    nj = min(max(j + dj - 2, 0), size - 1)
                    expected += kernel[di, dj] * abs(field[i, j] - field[ni, nj])
    expected /= size * size

    x = torch.from_numpy(field)[None, None]
    loss = illumination_smoothness_loss(SieOutput([_record(x, x.repeat(1, 3, 1, 1))]))
    assert float(loss) == pytest.approx(expected, abs=1e-12)


def test_step_edge_is_rougher_than_ramp():
    width = 10
    ramp = torch.linspace(0.1, 0.9, width, dtype=torch.float64).repeat(6, 1)[None, None]
    step = torch.full_like(ramp, 0.1)
    step[..., width // 2:] = 0.9

    def loss(x):
        return float(illumination_smoothness_loss(SieOutput([_record(x, x.repeat(1, 3, 1, 1))])))

    assert loss(step) > loss(ramp)


def test_sie_losses_pass_gradcheck():
    torch.manual_seed(4)
    image = torch.rand(1, 3, 5, 5, dtype=torch.float64)
    x = (torch.rand(1, 1, 5, 5, dtype=torch.float64) * 0.8 + 0.1).requires_grad_(True)

    def fidelity(illumination):
        return fidelity_loss(SieOutput([_record(illumination, image)]))

    def smoothness(illumination):
        return illumination_smoothness_loss(SieOutput([_record(illumination, image)]))

    assert torch.autograd.gradcheck(fidelity, (x,), eps=1e-6, atol=1e-8)
    assert torch.autograd.gradcheck(smoothness, (x,), eps=1e-6, atol=1e-8)


def test_network_gradients_match_central_differences():
    torch.manual_seed(5)
    enhancer = SelfCalibratedEnhancer(num_stages=2, hidden=4).double()
    image = torch.rand(1, 3, 6, 6, dtype=torch.float64) * 0.25 + 0.05
    weight = enhancer.illum_net.body[0].weight

    loss = sie_loss(sie_forward(enhancer, image))
    analytic = torch.autograd.grad(loss, weight)[0]

    eps = 1e-6
    with torch.no_grad():
        for index in [(0, 0, 1, 1), (2, 1, 0, 2), (3, 2, 2, 0)]:
            original = weight[index].item()
            weight[index] = original + eps
            plus = float(sie_loss(sie_forward(enhancer, image)))
            weight[index] = original - eps
            minus = float(sie_loss(sie_forward(enhancer, image)))
            weight[index] = original
            numeric = (plus - minus) / (2 * eps)
            assert numeric == pytest.approx(float(analytic[index]), rel=1e-3, abs=1e-9)


def test_pretraining_reduces_fidelity():
    torch.manual_seed(6)
    images = [torch.rand(4, 3, 16, 16) * 0.2 for _ in range(3)]
    history = pretrain_enhancer(SelfCalibratedEnhancer(), images, steps=100, lr=1e-2)
    assert len(history) == 100
    assert np.mean(history[-10:]) < np.mean(history[:10])


def test_pretraining_needs_images():
    with pytest.raises(ValidationError):
        pretrain_enhancer(SelfCalibratedEnhancer(), [], steps=1)


@pytest.mark.slow
def test_pretraining_halves_fidelity_on_dark_images():
    torch.manual_seed(7)
    images = torch.rand(50, 3, 32, 32) * 0.2
    enhancer = SelfCalibratedEnhancer()
    history = pretrain_enhancer(enhancer, list(images.split(10)), steps=500, lr=1e-2)
    assert history[-1] <= 0.5 * history[0]

    with torch.no_grad():
        out = sie_forward(enhancer, images)
    assert float(out.enhanced_first_stage.mean()) > float(images.mean())
    assert float(out.illum_first_stage.min()) >= EPS_ILLUM
    assert float(out.illum_first_stage.max()) <= 1.0

import pytest
import torch
import torch.nn as nn

from nightdepth.enhancement.denoise import DenoiserHandle, DenoiserKind, create_denoiser, denoise
from nightdepth.utils.filters import gaussian_kernel2d
from nightdepth.utils.validation import ValidationError


class Halve(nn.Module):
    def forward(self, x):
        return x * 0.5


def test_identity_is_bit_exact():
    image = torch.rand(2, 3, 8, 8)
    assert torch.equal(denoise(DenoiserHandle(DenoiserKind.IDENTITY), image), image)


def test_gaussian_impulse_response_is_the_kernel():
    image = torch.zeros(1, 1, 7, 7, dtype=torch.float64)
    image[0, 0, 3, 3] = 1.0
    out = denoise(DenoiserHandle(DenoiserKind.GAUSSIAN, kernel_size=3, sigma_spatial=0.8), image)
    kernel = gaussian_kernel2d(3, 0.8, dtype=torch.float64)
    assert torch.allclose(out[0, 0, 2:5, 2:5], kernel, atol=1e-7)
    assert float(out.sum()) == pytest.approx(1.0, abs=1e-6)


def test_gaussian_reduces_noise_variance():
    generator = torch.Generator().manual_seed(0)
    clean = torch.full((1, 3, 32, 32), 0.5)
    noisy = clean + 0.05 * torch.randn(1, 3, 32, 32, generator=generator)
    out = denoise(DenoiserHandle(DenoiserKind.GAUSSIAN), noisy)
    assert float((out - clean).var()) < float((noisy - clean).var())


@pytest.mark.parametrize("kind", [DenoiserKind.IDENTITY, DenoiserKind.GAUSSIAN, DenoiserKind.BILATERAL])
def test_shape_range_and_no_parameters(kind):
    module = create_denoiser(DenoiserHandle(kind))
    image = torch.rand(2, 3, 9, 11)
    out = module(image)
    assert out.shape == image.shape
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
    assert list(module.parameters()) == []


def test_gaussian_passes_gradients_upstream():
    image = torch.rand(1, 3, 6, 6, requires_grad=True)
    denoise(DenoiserHandle(DenoiserKind.GAUSSIAN), image).sum().backward()
    assert image.grad is not None and float(image.grad.abs().sum()) > 0


def test_bilateral_keeps_edges_sharper_than_gaussian():
    image = torch.zeros(1, 3, 8, 8)
    image[..., 4:] = 1.0
    bilateral = denoise(DenoiserHandle(DenoiserKind.BILATERAL, kernel_size=5, sigma_spatial=1.0), image)
    gaussian = denoise(DenoiserHandle(DenoiserKind.GAUSSIAN, kernel_size=5, sigma_spatial=1.0), image)
    edge = lambda x: float((x[..., 4] - x[..., 3]).mean())
    assert edge(bilateral) > edge(gaussian)


def test_external_requires_weights_at_construction(tmp_path):
    with pytest.raises(ValidationError):
        create_denoiser(DenoiserHandle(DenoiserKind.EXTERNAL, weights_path=str(tmp_path / "missing.pt")))


def test_external_is_straight_through(tmp_path):
    path = tmp_path / "halve.pt"
    torch.jit.save(torch.jit.script(Halve()), str(path))
    module = create_denoiser(DenoiserHandle(DenoiserKind.EXTERNAL, weights_path=str(path)))
    image = torch.rand(1, 3, 4, 4, requires_grad=True)
    out = module(image)
    assert torch.allclose(out, image.detach() * 0.5)
    out.sum().backward()
    assert torch.equal(image.grad, torch.ones_like(image))


def test_unknown_kind_is_rejected():
    with pytest.raises(ValidationError):
        DenoiserHandle.from_name("median")
    assert DenoiserHandle.from_name("bilateral").kind is DenoiserKind.BILATERAL

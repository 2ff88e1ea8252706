"""Fixed convolution kernels shared by the enhancer loss and the denoiser."""

import torch


def gaussian_kernel2d(size: int, sigma: float, dtype: torch.dtype = torch.float32,
                      device=None) -> torch.Tensor:
    """Normalised size×size Gaussian kernel (sums to 1)."""
    half = size // 2
    coords = torch.arange(-half, half + 1, dtype=dtype, device=device)
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    kernel = g[:, None] * g[None, :]
    return kernel / kernel.sum()

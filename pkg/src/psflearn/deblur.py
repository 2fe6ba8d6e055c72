"""Spatially varying Wiener deconvolution with a PSF stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .measure import _apply_tiled
from .optics import PSFKernel


class InvalidConfig(ValueError):
    pass


@dataclass
class DeblurConfig:
    nsr: float = 1e-3
    tile: int = 64
    overlap: int = 16

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.nsr > 0:
            raise InvalidConfig(f"nsr must be positive, got {self.nsr}")
        if self.tile < 8:
            raise InvalidConfig("tile must be at least 8 pixels")
        if not 0 <= self.overlap < self.tile / 2:
            raise InvalidConfig("overlap must lie in [0, tile/2)")


def _taper(shape, width: int) -> np.ndarray:
    """Separable raised-cosine ramp over ``width`` pixels at every border."""
    out = np.ones(shape)
    for axis, n in enumerate(shape):
        w = np.ones(n)
        m = min(width, n // 2)
        if m > 0:
            ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(m) + 0.5) / m)
            w[:m] = ramp
            w[n - m:] = ramp[::-1]
        out = out * (w[:, None] if axis == 0 else w[None, :])
    return out


def wiener_tile(tile: np.ndarray, psf, nsr: float) -> np.ndarray:
    """Wiener-deconvolve one 2D patch with a centred kernel.

    The patch is mirror-padded by a kernel width and the pad is tapered
    toward the patch mean, which keeps wrap-around ringing out of the
    interior.
    """
    if not nsr > 0:
        raise InvalidConfig(f"nsr must be positive, got {nsr}")
    k = np.asarray(psf.data if isinstance(psf, PSFKernel) else psf, dtype=float)
    tile = np.asarray(tile, dtype=float)
    h, w = tile.shape
    kh, kw = k.shape
    if kh > h or kw > w:
        raise InvalidConfig(f"{kh}x{kw} kernel does not fit a {h}x{w} patch")
    p = max(kh, kw)
    padded = np.pad(tile, p, mode="symmetric")
    mean = tile.mean()
    t = _taper(padded.shape, p)
    t[p:p + h, p:p + w] = 1.0
    padded = mean + (padded - mean) * t
    shape = padded.shape
    K = np.zeros(shape)
    K[:kh, :kw] = k
    K = np.roll(K, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    Hf = sfft.rfft2(K)
    G = np.conj(Hf) / (np.abs(Hf) ** 2 + nsr)
    out = sfft.irfft2(sfft.rfft2(padded) * G, s=shape)
    return out[p:p + h, p:p + w]


def deblur_image(image: np.ndarray, stack, cfg: DeblurConfig | None = None) -> np.ndarray:
    """Per-tile Wiener restoration with the nearest stack cell, cross-faded.

    Each channel uses its own (shifted) kernel, so lateral colour is undone
    along with the blur.
    """
    cfg = cfg or DeblurConfig()
    cfg.validate()
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) image")
    return _apply_tiled(image, stack, cfg.tile, cfg.overlap,
                        lambda patch, k: wiener_tile(patch, k, cfg.nsr), margin=stack.kernel_size)

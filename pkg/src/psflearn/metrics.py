"""Kernel and image quality metrics."""

from __future__ import annotations

import numpy as np
from skimage.metrics import structural_similarity

PSNR_CAP = 100.0


def psnr(est: np.ndarray, ref: np.ndarray, data_range: float | None = None) -> float:
    """PSNR in dB, capped at 100 for identical inputs.

    ``data_range`` defaults to the reference peak, which is what makes
    kernel scores comparable across kernels of different spread.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    peak = float(np.abs(ref).max()) if data_range is None else float(data_range)
    mse = float(np.mean((est - ref) ** 2))
    if mse == 0.0 or peak == 0.0:
        return PSNR_CAP if mse == 0.0 else -np.inf
    return float(min(PSNR_CAP, 10 * np.log10(peak * peak / mse)))


def ssim(est: np.ndarray, ref: np.ndarray, data_range: float | None = None) -> float:
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    peak = float(np.abs(ref).max()) if data_range is None else float(data_range)
    kw = {"channel_axis": -1} if est.ndim == 3 else {}
    win = min(7, *est.shape[:2])
    win -= 1 - win % 2
    return float(structural_similarity(est, ref, data_range=peak, win_size=win, **kw))


def kernel_scores(est: np.ndarray, ref: np.ndarray) -> dict:
    """PSNR/SSIM between unit-sum kernels; both conventions for PSNR.

    ``psnr`` normalizes by the reference peak, ``psnr_unit`` by 1.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    est = est / est.sum()
    ref = ref / ref.sum()
    return {"psnr": psnr(est, ref), "psnr_unit": psnr(est, ref, 1.0), "ssim": ssim(est, ref)}

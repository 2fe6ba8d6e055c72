"""End-to-end round trip: simulate captures, calibrate, evaluate, deblur."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .deblur import DeblurConfig, deblur_image
from .estimate import EstimationConfig, FitReport, fit_monochromatic, fit_shifts
from .measure import (MeasurementSet, add_noise, average_frames, build_measurements, chart_poses, degrade,
                      synth_checkerboard)
from .metrics import kernel_scores, psnr, ssim
from .optics import CHANNELS, LensField, PSFStack, render_psf_stack
from .pupil import WavefrontModel
from .synthetic import random_lens, texture_image

log = logging.getLogger(__name__)


@dataclass
class Capture:
    model: WavefrontModel
    shifts: np.ndarray
    charts: list
    images: list
    measurements: MeasurementSet


def ground_truth(cfg: RunConfig):
    return random_lens(cfg.lens_seed, cfg.lens.n_bands, cfg.lens.strength)


def capture_images(model, shifts, cfg: RunConfig):
    """Ideal charts and their blurred (optionally noisy, frame-averaged) captures."""
    c = cfg.capture
    field = LensField(model, shifts, c.render_pupil_n)
    poses = chart_poses(c.chart(), np.deg2rad(c.pose_tilts_deg), c.pose_shifts)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(poses))
    charts, images = [], []
    for pose, ss in zip(poses, seeds):
        chart = synth_checkerboard(pose, c.width, c.height)
        blurred = degrade(chart, field, 0.0, tile=c.tile, fade=c.fade)
        if c.noise_sigma > 0:
            frame_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(c.frames)]
            blurred = average_frames([add_noise(blurred, c.noise_sigma, s, c.tile) for s in frame_seeds])
        charts.append(chart)
        images.append(blurred)
    return charts, images


def measure_images(images, cfg: RunConfig) -> MeasurementSet:
    m = cfg.measure
    ms = build_measurements(images, cfg.estimation.band_edges, np.deg2rad(m.phis_deg),
                            cfg.capture.noise_sigma, m.roi_config(), m.half_window,
                            cfg.estimation.freqs)
    ms.meta = {"seed": cfg.seed, "lens_seed": cfg.lens_seed, "frames": cfg.capture.frames}
    return ms


def simulate(cfg: RunConfig) -> Capture:
    model, shifts = ground_truth(cfg)
    charts, images = capture_images(model, shifts, cfg)
    return Capture(model, shifts, charts, images, measure_images(images, cfg))


def calibrate(ms: MeasurementSet, est: EstimationConfig):
    """Stage 1 then stage 2; returns ``(model, shifts, report1, report2)``."""
    _, rep1, model = fit_monochromatic(ms, est)
    if ms.ca:
        _, rep2, shifts = fit_shifts(model, ms, est)
    else:
        shifts = np.zeros((model.n_bands, 2, 2))
        rep2 = FitReport("shifts", rep1.basis, rep1.band_edges, [], [], [], [], [], shifts=shifts.tolist(),
                         warnings=["no CA targets; shifts set to zero"], config=est.to_dict())
    model.meta.update({"seed": est.seed, "basis": est.basis})
    return model, shifts, rep1, rep2


def stack_for(model, shifts, cfg: RunConfig) -> PSFStack:
    e = cfg.evaluate
    H = np.linspace(0.0, 1.0, e.stack_H)
    phi = np.linspace(0.0, 2 * np.pi, e.stack_phi, endpoint=False)
    return render_psf_stack(model, shifts, H, phi, cfg.capture.render_pupil_n)


def evaluate_stacks(est: PSFStack, gt: PSFStack, H_rows=(0.0, 0.7, 1.0), phis=None):
    """Kernel metrics per (H, phi, channel) at the cells nearest each request.

    Returns ``(rows, summary)``; ``summary`` has one entry per H row holding
    the mean and minimum over azimuths and channels.
    """
    phis = gt.phi_samples if phis is None else np.asarray(phis, dtype=float)
    rows = []
    for H in H_rows:
        for phi in phis:
            ig = gt.nearest(H, phi)
            ie = est.nearest(H, phi)
            for ci, ch in enumerate(CHANNELS):
                s = kernel_scores(est.data[ie][ci], gt.data[ig][ci])
                rows.append({"H": float(H), "phi_deg": float(np.rad2deg(phi)), "channel": ch, **s})
    summary = []
    for H in H_rows:
        sel = [r for r in rows if r["H"] == float(H)]
        summary.append({"H": float(H),
                        "psnr_mean": float(np.mean([r["psnr"] for r in sel])),
                        "psnr_min": float(np.min([r["psnr"] for r in sel])),
                        "psnr_unit_mean": float(np.mean([r["psnr_unit"] for r in sel])),
                        "ssim_mean": float(np.mean([r["ssim"] for r in sel])),
                        "ssim_min": float(np.min([r["ssim"] for r in sel]))})
    return rows, summary


def deblur_benchmark(stacks: dict, blur_stack: PSFStack, n_images: int = 10, size: int = 512,
                     noise: float = 0.002, dcfg: DeblurConfig | None = None, seed: int = 0):
    """Blur texture images with ``blur_stack`` and restore with each named stack.

    Returns rows with one PSNR/SSIM entry per (image, stack name).
    """
    dcfg = dcfg or DeblurConfig()
    rows = []
    for i in range(n_images):
        sharp = texture_image(seed * 1000 + i, size)
        blurred = degrade(sharp, blur_stack, noise, seed=seed * 1000 + i)
        for name, st in stacks.items():
            out = deblur_image(blurred, st, dcfg)
            rows.append({"image": i, "stack": name, "psnr": psnr(np.clip(out, 0, 1), sharp, 1.0),
                         "ssim": ssim(np.clip(out, 0, 1), sharp, 1.0)})
    return rows


def summarize_deblur(rows) -> dict:
    names = sorted({r["stack"] for r in rows})
    return {n: float(np.mean([r["psnr"] for r in rows if r["stack"] == n])) for n in names}

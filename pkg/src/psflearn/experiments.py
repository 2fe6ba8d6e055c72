"""Self-contained experiments: round-trip recovery, ablations, basis toy.

Each function returns plain numbers so scripts and tests share one code path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .estimate import Adam, EstimationConfig, SFRObjective, band_targets, synthetic_measurements
from .metrics import kernel_scores
from .optics import CHANNELS, render_kernels
from .pipeline import Capture, calibrate, simulate
from .pupil import PROPOSED_TERMS, BasisSpec, WavefrontModel, make_pupil_grid

# each ablation switches off one ingredient of the full method
ABLATIONS: dict[str, dict] = {
    "full": {},
    "seidel": {"basis": "seidel"},
    "no_curriculum": {"curriculum": False},
    "whole_field": {"small_interval": False},
}


def roundtrip_config(seed: int = 0, noise_sigma: float = 0.0, frames: int = 16, **estimation) -> RunConfig:
    cfg = RunConfig(seed=seed)
    cfg.capture = replace(cfg.capture, noise_sigma=noise_sigma, frames=frames)
    cfg.estimation = replace(cfg.estimation, seed=seed, **estimation)
    return cfg.validate()


@dataclass
class RoundTrip:
    capture: Capture
    model: WavefrontModel
    shifts: np.ndarray
    reports: tuple
    seconds: dict = field(default_factory=dict)

    def scores(self, H_rows=(0.0, 0.7, 1.0), phis=(0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)):
        return kernel_table(self.capture.model, self.capture.shifts, self.model, self.shifts, H_rows, phis)


def run_roundtrip(seed: int = 0, noise_sigma: float = 0.0, capture: Capture | None = None,
                  stage2: bool = True, **estimation) -> RoundTrip:
    """Simulate captures (unless given), calibrate, and time both phases."""
    cfg = roundtrip_config(seed, noise_sigma, **estimation)
    t0 = time.perf_counter()
    if capture is None:
        capture = simulate(cfg)
    t1 = time.perf_counter()
    ms = capture.measurements
    if not stage2:
        ms = replace(ms, ca=[])
    model, shifts, rep1, rep2 = calibrate(ms, cfg.estimation)
    t2 = time.perf_counter()
    return RoundTrip(capture, model, shifts, (rep1, rep2), {"capture": t1 - t0, "calibrate": t2 - t1})


def kernel_table(gt_model, gt_shifts, est_model, est_shifts, H_rows=(0.0, 0.7, 1.0), phis=(0.0,),
                 pupil_n: int = 128) -> list[dict]:
    """Per-kernel PSNR/SSIM of estimated against true kernels, shifts included."""
    grid = make_pupil_grid(pupil_n)
    rows = []
    for H in H_rows:
        for phi in phis:
            Kt = render_kernels(gt_model, gt_shifts, H, phi, grid)
            Ke = render_kernels(est_model, est_shifts, H, phi, grid)
            for ci, ch in enumerate(CHANNELS):
                rows.append({"H": float(H), "phi": float(phi), "channel": ch, **kernel_scores(Ke[ci], Kt[ci])})
    return rows


def mean_psnr(rows, H: float | None = None) -> float:
    return float(np.mean([r["psnr"] for r in rows if H is None or r["H"] == H]))


ABLATION_PHIS = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)


def ablation_row(capture: Capture, name: str, seed: int, model: WavefrontModel | None = None,
                 **estimation) -> dict:
    """Stage-1 kernel PSNR of one variant at H = 0, 0.7 and 1.

    Shifts are left out so the comparison isolates the monochromatic fit.
    A ``model`` already fitted with this variant's settings skips the fit.
    """
    t0 = time.perf_counter()
    if model is None:
        model = run_roundtrip(seed, capture=capture, stage2=False, **{**estimation, **ABLATIONS[name]}).model
    table = kernel_table(capture.model, None, model, None, (0.0, 0.7, 1.0), ABLATION_PHIS)
    row = {"seed": seed, "variant": name, "seconds": round(time.perf_counter() - t0, 1)}
    row.update({f"psnr_H{H:g}": round(mean_psnr(table, H), 2) for H in (0.0, 0.7, 1.0)})
    return row


# --------------------------------------------------------------------------
# basis toy


def conflict_targets(seed: int, H0: float = 0.5, pupil_n: int = 64):
    """One band of SFR targets whose 0 and 90 degree curves differ.

    The truth is astigmatism at ``H0``: unequal (2,2,0) and (2,0,2) terms.
    """
    rng = np.random.default_rng(seed)
    c = np.zeros((1, 3, len(PROPOSED_TERMS)))
    a = rng.uniform(0.2, 0.5) * rng.choice([-1.0, 1.0])
    c[0, :, PROPOSED_TERMS.index((2, 2, 0))] = a + rng.uniform(-0.05, 0.05, 3)
    c[0, :, PROPOSED_TERMS.index((2, 0, 2))] = -a * rng.uniform(0.0, 0.5) + rng.uniform(-0.05, 0.05, 3)
    truth = WavefrontModel(BasisSpec.proposed(), np.array([0.0, 1.0]), c)
    edges = np.array([0.0, H0, H0 + 0.05, 1.0])
    ms = synthetic_measurements(truth, np.deg2rad([0, 45, 90, 135]), band_edges=edges, pupil_n=pupil_n)
    return band_targets(ms, 1)


def fit_band(bt, basis: str, iters: int = 300, lr: float = 1e-2, seed: int = 0, pupil_n: int = 64):
    """Adam directly on one band's ``(3, T)`` coefficients; returns ``(final_loss, trace)``."""
    cfg = EstimationConfig(basis=basis, pupil_n=pupil_n, seed=seed)
    obj = SFRObjective(cfg.basis_spec(), cfg)
    C = np.random.default_rng(seed).normal(0.0, 0.01, (3, len(cfg.basis_spec())))
    opt = Adam([C], lr)
    trace = []
    for _ in range(iters):
        L, g = obj.loss_and_grad(C, bt)
        opt.step([g])
        trace.append(L)
    return obj.loss(C, bt), trace


def toy_conflict(seed: int, iters: int = 300, lr: float = 1e-2) -> dict:
    """Final single-band losses of both bases under the same budget."""
    bt = conflict_targets(seed)
    q, _ = fit_band(bt, "proposed", iters, lr, seed)
    s, _ = fit_band(bt, "seidel", iters, lr, seed)
    sfr0, sfr90 = bt.values[1, 0], bt.values[1, 2]
    return {"seed": seed, "proposed": q, "seidel": s, "ratio": q / s,
            "anisotropy": float(np.abs(sfr0 - sfr90).mean())}

"""Command-line front end: simulate, calibrate, evaluate, deblur, report.

Exit codes: 0 success, 1 numeric or convergence failure, 2 config or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, io, plots
from .config import RunConfig, config_from_dict, dump_config, load_config
from .deblur import deblur_image
from .estimate import ConfigError, NumericFailure
from .forward import SFRModel
from .measure import CoverageError, InvalidSpec, LayoutError
from .metrics import psnr, ssim
from .optics import PSFStack
from .pipeline import (calibrate, deblur_benchmark, evaluate_stacks, simulate, stack_for, summarize_deblur)

log = logging.getLogger("psflearn")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


def _manifest(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed, "lens_seed": cfg.lens_seed,
            "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version(),
            "config": cfg.to_dict()}


def _write_manifest(cfg: RunConfig, command: str):
    path = cfg.out / f"manifest_{command}.json"
    path.write_text(json.dumps(_manifest(cfg, command), indent=1, sort_keys=True) + "\n")


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"required input not found: {path}")
    return path


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    cap = simulate(cfg)
    for i, (chart, img) in enumerate(zip(cap.charts, cap.images)):
        io.write_pfm(out / f"chart_{i}.pfm", chart)
        io.write_pfm(out / f"capture_{i}.pfm", img)
    io.save_measurements(cap.measurements, cfg.path("measurements", "measurements.json"))
    io.save_model(cap.model, out / "gt_model.json")
    np.savetxt(out / "gt_shifts.txt", cap.shifts.reshape(len(cap.shifts), -1), fmt="%.17g")
    io.save_stack(stack_for(cap.model, cap.shifts, cfg), cfg.path("gt_stack", "gt_stack"))
    (out / "config.yaml").write_text(dump_config(cfg))
    _write_manifest(cfg, "simulate")
    log.info("simulate: %d SFR and %d CA records in %s", len(cap.measurements.sfr),
             len(cap.measurements.ca), out)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    ms = io.load_measurements(_require(cfg.path("measurements", "measurements.json")))
    t0 = time.perf_counter()
    model, shifts, rep1, rep2 = calibrate(ms, cfg.estimation)
    log.info("calibrate: %.1f s", time.perf_counter() - t0)
    io.save_model(model, out / "est_model.json")
    np.savetxt(out / "est_shifts.txt", shifts.reshape(len(shifts), -1), fmt="%.17g")
    io.save_stack(stack_for(model, shifts, cfg), cfg.path("est_stack", "est_stack"))
    # wall time is left out so reruns are byte-identical
    io.save_report(rep1, out / "fit_report_stage1.json", include_time=False)
    io.save_report(rep2, out / "fit_report_stage2.json", include_time=False)
    io.write_traces_csv(rep1, out / "fit_traces_stage1.csv")
    io.write_traces_csv(rep2, out / "fit_traces_stage2.csv")
    plots.loss_traces(rep1, out / "loss_stage1.svg")
    plots.loss_traces(rep2, out / "loss_stage2.svg")
    _sfr_plot(ms, model, cfg, out / "sfr_overlay.svg")
    lines = [f"basis: {rep1.basis}", f"curriculum: {cfg.estimation.curriculum}",
             f"small_interval: {cfg.estimation.small_interval}", "band  initial     final"]
    for b, (i0, f) in enumerate(zip(rep1.initial_loss, rep1.final_loss)):
        if i0 is not None:
            lines.append(f"{b:4d}  {i0:.5f}  {f:.5f}")
    lines += [f"warning: {w}" for w in rep1.warnings + rep2.warnings]
    lines += [f"reflection: band {r['band']} channel {r['channel']}" for r in rep1.reflections]
    (out / "fit_summary.txt").write_text("\n".join(lines) + "\n")
    for w in rep1.warnings + rep2.warnings:
        log.warning(w)
    _write_manifest(cfg, "calibrate")
    return EXIT_OK


def _sfr_plot(ms, model, cfg, path):
    e = cfg.estimation
    fm = SFRModel(model.basis, e.phi_set, e.freqs, e.pupil_n, e.pad, e.kernel_size)
    curves = {}
    for b in sorted({s.band for s in ms.sfr}):
        recs = [s for s in ms.sfr if s.band == b and s.channel == "G"]
        H = float(np.mean([s.H for s in recs]))
        C = np.stack([model.coeffs_at(H, ci) for ci in range(3)])
        sfr, _ = fm.forward(C, [H] * 3, [s.phi for s in recs])
        for j, s in enumerate(recs):
            curves[(b, round(s.nominal_phi, 9))] = sfr[1, j]
    plots.sfr_overlay(ms, curves, path)


def _format_table(summary) -> str:
    lines = ["   H   PSNR mean   PSNR min   SSIM mean   SSIM min"]
    for s in summary:
        lines.append(f"{s['H']:4.2f}   {s['psnr_mean']:9.2f}  {s['psnr_min']:9.2f}   "
                     f"{s['ssim_mean']:9.4f}  {s['ssim_min']:9.4f}")
    return "\n".join(lines)


def cmd_evaluate(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    gt = io.load_stack(_require(cfg.path("gt_stack", "gt_stack")))
    est = io.load_stack(_require(cfg.path("est_stack", "est_stack")))
    e = cfg.evaluate
    rows, summary = evaluate_stacks(est, gt, e.H_rows, np.deg2rad(e.phis_deg))
    io.write_rows_csv(rows, out / "evaluation.csv")
    io.write_rows_csv(summary, out / "evaluation_summary.csv")
    text = _format_table(summary)
    if e.deblur_images > 0:
        k = gt.kernel_size
        impulse = PSFStack.impulse(k, gt.H_samples, gt.phi_samples)
        drows = deblur_benchmark({"estimated": est, "ground_truth": gt, "impulse": impulse}, gt,
                                 e.deblur_images, e.deblur_size, e.deblur_noise, cfg.deblur, cfg.seed)
        io.write_rows_csv(drows, out / "deblur_benchmark.csv")
        text += "\n\ndeblur PSNR (mean over images)\n"
        text += "\n".join(f"  {n:<13s}{v:8.2f}" for n, v in summarize_deblur(drows).items())
    (out / "evaluation.txt").write_text(text + "\n")
    plots.psf_mosaic({"ground truth": gt, "estimated": est}, e.H_rows, out / "psf_mosaic.svg")
    print(text)
    _write_manifest(cfg, "evaluate")
    return EXIT_OK


def cmd_deblur(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    stack_path = cfg.path("deblur_stack", "est_stack")
    if not (stack_path / io.MANIFEST).exists():
        raise FileNotFoundError(f"PSF stack not found: {stack_path}")
    stack = io.load_stack(stack_path)
    image = io.read_image(_require(cfg.path("deblur_input", "capture_0.pfm")))
    restored = deblur_image(image, stack, cfg.deblur)
    target = cfg.path("deblur_output", "restored.pfm")
    io.write_image(target, restored)
    if "deblur_reference" in cfg.paths:
        ref = io.read_image(_require(cfg.path("deblur_reference", "")))
        clipped = np.clip(restored, 0, 1)
        line = (f"deblur {target.name} with {stack_path.name}: PSNR {psnr(clipped, ref, 1.0):.2f} dB, "
                f"SSIM {ssim(clipped, ref, 1.0):.4f}")
        report = out / "evaluation.txt"
        old = report.read_text().splitlines() if report.exists() else []
        prefix = f"deblur {target.name} with {stack_path.name}:"
        kept = [ln for ln in old if not ln.startswith(prefix)]
        report.write_text("\n".join(kept + [line]) + "\n")
        print(line)
    _write_manifest(cfg, "deblur")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = _require(cfg.out)
    parts = [f"# run report ({out})", ""]
    for name in ("fit_summary.txt", "evaluation.txt"):
        p = out / name
        if p.exists():
            parts += [f"## {name}", "", "```", p.read_text().rstrip(), "```", ""]
    r1 = out / "fit_report_stage1.json"
    if r1.exists():
        rep = io.load_report(r1)
        plots.loss_traces(rep, out / "loss_stage1.svg")
        done = [(i, f) for i, f in zip(rep.initial_loss, rep.final_loss) if i is not None]
        ratio = max(f / i for i, f in done) if done else float("nan")
        parts += [f"worst final/initial band loss ratio: {ratio:.4f}", ""]
    stacks = {}
    for name in ("gt_stack", "est_stack"):
        p = cfg.path(name, name)
        if (p / io.MANIFEST).exists():
            stacks[name] = io.load_stack(p)
    if stacks:
        plots.psf_mosaic(stacks, cfg.evaluate.H_rows, out / "psf_mosaic.svg")
    if len(parts) == 2:
        raise FileNotFoundError(f"nothing to report in {out}")
    (out / "report.md").write_text("\n".join(parts))
    print("\n".join(parts))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "evaluate": cmd_evaluate,
            "deblur": cmd_deblur, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psflearn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--output-dir", type=Path, help="override output_dir")
    p.add_argument("--basis", choices=("proposed", "seidel"), help="wavefront basis (ablation)")
    p.add_argument("--no-curriculum", action="store_true", help="fit bands in random order")
    p.add_argument("--whole-field", action="store_true", help="fit all bands jointly, no small intervals")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    data = {}
    if args.config is not None:
        cfg = load_config(args.config)
        data = cfg.to_dict()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        data["seed"] = args.seed
        data.setdefault("estimation", {})["seed"] = args.seed
    if args.output_dir is not None:
        data["output_dir"] = str(args.output_dir)
    est = data.setdefault("estimation", {})
    if args.basis:
        est["basis"] = args.basis
    if args.no_curriculum:
        est["curriculum"] = False
    if args.whole_field:
        est["small_interval"] = False
    return config_from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (NumericFailure, FloatingPointError, ArithmeticError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidSpec, LayoutError, CoverageError, io.FormatError, FileNotFoundError,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

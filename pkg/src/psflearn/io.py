"""Persistence: images, PSF stacks, measurement sets, wavefront models, fit reports."""

from __future__ import annotations

import csv
import json
import struct
import zlib
from pathlib import Path

import cv2
import numpy as np

from .estimate import FitReport
from .measure import MeasurementSet
from .optics import CHANNELS, CAMeasure, PSFStack, SFRCurve
from .pupil import WavefrontModel

MANIFEST = "manifest.json"


class FormatError(ValueError):
    pass


def _dump(obj, path: Path):
    """Deterministic JSON: sorted keys, fixed float repr, trailing newline."""
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# images


def write_pfm(path, image: np.ndarray):
    """Little-endian float32 PFM; rows are stored bottom-up as the format requires."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"cannot write shape {img.shape} as PFM")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise FormatError(f"{path}: not a PFM file")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        c = 3 if tag == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * c)
    shape = (h, w, 3) if c == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def _png_chunk(kind: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body) & 0xFFFFFFFF)


def write_png16(path, image: np.ndarray, gamma: float | None = 2.2):
    """16-bit RGB PNG.  With ``gamma`` the data is encoded as ``v**(1/gamma)``
    and a gAMA chunk records it; ``None`` stores linear values."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if gamma:
        img = img ** (1.0 / gamma)
    q = np.round(img * 65535).astype(np.uint16)
    if q.ndim == 3:
        q = q[..., ::-1]
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise FormatError("PNG encoding failed")
    raw = buf.tobytes()
    g = int(round(100000 / gamma)) if gamma else 100000
    # gAMA goes right after the 8-byte signature and the 25-byte IHDR chunk
    raw = raw[:33] + _png_chunk(b"gAMA", struct.pack(">I", g)) + raw[33:]
    Path(path).write_bytes(raw)


def _png_gamma(raw: bytes) -> float | None:
    pos = 8
    while pos + 8 <= len(raw):
        n, kind = struct.unpack(">I4s", raw[pos:pos + 8])
        if kind == b"gAMA":
            g = struct.unpack(">I", raw[pos + 8:pos + 12])[0]
            return None if g == 100000 else 100000 / g
        if kind == b"IDAT":
            break
        pos += 12 + n
    return None


def read_png16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    q = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_UNCHANGED)
    if q is None:
        raise FormatError(f"{path}: unreadable PNG")
    if q.ndim == 3:
        q = q[..., ::-1]
    img = q.astype(float) / (65535.0 if q.dtype == np.uint16 else 255.0)
    g = _png_gamma(raw)
    return img ** g if g else img


def write_image(path, image):
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, image)
    elif path.suffix.lower() == ".png":
        write_png16(path, image)
    else:
        raise FormatError(f"unsupported image type {path.suffix}")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    if path.suffix.lower() == ".png":
        return read_png16(path)
    raise FormatError(f"unsupported image type {path.suffix}")


# --------------------------------------------------------------------------
# PSF stacks


def save_stack(stack: PSFStack, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nH, nP = stack.data.shape[:2]
    manifest = {
        "H_samples": stack.H_samples.tolist(),
        "phi_samples": stack.phi_samples.tolist(),
        "band_edges": np.asarray(stack.band_edges).tolist(),
        "channels": list(CHANNELS),
        "kernel_size": stack.kernel_size,
        "shifts": np.asarray(stack.shifts).tolist(),
        "dtype": "float32-le",
        "pattern": "psf_H{i}_phi{j}_{c}.f32",
        "meta": stack.meta,
    }
    _dump(manifest, d / MANIFEST)
    for i in range(nH):
        for j in range(nP):
            for ci, c in enumerate(CHANNELS):
                (d / f"psf_H{i}_phi{j}_{c}.f32").write_bytes(stack.data[i, j, ci].astype("<f4").tobytes())


def load_stack(directory) -> PSFStack:
    d = Path(directory)
    if not (d / MANIFEST).exists():
        raise FileNotFoundError(d / MANIFEST)
    m = json.loads((d / MANIFEST).read_text())
    k = int(m["kernel_size"])
    H = np.array(m["H_samples"], dtype=float)
    P = np.array(m["phi_samples"], dtype=float)
    data = np.empty((H.size, P.size, 3, k, k))
    for i in range(H.size):
        for j in range(P.size):
            for ci, c in enumerate(m["channels"]):
                raw = (d / f"psf_H{i}_phi{j}_{c}.f32").read_bytes()
                if len(raw) != 4 * k * k:
                    raise FormatError(f"psf_H{i}_phi{j}_{c}.f32 has {len(raw)} bytes, expected {4 * k * k}")
                data[i, j, ci] = np.frombuffer(raw, "<f4").reshape(k, k)
    return PSFStack(H, P, data, np.array(m["band_edges"]), np.array(m["shifts"], dtype=float), m.get("meta", {}))


# --------------------------------------------------------------------------
# measurements, models, reports


def measurements_to_dict(ms: MeasurementSet) -> dict:
    sfr = [{"band": s.band, "channel": s.channel, "H": s.H, "phi": s.phi, "nominal_phi": s.nominal_phi,
            "lsf_skew": s.lsf_skew, "n_rois": s.n_rois, "freqs": np.asarray(s.freqs).tolist(),
            "values": np.asarray(s.values).tolist()} for s in ms.sfr]
    ca = [{"band": c.band, "H": c.H, "phi": c.phi, "nominal_phi": c.nominal_phi, "n_rois": c.n_rois,
           "delta_ca_r": c.delta_ca_r, "delta_ca_b": c.delta_ca_b} for c in ms.ca]
    return {"band_edges": ms.band_edges.tolist(), "noise_sigma": ms.noise_sigma,
            "ca_half_window": ms.ca_half_window, "missing": ms.missing, "meta": ms.meta,
            "sfr": sfr, "ca": ca}


def measurements_from_dict(d: dict) -> MeasurementSet:
    sfr = [SFRCurve(np.array(r["freqs"]), np.array(r["values"]), r["H"], r["phi"], r["channel"],
                    band=r["band"], nominal_phi=r["nominal_phi"], lsf_skew=r["lsf_skew"], n_rois=r["n_rois"])
           for r in d["sfr"]]
    ca = [CAMeasure(r["H"], r["phi"], r["delta_ca_r"], r["delta_ca_b"], band=r["band"],
                    nominal_phi=r["nominal_phi"], n_rois=r["n_rois"]) for r in d["ca"]]
    return MeasurementSet(np.array(d["band_edges"]), sfr, ca, d["noise_sigma"], d["ca_half_window"],
                          d.get("missing", []), d.get("meta", {}))


def save_measurements(ms: MeasurementSet, path):
    _dump(measurements_to_dict(ms), Path(path))


def load_measurements(path) -> MeasurementSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return measurements_from_dict(json.loads(path.read_text()))


def save_model(model: WavefrontModel, path):
    _dump(model.to_dict(), Path(path))


def load_model(path) -> WavefrontModel:
    return WavefrontModel.from_dict(json.loads(Path(path).read_text()))


def save_report(report: FitReport, path, include_time: bool = True):
    d = report.to_dict()
    if not include_time:
        d.pop("wall_time")
    _dump(d, Path(path))


def load_report(path) -> FitReport:
    d = json.loads(Path(path).read_text())
    d.setdefault("wall_time", 0.0)
    return FitReport.from_dict(d)


def write_traces_csv(report: FitReport, path):
    """Long-format loss traces: stage, band, iteration, loss."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "band", "iteration", "loss"])
        for b, trace in enumerate(report.traces):
            for i, v in enumerate(trace):
                w.writerow([report.stage, b, i, repr(float(v))])


def write_rows_csv(rows: list[dict], path):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

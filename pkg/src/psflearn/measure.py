"""Synthetic capture and slanted-edge measurement.

Images are float arrays of shape ``(height, width, 3)`` in linear light.  The
field height of a pixel is its distance from the image centre divided by the
half-diagonal; its field azimuth ``psi`` is clockwise from up, matching the
PSF azimuth convention in :mod:`psflearn.optics`.  An edge whose bright-side
normal points along absolute azimuth ``beta`` therefore probes the +Y-axis
PSF at relative azimuth ``beta - psi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal
from scipy.spatial import cKDTree

from .optics import CHANNELS, DEFAULT_FREQS, CAMeasure, PSFStack, SFRCurve

log = logging.getLogger(__name__)


class InvalidSpec(ValueError):
    pass


class CoverageError(ValueError):
    pass


class LayoutError(ValueError):
    pass


class MissingMeasurement(LookupError):
    pass


@dataclass
class ChartSpec:
    square_size: float = 96.0
    tilt: float = np.deg2rad(5.0)
    margin: int = 0
    contrast: tuple[float, float] = (0.1, 0.9)
    offset: tuple[float, float] = (0.0, 0.0)

    def validate(self):
        dark, light = self.contrast
        if not 0.0 <= dark < light <= 1.0:
            raise InvalidSpec(f"contrast must satisfy 0 <= dark < light <= 1, got {self.contrast}")
        if self.square_size < 16:
            raise InvalidSpec(f"square_size must be >= 16, got {self.square_size}")
        if self.margin < 0:
            raise InvalidSpec("margin must be nonnegative")


@dataclass
class MeasurementSet:
    """SFR and CA targets grouped by field-height band.

    Each record carries its ``band`` index; ``missing`` lists the
    (band, phi) cells where no qualifying edge was found.
    """

    band_edges: np.ndarray
    sfr: list = field(default_factory=list)
    ca: list = field(default_factory=list)
    noise_sigma: float = 0.0
    ca_half_window: float = 8.0
    missing: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.band_edges = np.asarray(self.band_edges, dtype=float)

    @property
    def n_bands(self) -> int:
        return self.band_edges.size - 1

    def sfr_in_band(self, band: int) -> list:
        return [s for s in self.sfr if s.band == band]

    def ca_in_band(self, band: int) -> list:
        return [c for c in self.ca if c.band == band]

    def validate(self):
        for c in self.ca:
            if not 0.0 <= c.H <= 1.0:
                raise ValueError(f"CA record outside [0, 1]: H={c.H}")
            if not any(s.band == c.band and s.channel == "G" and _same_phi(s.nominal_phi, c.nominal_phi)
                       for s in self.sfr):
                raise ValueError(f"CA record (band {c.band}, phi {c.nominal_phi}) lacks a G SFR")


def _same_phi(a, b, tol=1e-9):
    return abs(np.angle(np.exp(1j * (a - b)))) < tol


# --------------------------------------------------------------------------
# chart


def field_coords(height: int, width: int, rows=None, cols=None):
    """Normalized field height and azimuth at pixel centres."""
    rows = np.arange(height) if rows is None else np.asarray(rows)
    cols = np.arange(width) if cols is None else np.asarray(cols)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    half_diag = 0.5 * np.hypot(height - 1, width - 1)
    dr = rows - cy
    dc = cols - cx
    H = np.hypot(dr, dc) / half_diag
    psi = np.mod(np.arctan2(dc, -dr), 2 * np.pi)
    return H, psi


def synth_checkerboard(spec: ChartSpec, width: int, height: int, supersample: int = 16) -> np.ndarray:
    """Anti-aliased tilted checkerboard; a square is centred on the image centre.

    Only pixels within a pixel of an edge are supersampled, on a
    ``supersample`` x ``supersample`` grid, to approximate pixel-area coverage.
    """
    spec.validate()
    if min(width, height) < 4 * spec.square_size:
        raise InvalidSpec("image must span at least four squares per side")
    dark, light = spec.contrast
    s = float(spec.square_size)
    cy, cx = height / 2.0 + spec.offset[1], width / 2.0 + spec.offset[0]
    cs, sn = np.cos(spec.tilt), np.sin(spec.tilt)

    def parity(x, y):
        X = cs * x + sn * y
        Y = -sn * x + cs * y
        return (np.floor(X / s + 0.5) + np.floor(Y / s + 0.5)) % 2, X, Y

    y = np.arange(height)[:, None] + 0.5 - cy
    x = np.arange(width)[None, :] + 0.5 - cx
    frac, X, Y = parity(x, y)
    dist = lambda U: np.abs(U / s + 0.5 - np.round(U / s + 0.5)) * s
    near = np.nonzero(np.minimum(dist(X), dist(Y)) < 0.75)
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    oy, ox = (a.ravel() for a in np.meshgrid(sub, sub, indexing="ij"))
    step = max(1, 2 ** 21 // oy.size)
    for i in range(0, near[0].size, step):
        r, c = near[0][i:i + step], near[1][i:i + step]
        p, _, _ = parity(x[0, c][:, None] + ox[None, :], y[r, 0][:, None] + oy[None, :])
        frac[r, c] = p.mean(axis=1)
    out = light + (dark - light) * frac
    if spec.margin:
        m = spec.margin
        border = np.full_like(out, 0.5 * (dark + light))
        border[m:-m, m:-m] = out[m:-m, m:-m]
        out = border
    return np.repeat(out[..., None], 3, axis=2)


def chart_poses(spec: ChartSpec, tilts=(0.0, np.pi / 4), shifts=(0.0, 0.5)) -> list[ChartSpec]:
    """Capture set: the chart turned by each of ``tilts`` and slid by each
    fraction of a square along the diagonal.  Two tilts 45 deg apart put edges
    of every measured azimuth on both the image axes and the diagonals."""
    out = []
    for dt in tilts:
        for f in shifts:
            o = (f * spec.square_size, f * spec.square_size)
            out.append(ChartSpec(spec.square_size, spec.tilt + dt, spec.margin, spec.contrast, o))
    return out


# --------------------------------------------------------------------------
# spatially varying blur


def _tile_weights(length: int, tile: int, fade: int):
    """Partition-of-unity ramps: list of (start, stop, weights) per tile."""
    n = int(np.ceil(length / tile))
    x = np.arange(length) + 0.5
    out = []
    for i in range(n):
        lo, hi = i * tile, min(length, (i + 1) * tile)
        w = np.ones(length)
        if i > 0:
            w = np.minimum(w, np.clip((x - (lo - fade / 2)) / fade, 0, 1))
        if i < n - 1:
            w = np.minimum(w, np.clip(((hi + fade / 2) - x) / fade, 0, 1))
        nz = np.nonzero(w > 0)[0]
        out.append((nz[0], nz[-1] + 1, w[nz[0]:nz[-1] + 1], 0.5 * (lo + hi)))
    return out


def _apply_tiled(image: np.ndarray, stack, tile: int, fade: int, op, margin: int | None = None) -> np.ndarray:
    """Blend ``op(patch, kernel)`` over tiles using the kernels at each tile centre.

    ``stack`` is a :class:`PSFStack` (nearest cell) or any object with
    ``kernels_at(H, psi)``, ``kernel_size`` and ``H_max``.  Each patch carries
    ``margin`` pixels of context (default half a kernel).
    """
    h, w, _ = image.shape
    k = stack.kernel_size
    pad = k // 2 + 1 if margin is None else int(margin)
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    out = np.zeros_like(image, dtype=float)
    rows = _tile_weights(h, tile, fade)
    cols = _tile_weights(w, tile, fade)
    for r0, r1, wr, rc in rows:
        for c0, c1, wc, cc in cols:
            H, psi = field_coords(h, w, rc - 0.5, cc - 0.5)
            if H > stack.H_max + 1e-6:
                raise CoverageError(f"stack tops out at H={stack.H_max} but tile needs {H:.3f}")
            kernels = stack.kernels_at(H, psi)
            patch = padded[r0:r1 + 2 * pad, c0:c1 + 2 * pad]
            weight = wr[:, None] * wc[None, :]
            for ci in range(3):
                res = op(patch[..., ci], kernels[ci])
                out[r0:r1, c0:c1, ci] += weight * res[pad:pad + r1 - r0, pad:pad + c1 - c0]
    return out


def _convolve(patch, kernel):
    return signal.fftconvolve(patch, kernel, mode="same")


def degrade(image: np.ndarray, stack, noise_sigma: float = 0.0, seed: int | None = 0,
            tile: int = 64, fade: int = 16) -> np.ndarray:
    """Spatially varying blur with the nearest stack cell per tile, plus Gaussian noise."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) image")
    out = _apply_tiled(image, stack, tile, fade, _convolve)
    if noise_sigma > 0:
        out = add_noise(out, noise_sigma, seed, tile)
    return out


def add_noise(image: np.ndarray, sigma: float, seed: int | None, tile: int = 64) -> np.ndarray:
    """Additive Gaussian noise with one child stream per tile."""
    h, w, c = image.shape
    nr, nc = -(-h // tile), -(-w // tile)
    children = np.random.SeedSequence(seed).spawn(nr * nc)
    out = image.copy()
    for i in range(nr):
        for j in range(nc):
            rng = np.random.default_rng(children[i * nc + j])
            sl = (slice(i * tile, (i + 1) * tile), slice(j * tile, (j + 1) * tile))
            out[sl] += sigma * rng.standard_normal(out[sl].shape)
    return out


def average_frames(frames) -> np.ndarray:
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to average")
    shape = np.shape(frames[0])
    if any(np.shape(f) != shape for f in frames):
        raise ValueError("frames differ in shape")
    return np.mean(np.stack(frames), axis=0)


# --------------------------------------------------------------------------
# Bayer


_RGGB = ((0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 2))


def bayer_mosaic(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    if h % 2 or w % 2:
        raise LayoutError(f"Bayer layout needs even dimensions, got {h}x{w}")
    raw = np.empty((h, w))
    for r, c, ch in _RGGB:
        raw[r::2, c::2] = image[r::2, c::2, ch]
    return raw


def demosaic_bilinear(raw: np.ndarray) -> np.ndarray:
    h, w = raw.shape
    if h % 2 or w % 2:
        raise LayoutError(f"Bayer layout needs even dimensions, got {h}x{w}")
    masks = np.zeros((3, h, w))
    for r, c, ch in _RGGB:
        masks[ch, r::2, c::2] = 1.0
    k_rb = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0
    k_g = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
    out = np.empty((h, w, 3))
    for ch, k in ((0, k_rb), (1, k_g), (2, k_rb)):
        # mirror keeps the 2-periodic layout intact at the border
        out[..., ch] = ndimage.convolve(raw * masks[ch], k, mode="mirror")
    return out


# --------------------------------------------------------------------------
# slanted-edge ROIs


@dataclass
class EdgeROI:
    center: np.ndarray
    normal: np.ndarray
    H: float
    psi: float
    beta: float
    source: int = 0

    @property
    def phi(self) -> float:
        return float(np.mod(self.beta - self.psi, 2 * np.pi))


@dataclass
class ROIConfig:
    across: float = 48.0
    along: float = 16.0
    residual: float = 2.0
    spacing: int = 8
    phi_tol: float = np.deg2rad(10.0)
    max_rois: int = 12
    smooth: float = 1.5


def _captures(image) -> list:
    return list(image) if isinstance(image, (list, tuple)) else [image]


def _half_extent(normal_rc, cfg) -> np.ndarray:
    """Row/col half-size of the bounding box of an edge-aligned ROI."""
    n = np.abs(np.asarray(normal_rc))
    return cfg.across * n + cfg.along * n[::-1] + 2.0


def find_edge_rois(image, cfg: ROIConfig | None = None) -> list[EdgeROI]:
    """Locate straight-edge patches holding exactly one edge across the ROI footprint.

    ``image`` may be a list of captures; each ROI records its ``source`` index.
    """
    cfg = cfg or ROIConfig()
    if isinstance(image, (list, tuple)):
        out = []
        for i, im in enumerate(image):
            for r in find_edge_rois(im, cfg):
                r.source = i
                out.append(r)
        return out
    g = ndimage.gaussian_filter(np.asarray(image)[..., 1], cfg.smooth)
    h, w = g.shape
    lo, hi = np.percentile(g, [2, 98])
    b = g > 0.5 * (lo + hi)
    tr = np.zeros_like(b)
    tr[:, :-1] |= b[:, :-1] != b[:, 1:]
    tr[:-1, :] |= b[:-1, :] != b[1:, :]
    pts = np.argwhere(tr).astype(float)
    if len(pts) == 0:
        return []
    tree = cKDTree(pts)
    margin = 4.0
    radius = float(np.hypot(cfg.across + margin, cfg.along + margin))
    cells = np.floor(pts / cfg.spacing).astype(int)
    _, first = np.unique(cells, axis=0, return_index=True)
    cand = pts[np.sort(first)]
    edge = cfg.along + margin
    inside = ((cand[:, 0] > edge) & (cand[:, 0] < h - 1 - edge)
              & (cand[:, 1] > edge) & (cand[:, 1] < w - 1 - edge))
    cand = cand[inside]
    rois = []
    near = tree.query_ball_point(cand, cfg.along + margin)
    far = tree.query_ball_point(cand, radius)
    for p, nb, nb_far in zip(cand, near, far):
        # local line from the nearby transitions
        q = pts[nb]
        m = q.mean(axis=0)
        _, _, vt = np.linalg.svd(q - m, full_matrices=False)
        direction, normal_rc = vt[0], vt[1]
        # every transition inside the edge-aligned footprint must sit on that line
        d = pts[nb_far] - m
        along = d @ direction
        across = d @ normal_rc
        box = (np.abs(along - (p - m) @ direction) <= cfg.along + margin) & (np.abs(across) <= cfg.across + margin)
        if np.abs(across[box]).max() > cfg.residual:
            continue
        on_line = box & (np.abs(across) <= cfg.residual)
        rel_along = along[on_line] - (p - m) @ direction
        if rel_along.min() > -cfg.along or rel_along.max() < cfg.along:
            continue
        c = m + ((p - m) @ direction) * direction
        ext = np.ceil(_half_extent(normal_rc, cfg)) + 1
        if np.any(c - ext < 0) or c[0] + ext[0] > h - 1 or c[1] + ext[1] > w - 1:
            continue
        # orient the normal to the bright side
        probe = 6.0
        a = ndimage.map_coordinates(g, [[c[0] + probe * normal_rc[0], c[0] - probe * normal_rc[0]],
                                        [c[1] + probe * normal_rc[1], c[1] - probe * normal_rc[1]]], order=1)
        if a[0] < a[1]:
            normal_rc = -normal_rc
        H, psi = field_coords(h, w, c[0], c[1])
        beta = float(np.mod(np.arctan2(normal_rc[1], -normal_rc[0]), 2 * np.pi))
        rois.append(EdgeROI(c, normal_rc, float(H), float(psi), beta))
    return rois


def select_rois(rois, H_band, phi, cfg: ROIConfig | None = None, modulo=np.pi):
    """ROIs in the band whose relative azimuth is within tolerance of ``phi`` (mod ``modulo``)."""
    cfg = cfg or ROIConfig()
    lo, hi = H_band
    picked = []
    for r in rois:
        if not lo <= r.H < hi:
            continue
        d = np.mod(r.phi - phi + modulo / 2, modulo) - modulo / 2
        if abs(d) <= cfg.phi_tol:
            picked.append((abs(d), r))
    picked.sort(key=lambda t: t[0])
    out, taken = [], []
    for _, r in picked:
        if any(src == r.source and np.hypot(*(r.center - c)) < cfg.along for src, c in taken):
            continue
        out.append(r)
        taken.append((r.source, r.center))
        if len(out) >= cfg.max_rois:
            break
    return out


# --------------------------------------------------------------------------
# per-ROI edge profiles


@dataclass
class EdgeProfile:
    t: np.ndarray
    esf: np.ndarray
    roi: EdgeROI


def edge_profiles(image: np.ndarray, roi: EdgeROI, cfg: ROIConfig | None = None, oversample: int = 4):
    """Per-channel ESFs binned along the refined G-channel edge normal.

    Returns ``(t, esf)`` with ``esf`` of shape ``(3, nbins)`` normalized to
    [0, 1] by the plateaus on either side.
    """
    cfg = cfg or ROIConfig()
    img = np.asarray(image, dtype=float)
    n = roi.normal
    along_dir = np.array([-n[1], n[0]])
    er, ec = np.ceil(_half_extent(n, cfg)).astype(int)
    r0, c0 = np.round(roi.center).astype(int)
    rr, cc = np.mgrid[r0 - er:r0 + er + 1, c0 - ec:c0 + ec + 1]
    if rr.min() < 0 or cc.min() < 0 or rr.max() >= img.shape[0] or cc.max() >= img.shape[1]:
        raise MissingMeasurement("ROI footprint leaves the image")
    patch = img[rr, cc]
    rel = np.stack([rr - roi.center[0], cc - roi.center[1]], axis=-1)
    s = rel @ along_dir
    t0 = rel @ n
    # refine the line on G: centroid regression over scan lines normal to the edge
    s_line = np.arange(-np.floor(cfg.along), np.floor(cfg.along) + 1)
    t_line = np.arange(-np.floor(cfg.across / 2), np.floor(cfg.across / 2) + 1)
    S, T = np.meshgrid(s_line, t_line, indexing="ij")
    pos = roi.center[:, None, None] + along_dir[:, None, None] * S + n[:, None, None] * T
    gl = ndimage.map_coordinates(img[..., 1], pos, order=1)
    deriv = np.abs(np.gradient(gl, axis=1))
    wsum = deriv.sum(axis=1)
    ok = wsum > 0.2 * wsum.max()
    if ok.sum() < 4:
        raise MissingMeasurement("too few scan lines across the edge")
    cent = (deriv * T).sum(axis=1)[ok] / wsum[ok]
    b, a = np.polyfit(s_line[ok], cent, 1)
    t = (t0 - a - b * s) / np.hypot(1.0, b)
    sel = (np.abs(t) <= cfg.across) & (np.abs(s) <= cfg.along)
    data = patch
    step = 1.0 / oversample
    nb = int(round(2 * cfg.across / step))
    edges = -cfg.across + step * np.arange(nb + 1)
    idx = np.clip(np.searchsorted(edges, t[sel], side="right") - 1, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb)
    centers = 0.5 * (edges[1:] + edges[:-1])
    esf = np.empty((3, nb))
    for ci in range(3):
        sums = np.bincount(idx, weights=data[..., ci][sel], minlength=nb)
        good = counts > 0
        vals = np.interp(centers, centers[good], sums[good] / counts[good])
        esf[ci] = vals
    plateau = cfg.across * 0.7
    lo_m = esf[:, centers < -plateau].mean(axis=1)
    hi_m = esf[:, centers > plateau].mean(axis=1)
    span = hi_m - lo_m
    if np.any(span <= 0):
        raise MissingMeasurement("edge has no contrast")
    esf = (esf - lo_m[:, None]) / span[:, None]
    return EdgeProfile(centers, esf, roi)


def esf_noise_var(t: np.ndarray, esf: np.ndarray, plateau: float) -> np.ndarray:
    """Per-bin noise variance from first differences on both plateaus."""
    esf = np.atleast_2d(esf)
    out = []
    for side in (t < -plateau, t > plateau):
        out.append(np.diff(esf[:, side], axis=-1) ** 2)
    return 0.5 * np.concatenate(out, axis=-1).mean(axis=-1)


def sfr_from_esf(t: np.ndarray, esf: np.ndarray, freqs=None, oversample: int = 4, normal=(0.0, 1.0),
                 noise_var=None):
    """Tukey-windowed LSF spectrum, corrected for pixel, bin and derivative filters.

    The window is flat over the inner 70% so kernel tails keep full weight.
    The square pixel aperture projected on the edge normal ``(nr, nc)`` has
    transfer ``sinc(f nr) sinc(f nc)``.  With ``noise_var`` (per ESF bin) the
    expected noise power is removed before taking the magnitude.
    """
    freqs = DEFAULT_FREQS if freqs is None else np.asarray(freqs, dtype=float)
    step = 1.0 / oversample
    lsf = np.gradient(np.atleast_2d(esf), axis=-1)
    nb = lsf.shape[-1]
    win = signal.windows.tukey(nb, 0.3)
    S = np.fft.rfft(lsf * win, axis=-1)
    f = np.fft.rfftfreq(nb, d=step)
    power = np.abs(S) ** 2
    if noise_var is not None:
        # central difference has transfer i sin(2 pi f step)
        nv = np.atleast_1d(noise_var)[:, None] * np.sin(2 * np.pi * f * step) ** 2 * (win ** 2).sum()
        power = np.maximum(power - nv, 0.0)
    spec = np.sqrt(power)
    spec = spec / spec[..., :1]
    nr, nc = normal
    corr = np.sinc(f * nr) * np.sinc(f * nc) * np.sinc(f * step) * np.sinc(2 * f * step)
    spec = spec / corr
    out = np.stack([np.interp(freqs, f, s) for s in spec])
    out[:, freqs == 0] = 1.0
    out = np.clip(out, 0.0, None)
    return out if np.ndim(esf) > 1 else out[0]


def lsf_skew(t: np.ndarray, esf: np.ndarray, half: float = 12.0) -> np.ndarray:
    """Third standardized moment of the LSF about its centroid (per channel)."""
    lsf = np.gradient(np.atleast_2d(esf), axis=-1)
    keep = np.abs(t) <= half
    lsf = np.clip(lsf[:, keep], 0, None)
    tt = t[keep]
    m = lsf.sum(axis=1, keepdims=True)
    mu = (lsf * tt).sum(axis=1, keepdims=True) / m
    var = (lsf * (tt - mu) ** 2).sum(axis=1) / m[:, 0]
    return (lsf * (tt - mu) ** 3).sum(axis=1) / m[:, 0] / np.maximum(var, 1e-12) ** 1.5


def ca_from_esf(t: np.ndarray, esf: np.ndarray, half_window: float = 8.0) -> np.ndarray:
    keep = np.abs(t) <= half_window
    return np.trapezoid(esf[..., keep], t[keep], axis=-1)


def _fold(phi_rel, phi):
    """+1 if ``phi_rel`` points along ``phi``, -1 if along ``phi + pi``."""
    return 1.0 if abs(np.angle(np.exp(1j * (phi_rel - phi)))) <= np.pi / 2 else -1.0


def _folded_mean(profiles, phi):
    """Mean ESF with every profile oriented along +u(phi).

    A profile taken along ``phi + pi`` sees the line spread mirrored, so it
    is reversed (and complemented) before averaging.
    """
    t = profiles[0].t
    acc = np.zeros_like(profiles[0].esf)
    for p in profiles:
        acc += p.esf if _fold(p.roi.phi, phi) > 0 else 1.0 - p.esf[:, ::-1]
    return t, acc / len(profiles)


def _profiles(image, H_band, phi, rois, cfg):
    images = _captures(image)
    chosen = select_rois(rois, H_band, phi, cfg)
    profiles = []
    for r in chosen:
        try:
            profiles.append(edge_profiles(images[r.source], r, cfg))
        except MissingMeasurement as exc:
            log.debug("dropping ROI at %s: %s", r.center, exc)
    if not profiles:
        raise MissingMeasurement(f"no edge near phi={np.rad2deg(phi):.1f} deg in band {H_band}")
    return profiles


def extract_sfr(image, H_band, phi, rois=None, cfg: ROIConfig | None = None, freqs=None):
    """Per-channel SFR averaged over the band's qualifying edges.

    Each profile's spectrum is debiased for its own noise power before the
    magnitudes are averaged.  Returns a dict channel -> SFRCurve carrying
    the LSF skew along +u(phi) and the ROI count.
    """
    cfg = cfg or ROIConfig()
    freqs = DEFAULT_FREQS if freqs is None else np.asarray(freqs, dtype=float)
    rois = find_edge_rois(image, cfg) if rois is None else rois
    profiles = _profiles(image, H_band, phi, rois, cfg)
    plateau = 0.7 * cfg.across
    sfr = np.mean([sfr_from_esf(p.t, p.esf, freqs, normal=p.roi.normal,
                                noise_var=esf_noise_var(p.t, p.esf, plateau)) for p in profiles], axis=0)
    t, esf = _folded_mean(profiles, phi)
    skew = lsf_skew(t, esf)
    phi_rel = np.array([p.roi.phi for p in profiles])
    d = np.mod(phi_rel - phi + np.pi / 2, np.pi) - np.pi / 2
    phi_eff = float(phi + d.mean())
    H = float(np.mean([p.roi.H for p in profiles]))
    out = {}
    for ci, ch in enumerate(CHANNELS):
        out[ch] = SFRCurve(freqs, sfr[ci], H, phi_eff, ch, nominal_phi=float(phi),
                           lsf_skew=float(skew[ci]), n_rois=len(profiles))
    return out


def extract_ca(image, H_band, phi, rois=None, cfg: ROIConfig | None = None, half_window: float = 8.0):
    """Chromatic-area differences against G, averaged over the band's edges."""
    cfg = cfg or ROIConfig()
    rois = find_edge_rois(image, cfg) if rois is None else rois
    profiles = _profiles(image, H_band, phi, rois, cfg)
    vals = []
    for p in profiles:
        a = ca_from_esf(p.t, p.esf, half_window)
        # CA differences are antisymmetric under phi -> phi + pi
        vals.append(_fold(p.roi.phi, phi) * (a[[0, 2]] - a[1]))
    dr, db = np.mean(vals, axis=0)
    phi_rel = np.array([p.roi.phi for p in profiles])
    d = np.mod(phi_rel - phi + np.pi / 2, np.pi) - np.pi / 2
    return CAMeasure(float(np.mean([p.roi.H for p in profiles])), float(phi + d.mean()), float(dr), float(db),
                     nominal_phi=float(phi), n_rois=len(profiles))


def build_measurements(image, band_edges, phis, noise_sigma: float = 0.0, cfg: ROIConfig | None = None,
                       half_window: float = 8.0, freqs=None) -> MeasurementSet:
    """Extract SFR and CA targets for every (band, phi); gaps are recorded, not raised."""
    cfg = cfg or ROIConfig()
    rois = find_edge_rois(image, cfg)
    ms = MeasurementSet(np.asarray(band_edges), noise_sigma=noise_sigma, ca_half_window=half_window)
    for b in range(ms.n_bands):
        band = (ms.band_edges[b], ms.band_edges[b + 1] + (1e-9 if b == ms.n_bands - 1 else 0.0))
        for phi in phis:
            try:
                curves = extract_sfr(image, band, phi, rois, cfg, freqs)
                ca = extract_ca(image, band, phi, rois, cfg, half_window)
            except MissingMeasurement as exc:
                ms.missing.append({"band": b, "phi": float(phi), "reason": str(exc)})
                log.warning("band %d: %s", b, exc)
                continue
            for c in curves.values():
                c.band = b
                ms.sfr.append(c)
            ca.band = b
            ms.ca.append(ca)
    return ms

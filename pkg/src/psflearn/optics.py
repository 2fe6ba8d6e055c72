"""Forward optical transforms: pupil -> PSF -> MTF/SFR, rotation, shift, ESF, CA.

Image-plane conventions
-----------------------
Arrays are indexed ``[row, col]`` with rows pointing down.  Azimuths ``phi``
are measured clockwise from the image +Y axis (up), so the edge-normal
direction for ``phi`` is ``(dcol, drow) = (sin phi, -cos phi)``.  Shifts are
given as ``(dx, dy)`` with ``dx`` to the right and ``dy`` up, i.e. ``dy > 0``
moves a +Y-axis PSF radially outward.

ESF/CA sign convention: the ESF along ``phi`` is the cumulative distribution
of kernel mass projected on the edge normal; the bright side of the edge is
the positive side.  Moving a kernel by ``+s`` along the normal lowers its CA
area by ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage, sparse

from .pupil import PupilGrid, WavefrontModel, eval_opd, make_pupil_grid

CHANNELS = ("R", "G", "B")
DEFAULT_KERNEL = 33
DEFAULT_FREQS = np.linspace(0.0, 0.5, 64)


class ShiftRangeError(ValueError):
    pass


class FrequencyRangeError(ValueError):
    pass


class IncompleteInput(ValueError):
    pass


@dataclass
class PSFKernel:
    data: np.ndarray
    H: float = 0.0
    channel: str = "G"
    pixel_pitch: float = 1.0

    @property
    def size(self) -> int:
        return self.data.shape[0]

    def normalized(self) -> "PSFKernel":
        return PSFKernel(self.data / self.data.sum(), self.H, self.channel, self.pixel_pitch)


@dataclass
class SFRCurve:
    """Response along azimuth ``phi``.

    Measured curves also carry their band index, the azimuth they were
    requested at (``phi`` is the mean measured one), the mean LSF skewness
    along ``+u(phi)`` and the number of edges averaged.
    """

    freqs: np.ndarray
    values: np.ndarray
    H: float
    phi: float
    channel: str
    band: int = -1
    nominal_phi: float | None = None
    lsf_skew: float = 0.0
    n_rois: int = 0


@dataclass
class ESFCurve:
    positions: np.ndarray
    values: np.ndarray


@dataclass
class CAMeasure:
    H: float
    phi: float
    delta_ca_r: float
    delta_ca_b: float
    band: int = -1
    nominal_phi: float | None = None
    n_rois: int = 0


@dataclass(frozen=True)
class ShiftVector:
    dx: float = 0.0
    dy: float = 0.0


def edge_normal(phi: float) -> tuple[float, float]:
    """Unit edge normal for azimuth ``phi`` as ``(dcol, drow)``."""
    return np.sin(phi), -np.cos(phi)


# --------------------------------------------------------------------------
# pupil -> PSF


def pupil_field(grid: PupilGrid, opd: np.ndarray, pad: int = 2) -> np.ndarray:
    """Complex pupil function zero-padded to ``pad*n`` with the axis at index 0."""
    if opd.shape != (grid.n, grid.n):
        raise ValueError(f"opd shape {opd.shape} does not match pupil grid {grid.n}")
    N = pad * grid.n
    big = np.zeros((N, N), dtype=complex)
    o = N // 2 - grid.n // 2
    big[o:o + grid.n, o:o + grid.n] = grid.aperture * np.exp(2j * np.pi * opd)
    return sfft.ifftshift(big)


def wrapped_coords(N: int) -> np.ndarray:
    c = sfft.fftfreq(N, 1.0 / N)
    if N % 2 == 0:
        c[N // 2] = 0.0  # the Nyquist index has no mirror partner; leave it unweighted
    return c


def centroid_wrapped(I: np.ndarray) -> np.ndarray:
    """Intensity centroid ``(..., 2)`` in (row, col) with coordinates wrapped about 0."""
    N = I.shape[-1]
    c = wrapped_coords(N)
    tot = I.sum(axis=(-2, -1))
    r = (I.sum(axis=-1) * c).sum(axis=-1) / tot
    q = (I.sum(axis=-2) * c).sum(axis=-1) / tot
    return np.stack([r, q], axis=-1)


def shift_phase(N: int, shift_rc: np.ndarray) -> np.ndarray:
    """Fourier multiplier that translates an N x N array by ``shift_rc`` (rows, cols)."""
    f = sfft.fftfreq(N)
    shift_rc = np.asarray(shift_rc, dtype=float)
    r = shift_rc[..., 0, None, None]
    q = shift_rc[..., 1, None, None]
    return np.exp(-2j * np.pi * (f[:, None] * r + f[None, :] * q))


def crop_index(N: int, k: int) -> np.ndarray:
    """Wrapped indices of a k-wide window centred on index 0."""
    return np.arange(-(k // 2), k // 2 + 1) % N


def psf_from_field(field: np.ndarray, k: int = DEFAULT_KERNEL) -> np.ndarray:
    """|FFT|^2 of an origin-centred pupil field, re-centred on its centroid and
    cropped to k x k.  Works on stacks along leading axes; not normalised."""
    N = field.shape[-1]
    I = np.abs(sfft.fft2(field)) ** 2
    c = centroid_wrapped(I)
    I = sfft.ifft2(sfft.fft2(I) * shift_phase(N, -c)).real
    idx = crop_index(N, k)
    return I[..., idx[:, None], idx[None, :]]


def psf_from_wavefront(grid: PupilGrid, opd: np.ndarray, k: int = DEFAULT_KERNEL,
                       pad: int = 2, H: float = 0.0, channel: str = "G") -> PSFKernel:
    """Incoherent PSF |F(A exp(i 2 pi W))|^2, centroid-centred, cropped, unit sum.

    With ``pad=2`` the diffraction cutoff lands exactly at 0.5 cycles/pixel.
    """
    K = psf_from_field(pupil_field(grid, opd, pad), k)
    K = np.clip(K, 0.0, None)
    return PSFKernel(K / K.sum(), H=H, channel=channel)


# --------------------------------------------------------------------------
# PSF -> MTF / SFR


def mtf_from_psf(psf: PSFKernel | np.ndarray, pad: int = 4) -> np.ndarray:
    """|F(PSF)| on a ``pad*k`` grid, DC at ``[0, 0]`` (unshifted layout)."""
    data = psf.data if isinstance(psf, PSFKernel) else np.asarray(psf)
    L = pad * data.shape[-1]
    M = np.abs(sfft.fft2(data, s=(L, L)))
    return M / M[..., :1, :1]


def ray_sampler(L: int, phis, freqs) -> sparse.csr_matrix:
    """Sparse bilinear interpolator from a flattened L x L spectrum to SFR rays.

    Row ``i*len(freqs) + j`` samples frequency ``freqs[j]`` along the
    direction ``(-sin phi_i, cos phi_i)`` in (col, row) axes, periodic wrap.
    """
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    freqs = np.asarray(freqs, dtype=float)
    if freqs.min() < 0 or freqs.max() > 0.5 + 1e-12:
        raise FrequencyRangeError("SFR frequencies must lie in [0, 0.5] cycles/pixel")
    rows, cols, vals = [], [], []
    for i, phi in enumerate(phis):
        pr = freqs * L * np.cos(phi)
        pc = -freqs * L * np.sin(phi)
        r0, c0 = np.floor(pr), np.floor(pc)
        fr, fc = pr - r0, pc - c0
        out = i * freqs.size + np.arange(freqs.size)
        for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (1, 0, fr * (1 - fc)),
                          (0, 1, (1 - fr) * fc), (1, 1, fr * fc)):
            rr = (r0 + dr).astype(int) % L
            cc = (c0 + dc).astype(int) % L
            rows.append(out)
            cols.append(rr * L + cc)
            vals.append(w)
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(phis.size * freqs.size, L * L))


def ray_dtft(k: int, phis, freqs) -> np.ndarray:
    """``(len(phis) * len(freqs), k * k)`` DTFT rows along ``(-sin phi, cos phi)``.

    Coordinates are pixel offsets from the kernel centre.
    """
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    freqs = np.asarray(freqs, dtype=float)
    if freqs.min() < 0 or freqs.max() > 0.5 + 1e-12:
        raise FrequencyRangeError("SFR frequencies must lie in [0, 0.5] cycles/pixel")
    q = np.arange(k) - k // 2
    fr = (freqs[None, :] * np.cos(phis)[:, None]).ravel()
    fc = (-freqs[None, :] * np.sin(phis)[:, None]).ravel()
    arg = fr[:, None, None] * q[None, :, None] + fc[:, None, None] * q[None, None, :]
    return np.exp(-2j * np.pi * arg).reshape(fr.size, k * k)


def sfr_from_psf(psf: PSFKernel, phi: float, freqs=None, pad: int = 4, method: str = "dtft") -> SFRCurve:
    """MTF cross-section along azimuth ``phi``.

    ``method="dtft"`` evaluates the kernel transform exactly on the ray;
    ``"bilinear"`` interpolates the ``pad``-times zero-padded MTF instead,
    which is faster for many azimuths but loses up to a few 1e-2 on compact
    kernels.
    """
    freqs = DEFAULT_FREQS if freqs is None else np.asarray(freqs, dtype=float)
    data = np.asarray(psf.data, dtype=float)
    if method == "dtft":
        vals = np.abs(ray_dtft(data.shape[0], [phi], freqs) @ data.ravel()) / abs(data.sum())
    elif method == "bilinear":
        M = mtf_from_psf(data, pad)
        vals = ray_sampler(M.shape[-1], [phi], freqs) @ M.ravel()
    else:
        raise ValueError(f"unknown SFR method {method!r}")
    vals[freqs == 0] = 1.0
    return SFRCurve(freqs, vals, psf.H, phi, psf.channel)


# --------------------------------------------------------------------------
# geometric resampling


def _rotation_sources(k: int, phi: float):
    c = (k - 1) / 2.0
    rr, qq = np.mgrid[0:k, 0:k].astype(float)
    dr, dq = rr - c, qq - c
    cs, sn = np.cos(phi), np.sin(phi)
    src = [-sn * dq + cs * dr + c, cs * dq + sn * dr + c]
    # snap round-off so quarter turns land exactly on the lattice
    return [np.where(np.abs(x - np.round(x)) < 1e-9, np.round(x), x) for x in src]


def _rotate_raw(data: np.ndarray, phi: float, order: int = 3) -> np.ndarray:
    out = ndimage.map_coordinates(data, _rotation_sources(data.shape[0], phi), order=order,
                                  mode="constant", cval=0.0)
    # spline overshoot is tiny but a PSF must stay non-negative
    return np.clip(out, 0.0, None) if order > 1 else out


def rotate_psf(psf: PSFKernel, phi: float, order: int = 3) -> PSFKernel:
    """Rotate clockwise by ``phi`` about the kernel centre, keeping the sum.

    ``order`` is the spline order; 1 is bilinear, which visibly low-passes
    kernels near the sampling limit.
    """
    data = psf.data
    out = _rotate_raw(data, phi, order)
    s = out.sum()
    if s > 0:
        out = out * (data.sum() / s)
    return PSFKernel(out, psf.H, psf.channel, psf.pixel_pitch)


def shift_psf(psf: PSFKernel, s: ShiftVector) -> PSFKernel:
    """Sub-pixel translation by a Fourier phase ramp; preserves the kernel sum.

    Sub-pixel shifts of a cropped kernel leave small ringing, so entries are
    not clipped (clipping would break exact shift composition).
    """
    k = psf.data.shape[0]
    if abs(s.dx) >= k / 4 or abs(s.dy) >= k / 4:
        raise ShiftRangeError(f"shift {s} too large for a {k}x{k} kernel")
    if s.dx == 0 and s.dy == 0:
        return PSFKernel(psf.data.copy(), psf.H, psf.channel, psf.pixel_pitch)
    ph = shift_phase(k, np.array([-s.dy, s.dx]))
    out = sfft.ifft2(sfft.fft2(psf.data) * ph).real
    return PSFKernel(out, psf.H, psf.channel, psf.pixel_pitch)


# --------------------------------------------------------------------------
# ESF / chromatic area


def _normal_split(k: int, phi: float):
    """Linear binning of each pixel's projection on the edge normal.

    Returns ``(lo, frac, R)``: pixel mass goes ``1 - frac`` to integer node
    ``lo`` and ``frac`` to ``lo + 1``; nodes span ``[-R, R]``.  Mass and first
    moment are preserved exactly and nothing is clipped at the corners.
    """
    d = np.arange(k) - k // 2
    t = d[None, :] * np.sin(phi) - d[:, None] * np.cos(phi)
    t = np.where(np.abs(t - np.round(t)) < 1e-9, np.round(t), t)
    lo = np.floor(t)
    R = int(np.ceil(np.abs(t).max()))
    return lo.astype(int), t - lo, R


def esf_from_psf(psf: PSFKernel, phi: float) -> ESFCurve:
    """Edge spread along azimuth ``phi`` at integer offsets from the kernel centre.

    The kernel is projected on the edge normal (its line spread), then
    accumulated.  Each node's mass is spread uniformly over a unit width, so
    the ESF at a node counts half of that node's mass.
    """
    data = np.asarray(psf.data, dtype=float)
    lo, frac, R = _normal_split(data.shape[0], phi)
    n = 2 * R + 2
    lsf = np.bincount((lo + R).ravel(), (data * (1 - frac)).ravel(), n)
    lsf += np.bincount((lo + R + 1).ravel(), (data * frac).ravel(), n)
    lsf = lsf[:-1]
    esf = np.cumsum(lsf) - 0.5 * lsf
    return ESFCurve(np.arange(-R, R + 1, dtype=float), esf)


def _node_area(pos: np.ndarray, half_window: float) -> np.ndarray:
    """Trapezoid CA contributed by unit mass sitting on each node of ``pos``."""
    keep = np.abs(pos) <= half_window + 1e-9
    area = np.empty(pos.size)
    for i in range(pos.size):
        esf = (pos > pos[i]) + 0.5 * (pos == pos[i])
        area[i] = np.trapezoid(esf[keep], pos[keep])
    return area


def ca_area(psf: PSFKernel, phi: float, half_window: float | None = None) -> float:
    """Trapezoidal integral of the ESF over ``[-w, w]`` (default ``w = k//2``)."""
    esf = esf_from_psf(psf, phi)
    w = psf.data.shape[0] // 2 if half_window is None else half_window
    pos, val = esf.positions, esf.values
    R = int(pos[-1])
    M = int(np.floor(w + 1e-9))
    if M > R:  # beyond the support the ESF is flat at 0 and at the total mass
        ext = np.arange(R + 1, M + 1, dtype=float)
        pos = np.concatenate([-ext[::-1], pos, ext])
        val = np.concatenate([np.zeros(ext.size), val, np.full(ext.size, psf.data.sum())])
    keep = np.abs(pos) <= w + 1e-9
    return float(np.trapezoid(val[keep], pos[keep]))


class CAOperator:
    """``ca_area`` as precomputed weight maps, for many kernels at few azimuths.

    ``ca_area`` is linear in the kernel, so ``CA(K) = <w(phi), K>`` exactly.
    """

    def __init__(self, k: int = DEFAULT_KERNEL, half_window: float | None = None):
        self.k = k
        self.half_window = k // 2 if half_window is None else half_window
        self._cache: dict = {}

    def weights(self, phi: float) -> np.ndarray:
        key = round(float(phi), 12)
        if key not in self._cache:
            lo, frac, R = _normal_split(self.k, phi)
            M = max(R + 1, int(np.floor(self.half_window + 1e-9)))
            area = _node_area(np.arange(-M, M + 1, dtype=float), self.half_window)
            area = area[M - R - 1:M + R + 2]
            i = lo + R + 1
            self._cache[key] = (1 - frac) * area[i] + frac * area[i + 1]
        return self._cache[key]

    def __call__(self, K: np.ndarray, phi: float) -> np.ndarray:
        return (K * self.weights(phi)).sum(axis=(-2, -1))


def delta_ca(psfs: dict, phi: float, half_window: float | None = None, H: float = 0.0) -> CAMeasure:
    """CA differences of R and B against G at one azimuth."""
    missing = [c for c in CHANNELS if c not in psfs]
    if missing:
        raise IncompleteInput(f"missing channels {missing}")
    ca = {c: ca_area(psfs[c], phi, half_window) for c in CHANNELS}
    return CAMeasure(H, phi, ca["R"] - ca["G"], ca["B"] - ca["G"])


# --------------------------------------------------------------------------
# dense field grid


@dataclass
class PSFStack:
    """Kernels ``data[iH, iphi, channel]`` of the +Y-axis PSF rotated to ``phi``.

    ``shifts[band, (R, B), (dx, dy)]`` are the inter-channel shifts already
    baked into the kernels, recorded for reference.
    """

    H_samples: np.ndarray
    phi_samples: np.ndarray
    data: np.ndarray
    band_edges: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    shifts: np.ndarray = field(default_factory=lambda: np.zeros((1, 2, 2)))
    meta: dict = field(default_factory=dict)

    @property
    def kernel_size(self) -> int:
        return self.data.shape[-1]

    def nearest(self, H: float, phi: float) -> tuple[int, int]:
        iH = int(np.argmin(np.abs(self.H_samples - H)))
        d = np.angle(np.exp(1j * (self.phi_samples - phi)))
        return iH, int(np.argmin(np.abs(d)))

    @property
    def H_max(self) -> float:
        return float(self.H_samples.max())

    def kernels_at(self, H: float, phi: float) -> np.ndarray:
        """``(3, k, k)`` kernels of the nearest cell."""
        iH, ip = self.nearest(H, phi)
        return self.data[iH, ip]

    def kernel(self, iH: int, iphi: int, channel: str) -> PSFKernel:
        return PSFKernel(self.data[iH, iphi, CHANNELS.index(channel)],
                         float(self.H_samples[iH]), channel)

    @classmethod
    def impulse(cls, k: int = DEFAULT_KERNEL, H_samples=(0.0, 1.0), phi_samples=(0.0,)) -> "PSFStack":
        H_samples = np.asarray(H_samples, dtype=float)
        phi_samples = np.asarray(phi_samples, dtype=float)
        data = np.zeros((H_samples.size, phi_samples.size, 3, k, k))
        data[..., k // 2, k // 2] = 1.0
        return cls(H_samples, phi_samples, data)


def interp_shift(shifts: np.ndarray, band_edges: np.ndarray, H: float) -> np.ndarray:
    """``(2, 2)`` shift table for R and B at field height H (linear between band centres)."""
    centers = 0.5 * (band_edges[1:] + band_edges[:-1])
    flat = shifts.reshape(shifts.shape[0], -1)
    return np.array([np.interp(H, centers, flat[:, j]) for j in range(flat.shape[1])]).reshape(2, 2)


def rotate_shift(dx: float, dy: float, psi: float) -> tuple[float, float]:
    """Turn an image-plane vector (dx right, dy up) clockwise by ``psi``."""
    cs, sn = np.cos(psi), np.sin(psi)
    return cs * dx + sn * dy, -sn * dx + cs * dy


def render_kernels(model: WavefrontModel, shifts: np.ndarray | None, H: float, psi: float,
                   grid: PupilGrid, k: int = DEFAULT_KERNEL, pad: int = 2) -> np.ndarray:
    """``(3, k, k)`` kernels at field height H and azimuth ``psi``.

    The azimuth is applied by turning the pupil, which rotates the PSF
    without the low-pass loss of resampling the kernel.
    """
    if not 0.0 <= H <= 1.0:
        raise ValueError(f"field height {H} outside [0, 1]")
    sh = np.zeros((2, 2)) if shifts is None else interp_shift(shifts, model.band_edges, H)
    fields = np.stack([
        pupil_field(grid, eval_opd(grid, model.basis, model.coeffs_at(H, ci), H, rotation=psi), pad)
        for ci in range(3)])
    K = np.clip(psf_from_field(fields, k), 0.0, None)
    K /= K.sum(axis=(-2, -1), keepdims=True)
    for ci, row in ((0, 0), (2, 1)):
        dx, dy = rotate_shift(*sh[row], psi)
        if dx or dy:
            K[ci] = shift_psf(PSFKernel(K[ci]), ShiftVector(dx, dy)).data
    return K


class LensField:
    """On-demand kernels of a wavefront model at exact (H, psi), cached."""

    def __init__(self, model: WavefrontModel, shifts: np.ndarray | None = None, pupil_n: int = 128,
                 k: int = DEFAULT_KERNEL, pad: int = 2):
        self.model = model
        self.shifts = shifts
        self.grid = make_pupil_grid(pupil_n)
        self.k = k
        self.pad = pad
        self._cache: dict = {}

    @property
    def kernel_size(self) -> int:
        return self.k

    @property
    def H_max(self) -> float:
        return 1.0

    def kernels_at(self, H: float, psi: float) -> np.ndarray:
        key = (round(float(H), 9), round(float(psi), 9))
        if key not in self._cache:
            self._cache[key] = render_kernels(self.model, self.shifts, min(float(H), 1.0), psi,
                                              self.grid, self.k, self.pad)
        return self._cache[key]


def render_psf_stack(model: WavefrontModel, shifts: np.ndarray | None, H_samples, phi_samples,
                     pupil_n: int = 64, k: int = DEFAULT_KERNEL, pad: int = 2) -> PSFStack:
    """Dense (H, phi) grid of per-channel kernels with R/B shifts applied."""
    H_samples = np.asarray(H_samples, dtype=float)
    phi_samples = np.asarray(phi_samples, dtype=float)
    if H_samples.min() < 0 or H_samples.max() > 1:
        raise ValueError("field heights must lie in [0, 1]")
    if shifts is None:
        shifts = np.zeros((model.n_bands, 2, 2))
    shifts = np.asarray(shifts, dtype=float)
    grid = make_pupil_grid(pupil_n)
    data = np.empty((H_samples.size, phi_samples.size, 3, k, k))
    for i, H in enumerate(H_samples):
        for j, phi in enumerate(phi_samples):
            data[i, j] = render_kernels(model, shifts, H, phi, grid, k, pad)
    return PSFStack(H_samples, phi_samples, data, np.asarray(model.band_edges), shifts,
                    {"pupil_n": pupil_n, "pad": pad})

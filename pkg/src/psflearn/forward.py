"""Batched, differentiable coefficients -> SFR map used by the estimator.

Kernels follow ``psf_from_wavefront``: the centroid re-centring is applied
as a linear phase on the pupil, which for the band-limited intensity equals
the Fourier shift of the PSF.  SFR rays are evaluated by direct DTFT of the
kernel rather than by bilinear interpolation of a padded spectrum, so the
model sees the same continuous response the slanted-edge measurement does.
``backward`` is the exact adjoint, including the centroid's dependence on
the wavefront (the crop makes the response depend on where the kernel sits).
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from .optics import DEFAULT_FREQS, DEFAULT_KERNEL, centroid_wrapped, crop_index, ray_dtft, wrapped_coords
from .pupil import BasisKind, BasisSpec, basis_matrix, make_pupil_grid


class SFRModel:
    def __init__(self, basis: BasisSpec, phis=(0.0,), freqs=None, pupil_n: int = 64, pad: int = 2,
                 k: int = DEFAULT_KERNEL):
        self.basis = basis
        self.phis = np.asarray(phis, dtype=float)
        self.freqs = DEFAULT_FREQS if freqs is None else np.asarray(freqs, dtype=float)
        self.grid = make_pupil_grid(pupil_n)
        self.N = pad * pupil_n
        self.k = k
        n = pupil_n
        rows, cols = np.nonzero(self.grid.mask)
        # pupil sample offsets; the optical axis lands on index 0
        self._p = np.stack([rows - n // 2, cols - n // 2], axis=1).astype(float)
        self._r = (rows - n // 2) % self.N
        self._c = (cols - n // 2) % self.N
        self._crop = crop_index(self.N, k)
        self._rays: dict = {}
        self._zero_f = self.freqs == 0
        self._B = {} if basis.kind is BasisKind.SEIDEL else {None: basis_matrix(self.grid, basis)}

    def _basis(self, H: float) -> np.ndarray:
        key = None if self.basis.kind is BasisKind.PROPOSED else round(float(H), 12)
        if key not in self._B:
            self._B[key] = basis_matrix(self.grid, self.basis, H)
        return self._B[key]

    def _ray(self, phis) -> np.ndarray:
        key = tuple(np.round(np.asarray(phis, dtype=float), 12))
        if key not in self._rays:
            self._rays[key] = ray_dtft(self.k, np.asarray(key), self.freqs)
        return self._rays[key]

    def opd(self, C: np.ndarray, Hs) -> np.ndarray:
        return np.stack([self._basis(H) @ c for c, H in zip(C, Hs)])

    def _spectra(self, C, Hs, keep: bool = False):
        """Re-centred pupil samples and their transform.

        With ``keep`` also returns the un-centred samples, spectrum and
        centroid that ``backward`` needs.
        """
        g0 = np.exp(2j * np.pi * self.opd(C, Hs))
        field = np.zeros((len(C), self.N, self.N), dtype=complex)
        field[:, self._r, self._c] = g0
        G0 = sfft.fft2(field)
        cen = centroid_wrapped(np.abs(G0) ** 2)
        g = g0 * np.exp(-2j * np.pi * (cen @ self._p.T) / self.N)
        field[:, self._r, self._c] = g
        G = sfft.fft2(field)
        if keep:
            return g, G, (g0, G0, cen)
        return g, G

    def _crop_norm(self, G):
        I = np.abs(G) ** 2
        Kr = I[:, self._crop[:, None], self._crop[None, :]]
        mask = Kr > 0
        K = np.where(mask, Kr, 0.0)
        Ksum = K.sum(axis=(-2, -1), keepdims=True)
        return K / Ksum, mask, Ksum

    def kernels(self, C, Hs) -> np.ndarray:
        """Unit-sum k x k kernels for each coefficient row; matches psf_from_wavefront."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        _, G = self._spectra(C, Hs)
        return self._crop_norm(G)[0]

    def forward(self, C, Hs, phis=None):
        """SFR values ``(B, len(phis), len(freqs))`` and a cache for ``backward``."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        phis = self.phis if phis is None else np.asarray(phis, dtype=float)
        E = self._ray(phis)
        g, G, pre = self._spectra(C, Hs, keep=True)
        P, mask, Ksum = self._crop_norm(G)
        M = P.reshape(len(C), -1) @ E.T
        A = np.abs(M)
        sfr = A.reshape(len(C), phis.size, self.freqs.size)
        sfr[..., self._zero_f] = 1.0
        cache = (Hs, g, G, mask, Ksum, P, M, A, E, phis.size, pre)
        return sfr, cache

    def backward(self, cache, dsfr: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. the coefficients given dloss/dsfr."""
        Hs, g, G, mask, Ksum, P, M, A, E, nphi, (g0, G0, cen) = cache
        B = len(g)
        dA = np.array(dsfr, dtype=float).reshape(B, -1)
        dA[:, np.tile(self._zero_f, nphi)] = 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(A > 0, dA * np.conj(M) / A, 0.0)
        dP = (w @ E).real.reshape(B, self.k, self.k)
        dK = (dP - (dP * P).sum(axis=(-2, -1), keepdims=True)) / Ksum
        dK = np.where(mask, dK, 0.0)
        dI = np.zeros((B, self.N, self.N))
        dI[:, self._crop[:, None], self._crop[None, :]] = dK
        dfield = (self.N * self.N) * sfft.ifft2(2.0 * dI * G)
        dg = dfield[:, self._r, self._c]
        dW = 2 * np.pi * np.imag(dg * np.conj(g))
        # the re-centring phase is -cen.p/N, so dL/dcen = -P^T dW / N ...
        dcen = -(dW @ self._p) / self.N
        # ... and cen is the intensity centroid of the un-centred spectrum
        I0 = np.abs(G0) ** 2
        S = I0.sum(axis=(-2, -1))
        x = wrapped_coords(self.N)
        dI0 = (dcen[:, 0, None, None] * (x[None, :, None] - cen[:, 0, None, None])
               + dcen[:, 1, None, None] * (x[None, None, :] - cen[:, 1, None, None])) / S[:, None, None]
        dg0 = ((self.N * self.N) * sfft.ifft2(2.0 * dI0 * G0))[:, self._r, self._c]
        dW = dW + 2 * np.pi * np.imag(dg0 * np.conj(g0))
        return np.stack([self._basis(H).T @ w for w, H in zip(dW, Hs)])

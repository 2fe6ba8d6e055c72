"""Synthetic ground-truth lenses for round-trip experiments."""

from __future__ import annotations

import numpy as np

from .pupil import PROPOSED_TERMS, BasisSpec, WavefrontModel, uniform_band_edges

_T = {t: i for i, t in enumerate(PROPOSED_TERMS)}


def _signed(rng, lo, hi):
    return rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi)


def random_lens(seed: int, n_bands: int = 80, strength: float = 1.0):
    """Draw a smooth, rotationally consistent set-Q lens and its lateral colour.

    Even terms are rotationally symmetric at H = 0 and pick up astigmatism as
    H^2; odd (coma-like) terms grow from zero with H.  Every coefficient stays
    inside [-0.5, 0.5] waves.  Returns ``(model, shifts)`` with shifts in
    pixels, shape ``(n_bands, 2, 2)`` for (R, B) x (dx, dy).
    """
    rng = np.random.default_rng(seed)
    edges = uniform_band_edges(1.0 / n_bands)
    H = 0.5 * (edges[1:] + edges[:-1])

    defocus = _signed(rng, 0.05, 0.2)
    astig_t, astig_s = rng.uniform(-0.3, 0.3, size=2)
    if abs(astig_t - astig_s) < 0.15:
        astig_s = astig_t - np.sign(astig_t - astig_s + 1e-12) * 0.15
        astig_s = float(np.clip(astig_s, -0.3, 0.3))
        if abs(astig_t - astig_s) < 0.15:
            astig_t = astig_s + 0.15 * np.sign(astig_t - astig_s + 1e-12)
    sph4 = rng.uniform(-0.15, 0.15)
    sph4_h = rng.uniform(-0.1, 0.1)
    sph6 = rng.uniform(-0.05, 0.05)
    coma3 = _signed(rng, 0.1, 0.3)
    coma5 = rng.uniform(-0.1, 0.1)
    trefoil = rng.uniform(-0.1, 0.1)

    def channel(defocus_offset, coma_scale):
        c = np.zeros((H.size, len(PROPOSED_TERMS)))
        d = defocus + defocus_offset
        c[:, _T[(2, 2, 0)]] = d + astig_t * H ** 2
        c[:, _T[(2, 0, 2)]] = d + astig_s * H ** 2
        c[:, _T[(4, 2, 0)]] = sph4 + sph4_h * H ** 2
        c[:, _T[(4, 0, 2)]] = sph4
        c[:, _T[(6, 2, 0)]] = sph6
        c[:, _T[(6, 0, 2)]] = sph6
        c[:, _T[(3, 1, 0)]] = coma_scale * coma3 * H
        c[:, _T[(5, 1, 0)]] = coma_scale * coma5 * H
        c[:, _T[(3, 3, 0)]] = coma_scale * trefoil * H ** 3
        return c

    long_ca = rng.uniform(0.02, 0.08, size=2) * rng.choice([-1.0, 1.0])
    coeffs = np.stack([
        channel(long_ca[0], 1.0 + rng.uniform(-0.1, 0.1)),
        channel(0.0, 1.0),
        channel(-long_ca[1], 1.0 + rng.uniform(-0.1, 0.1)),
    ], axis=1) * strength
    coeffs = np.clip(coeffs, -0.5, 0.5)

    lat_r = _signed(rng, 0.3, 1.0)
    lat_b = -np.sign(lat_r) * rng.uniform(0.3, 1.0)
    shifts = np.zeros((H.size, 2, 2))
    shifts[:, 0, 1] = lat_r * H
    shifts[:, 1, 1] = lat_b * H

    model = WavefrontModel(BasisSpec.proposed(), edges, coeffs, {"seed": int(seed), "kind": "random_lens"})
    return model, shifts


def texture_image(seed: int, size: int = 512) -> np.ndarray:
    """Natural-looking linear RGB test image in [0.05, 0.95].

    Multi-scale smooth noise for texture plus random hard-edged discs and
    rectangles for the sharp transitions deblurring should restore.
    """
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, 3))
    for sigma, amp in ((16.0, 0.5), (4.0, 0.25), (1.0, 0.12)):
        layer = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), (sigma, sigma, 0))
        img += amp * layer / (layer.std() + 1e-12)
    yy, xx = np.mgrid[:size, :size]
    for _ in range(24):
        colour = rng.uniform(-1.0, 1.0, size=3)
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(0.02, 0.12) * size
        if rng.random() < 0.5:
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            m = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < rng.uniform(0.3, 1.0) * r)
        img[m] = 0.5 * img[m] + colour
    lo, hi = np.percentile(img, [1, 99])
    return np.clip(0.05 + 0.9 * (img - lo) / (hi - lo), 0.05, 0.95)

"""Wiener restoration: single patches and tiled images."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gaussian_kernel
from psflearn.deblur import DeblurConfig, InvalidConfig, deblur_image, wiener_tile
from psflearn.measure import CoverageError, degrade
from psflearn.metrics import psnr
from psflearn.optics import PSFKernel, PSFStack, ShiftVector, shift_psf
from psflearn.synthetic import texture_image

K = 15


def uniform_stack(kernels, H_max=1.0):
    """Two-row stack that uses the same three kernels everywhere."""
    kernels = np.asarray(kernels, dtype=float)
    data = np.broadcast_to(kernels, (2, 1, 3, K, K)).copy()
    return PSFStack(np.array([0.0, H_max]), np.array([0.0]), data)


@pytest.fixture(scope="module")
def sharp():
    return texture_image(0, 256)


@pytest.fixture(scope="module")
def gauss_stack():
    return uniform_stack([gaussian_kernel(K, 1.0)] * 3)


def _hf_energy(img, cutoff=0.25):
    F = np.abs(np.fft.fft2(img - img.mean())) ** 2
    f = np.fft.fftfreq(img.shape[0])
    r = np.hypot(f[:, None], f[None, :])
    return float(F[r > cutoff].sum())


# --------------------------------------------------------------------------
# config


@pytest.mark.parametrize("nsr", [0.0, -1e-3, float("nan")])
def test_nonpositive_nsr_rejected(nsr):
    with pytest.raises(InvalidConfig):
        DeblurConfig(nsr=nsr)
    with pytest.raises(InvalidConfig):
        wiener_tile(np.zeros((32, 32)), gaussian_kernel(5, 1.0), nsr)


@pytest.mark.parametrize("kw", [{"tile": 4}, {"overlap": -1}, {"tile": 32, "overlap": 16}])
def test_bad_tiling_rejected(kw):
    with pytest.raises(InvalidConfig):
        DeblurConfig(**kw)


def test_kernel_larger_than_patch_rejected():
    with pytest.raises(InvalidConfig):
        wiener_tile(np.zeros((8, 8)), gaussian_kernel(15, 1.0), 1e-3)


# --------------------------------------------------------------------------
# single patch


def test_impulse_is_near_identity(sharp):
    delta = np.zeros((K, K))
    delta[K // 2, K // 2] = 1.0
    patch = sharp[:64, :64, 1]
    out = wiener_tile(patch, PSFKernel(delta), 1e-3)
    # the filter is exactly 1 / (1 + nsr) for a delta
    assert np.allclose(out, patch / (1 + 1e-3), rtol=1e-9, atol=1e-12)
    assert np.abs(out - patch).max() <= 0.01 * np.abs(patch).max()


def test_zero_patch_stays_zero():
    out = wiener_tile(np.zeros((48, 48)), gaussian_kernel(K, 1.5), 1e-3)
    assert np.all(out == 0.0)


@settings(max_examples=15)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 16))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((2, 40, 40))
    k = gaussian_kernel(9, 1.2)
    lhs = wiener_tile(a * x + b * y, k, 1e-3)
    rhs = a * wiener_tile(x, k, 1e-3) + b * wiener_tile(y, k, 1e-3)
    assert np.allclose(lhs, rhs, atol=1e-6)


def test_higher_nsr_leaves_less_high_frequency(sharp, gauss_stack):
    blurred = degrade(sharp, gauss_stack, 0.01, seed=3)[..., 1]
    k = gaussian_kernel(K, 1.0)
    energy = [_hf_energy(wiener_tile(blurred, k, nsr)) for nsr in (1e-4, 1e-3, 1e-2, 1e-1)]
    assert all(a > b for a, b in zip(energy, energy[1:]))


# --------------------------------------------------------------------------
# tiled images


@pytest.mark.parametrize("nsr,floor", [(1e-4, 35.0), (1e-8, 40.0)])
def test_degrade_then_deblur(sharp, gauss_stack, nsr, floor):
    blurred = degrade(sharp, gauss_stack, 0.0)
    out = deblur_image(blurred, gauss_stack, DeblurConfig(nsr=nsr))
    assert psnr(out, sharp, 1.0) >= floor
    assert psnr(out, sharp, 1.0) > psnr(blurred, sharp, 1.0) + 5


def test_impulse_stack_keeps_image(sharp):
    delta = np.zeros((K, K))
    delta[K // 2, K // 2] = 1.0
    out = deblur_image(sharp, uniform_stack([delta] * 3), DeblurConfig(nsr=1e-3))
    assert np.abs(out - sharp).max() <= 0.01


def test_lateral_colour_is_undone(sharp):
    g = PSFKernel(gaussian_kernel(K, 1.0))
    r = shift_psf(g, ShiftVector(1.0, 0.0)).data
    # whole-pixel shifts; a half-pixel one has a spectral null at Nyquist
    b = shift_psf(g, ShiftVector(-1.0, 1.0)).data
    stack = uniform_stack([r, g.data, b])
    blurred = degrade(sharp, stack, 0.0)
    out = deblur_image(blurred, stack, DeblurConfig(nsr=1e-6))
    # reflected borders are not shift-equivariant, so score the interior
    m = slice(K, -K)
    for ci in (0, 2):
        assert psnr(out[m, m, ci], sharp[m, m, ci], 1.0) >= 40


@settings(max_examples=5)
@given(st.floats(0.01, 20.0))
def test_image_scaling_commutes(sharp, gauss_stack, a):
    img = sharp[:128, :128]
    ref = deblur_image(img, gauss_stack)
    assert np.allclose(deblur_image(a * img, gauss_stack), a * ref, rtol=1e-6, atol=1e-12 * a)


def test_deblur_needs_rgb(gauss_stack):
    with pytest.raises(ValueError):
        deblur_image(np.zeros((64, 64)), gauss_stack)


def test_short_stack_raises_coverage(sharp):
    with pytest.raises(CoverageError):
        deblur_image(sharp, uniform_stack([gaussian_kernel(K, 1.0)] * 3, H_max=0.5))

"""Batched SFR map: agreement with the reference PSF path and gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psflearn.estimate import finite_diff_gradient
from psflearn.forward import SFRModel
from psflearn.optics import PSFKernel, psf_from_wavefront, sfr_from_psf
from psflearn.pupil import BasisSpec, eval_opd, make_pupil_grid

PHIS = np.deg2rad([0.0, 45.0, 90.0, 135.0])
FREQS = np.linspace(0.0, 0.5, 17)


@pytest.fixture(scope="module", params=["proposed", "seidel"])
def fm(request):
    basis = BasisSpec.proposed() if request.param == "proposed" else BasisSpec.seidel()
    return SFRModel(basis, PHIS, FREQS, pupil_n=64)


def _coeffs(fm, seed, scale=0.3):
    return np.random.default_rng(seed).uniform(-scale, scale, (2, len(fm.basis)))


@pytest.mark.parametrize("seed", range(3))
def test_kernels_match_reference(fm, seed):
    C = _coeffs(fm, seed)
    Hs = [0.3, 0.8]
    K = fm.kernels(C, Hs)
    grid = make_pupil_grid(64)
    for i, H in enumerate(Hs):
        ref = psf_from_wavefront(grid, eval_opd(grid, fm.basis, C[i], H)).data
        assert np.allclose(K[i], ref, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_sfr_matches_sfr_from_psf(fm, seed):
    C = _coeffs(fm, seed)
    sfr, _ = fm.forward(C, [0.5, 0.5])
    K = fm.kernels(C, [0.5, 0.5])
    for i in range(2):
        for j, phi in enumerate(PHIS):
            ref = sfr_from_psf(PSFKernel(K[i]), phi, FREQS).values
            assert np.allclose(sfr[i, j], ref, atol=1e-10)


def test_dc_is_one(fm):
    sfr, _ = fm.forward(_coeffs(fm, 0), [0.2, 0.9])
    assert np.all(sfr[..., 0] == 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_finite_difference(fm, seed):
    """Analytic adjoint vs central differences of a smooth weighted SFR sum."""
    rng = np.random.default_rng(100 + seed)
    C = _coeffs(fm, seed)
    Hs = [0.4, 0.7]
    w = rng.normal(size=(2, PHIS.size, FREQS.size))

    def loss(flat):
        s, _ = fm.forward(flat.reshape(C.shape), Hs)
        return float((w * s).sum())

    _, cache = fm.forward(C, Hs)
    g = fm.backward(cache, w)
    ref = finite_diff_gradient(loss, C.ravel(), 1e-5).reshape(C.shape)
    assert np.allclose(g, ref, rtol=1e-4, atol=1e-6 * np.abs(ref).max())


@settings(max_examples=10)
@given(st.floats(-0.4, 0.4), st.floats(0.0, 1.0))
def test_gradient_zero_for_dc_only_loss(a, H):
    """A loss on the DC bin alone has zero gradient (DC is pinned to one)."""
    basis = BasisSpec.proposed()
    fm = SFRModel(basis, (0.0,), FREQS, pupil_n=64)
    C = np.full((1, len(basis)), a)
    _, cache = fm.forward(C, [H])
    d = np.zeros((1, 1, FREQS.size))
    d[..., 0] = 1.0
    assert np.allclose(fm.backward(cache, d), 0.0)


def test_zero_coefficients_give_diffraction_limit():
    basis = BasisSpec.proposed()
    fm = SFRModel(basis, (0.0, np.pi / 2), FREQS, pupil_n=64)
    sfr, _ = fm.forward(np.zeros((1, len(basis))), [0.0])
    # a clear circular pupil is isotropic and its MTF falls monotonically
    assert np.allclose(sfr[0, 0], sfr[0, 1], atol=1e-9)
    assert np.all(np.diff(sfr[0, 0]) <= 1e-12)

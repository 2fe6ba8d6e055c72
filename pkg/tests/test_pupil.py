import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psflearn.pupil import (PROPOSED_TERMS, SEIDEL_TERMS, BasisKind, BasisSpec, DimensionError, basis_matrix,
                            InvalidResolution, UnsupportedTerm, WavefrontModel, eval_opd,
                            make_pupil_grid, seidel_to_proposed, uniform_band_edges)

GRID = make_pupil_grid(64)
coef = st.floats(-1.0, 1.0, allow_nan=False)


def test_grid_disk_count():
    # lattice points of the disk by direct enumeration
    n = 64
    idx = np.arange(n) - n // 2
    count = sum(1 for r in idx for c in idx if (2 * r / n) ** 2 + (2 * c / n) ** 2 < 1.0)
    assert GRID.aperture.sum() == count
    assert abs(count - np.pi * 32 ** 2) / (np.pi * 32 ** 2) < 0.01


def test_grid_centre_and_corner():
    c = GRID.n // 2
    assert GRID.rho[c, c] == 0.0 and GRID.aperture[c, c] == 1.0
    assert GRID.aperture[0, 0] == 0.0 and GRID.aperture[-1, -1] == 0.0


def test_grid_polar_consistency():
    n = GRID.n
    step = 2.0 / n
    rows, cols = np.mgrid[0:n, 0:n]
    v = -(rows - n // 2) * step
    u = (cols - n // 2) * step
    assert np.allclose(GRID.rho * np.sin(GRID.theta), v, atol=step)
    assert np.allclose(GRID.rho * np.cos(GRID.theta), u, atol=step)
    assert np.all(GRID.aperture[GRID.rho > 1] == 0)
    assert set(np.unique(GRID.aperture)) <= {0.0, 1.0}


@pytest.mark.parametrize("n", [30, 33, 16, 65, 2])
def test_grid_rejects_bad_resolution(n):
    with pytest.raises(InvalidResolution):
        make_pupil_grid(n)


def test_proposed_terms_are_the_nine():
    assert set(BasisSpec.proposed().terms) == {(2, 2, 0), (2, 0, 2), (3, 1, 0), (3, 3, 0), (4, 2, 0),
                                               (4, 0, 2), (5, 1, 0), (6, 2, 0), (6, 0, 2)}
    assert len(PROPOSED_TERMS) == 9


def test_seidel_triples_valid():
    for k, l, m in SEIDEL_TERMS:
        assert (k - m) % 2 == 0 and (l - m) % 2 == 0 and k >= m and l >= m
    with pytest.raises(UnsupportedTerm):
        BasisSpec(BasisKind.SEIDEL, ((1, 2, 0),))
    with pytest.raises(UnsupportedTerm):
        BasisSpec(BasisKind.PROPOSED, ((2, 1, 1),))


def test_zero_coefficients_zero_opd():
    assert np.all(eval_opd(GRID, BasisSpec.proposed(), np.zeros(9)) == 0)


def test_astig_pair_sums_to_defocus():
    w = np.zeros(9)
    w[PROPOSED_TERMS.index((2, 2, 0))] = 1.0
    w[PROPOSED_TERMS.index((2, 0, 2))] = 1.0
    opd = eval_opd(GRID, BasisSpec.proposed(), w)
    assert np.allclose(opd[GRID.mask], GRID.rho[GRID.mask] ** 2, atol=1e-12)


def test_seidel_spherical_at_rim():
    w = np.zeros(len(SEIDEL_TERMS))
    w[SEIDEL_TERMS.index((0, 4, 0))] = 0.5
    opd = eval_opd(GRID, BasisSpec.seidel(), w)
    assert np.allclose(opd[GRID.mask], 0.5 * GRID.rho[GRID.mask] ** 4)
    # the lattice has rim samples at rho = 1 exactly, just outside the open aperture
    rim = basis_matrix(GRID, BasisSpec.seidel(), where=GRID.rho == 1.0) @ w
    assert rim.size > 0 and np.allclose(rim, 0.5)


def test_eval_opd_dimension_and_range_errors():
    with pytest.raises(DimensionError):
        eval_opd(GRID, BasisSpec.proposed(), np.zeros(8))
    with pytest.raises(ValueError):
        eval_opd(GRID, BasisSpec.proposed(), np.zeros(9), H=1.5)


def test_seidel_to_proposed_rows():
    s = BasisSpec.seidel()
    w = np.zeros(len(s))
    w[s.terms.index((0, 2, 0))] = 1.0
    q = seidel_to_proposed(w, s, H=1.0)
    assert q[PROPOSED_TERMS.index((2, 2, 0))] == 1.0 and q[PROPOSED_TERMS.index((2, 0, 2))] == 1.0
    assert np.count_nonzero(q) == 2

    w = np.zeros(len(s))
    w[s.terms.index((1, 3, 1))] = 0.3
    q = seidel_to_proposed(w, s, H=1.0)
    assert q[PROPOSED_TERMS.index((3, 1, 0))] == pytest.approx(0.3)
    assert np.count_nonzero(q) == 1

    assert np.all(seidel_to_proposed(np.zeros(len(s))) == 0)


def test_seidel_to_proposed_rejects_outside_rows():
    s = BasisSpec(BasisKind.SEIDEL, ((2, 2, 2),))
    with pytest.raises(UnsupportedTerm):
        seidel_to_proposed(np.ones(1), s)


@given(st.lists(coef, min_size=len(SEIDEL_TERMS), max_size=len(SEIDEL_TERMS)), st.floats(0.0, 1.0))
def test_decomposition_equality(w, H):
    w = np.asarray(w)
    a = eval_opd(GRID, BasisSpec.seidel(), w, H)
    b = eval_opd(GRID, BasisSpec.proposed(), seidel_to_proposed(w, H=H))
    scale = max(1.0, np.abs(a).max())
    assert np.abs(a - b).max() <= 1e-12 * scale


@given(st.lists(coef, min_size=9, max_size=9), st.lists(coef, min_size=9, max_size=9), coef, coef)
def test_opd_linear(w1, w2, a, b):
    w1, w2 = np.asarray(w1), np.asarray(w2)
    basis = BasisSpec.proposed()
    lhs = eval_opd(GRID, basis, a * w1 + b * w2)
    rhs = a * eval_opd(GRID, basis, w1) + b * eval_opd(GRID, basis, w2)
    assert np.allclose(lhs, rhs, atol=1e-12)
    assert np.all(lhs[~GRID.mask] == 0)


@pytest.mark.parametrize("term", PROPOSED_TERMS)
def test_term_mirror_parity(term):
    """Vertical mirror flips sign as (-1)^q; cos enters only squared, so a
    horizontal mirror never does."""
    _, q, _ = term
    w = np.zeros(9)
    w[PROPOSED_TERMS.index(term)] = 1.0
    opd = eval_opd(GRID, BasisSpec.proposed(), w)
    # mirror pairs about the centre sample: v -> -v is row c+i <-> c-i
    inner = opd[1:, 1:]
    flipped_v = inner[::-1, :]
    flipped_u = inner[:, ::-1]
    assert np.allclose(flipped_v, (-1) ** q * inner, atol=1e-12)
    assert np.allclose(flipped_u, inner, atol=1e-12)


def test_model_coeffs_interpolate_and_extrapolate():
    edges = uniform_band_edges(0.25)
    table = np.zeros((4, 3, 9))
    table[:, 1, 0] = [0.0, 1.0, 2.0, 3.0]
    m = WavefrontModel(BasisSpec.proposed(), edges, table)
    assert m.coeffs_at(0.125, 1)[0] == pytest.approx(0.0)
    assert m.coeffs_at(0.25, 1)[0] == pytest.approx(0.5)
    assert m.coeffs_at(1.0, 1)[0] == pytest.approx(3.5)
    assert m.band_of(0.3) == 1


def test_model_validates_edges_and_shape():
    with pytest.raises(ValueError):
        WavefrontModel(BasisSpec.proposed(), np.array([0.0, 0.5]), np.zeros((1, 3, 9)))
    with pytest.raises(ValueError):
        WavefrontModel(BasisSpec.proposed(), np.array([0.0, 1.0]), np.zeros((1, 3, 8)))


def test_model_dict_roundtrip():
    rng = np.random.default_rng(0)
    m = WavefrontModel(BasisSpec.seidel(), uniform_band_edges(0.05), rng.normal(size=(20, 3, 10)))
    m2 = WavefrontModel.from_dict(m.to_dict())
    assert m2.basis == m.basis
    assert np.array_equal(m2.coeffs, m.coeffs)

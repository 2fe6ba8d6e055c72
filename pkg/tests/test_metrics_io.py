"""Quality metrics and on-disk formats."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import gaussian_kernel
from psflearn import io
from psflearn.estimate import synthetic_measurements
from psflearn.metrics import PSNR_CAP, kernel_scores, psnr, ssim
from psflearn.optics import PSFStack
from psflearn.synthetic import random_lens

# --------------------------------------------------------------------------
# metrics


def test_psnr_matches_formula(rng):
    ref = rng.random((16, 16))
    est = ref + rng.normal(0, 0.01, ref.shape)
    mse = np.mean((est - ref) ** 2)
    assert psnr(est, ref, 1.0) == pytest.approx(10 * np.log10(1.0 / mse), rel=1e-12)
    assert psnr(est, ref) == pytest.approx(10 * np.log10(ref.max() ** 2 / mse), rel=1e-12)


def test_identical_inputs_capped(rng):
    a = rng.random((9, 9))
    assert psnr(a, a) == PSNR_CAP == 100.0
    assert ssim(a, a) == pytest.approx(1.0)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((4, 4)))


def test_kernel_scores_ignore_scale():
    k = gaussian_kernel(15, 1.3)
    s = kernel_scores(5.0 * k, k)
    assert s["psnr"] == PSNR_CAP and s["psnr_unit"] == PSNR_CAP
    assert s["ssim"] == pytest.approx(1.0)


def test_peak_and_unit_psnr_differ_by_peak():
    k = gaussian_kernel(15, 1.3)
    e = gaussian_kernel(15, 1.4)
    s = kernel_scores(e, k)
    assert s["psnr"] - s["psnr_unit"] == pytest.approx(20 * np.log10(k.max()), abs=1e-9)


@given(st.floats(1e-4, 0.1), st.integers(0, 2 ** 16))
def test_psnr_drops_with_noise(sigma, seed):
    rng = np.random.default_rng(seed)
    ref = rng.random((32, 32))
    n = rng.normal(size=ref.shape)
    assert psnr(ref + sigma * n, ref, 1.0) > psnr(ref + 2 * sigma * n, ref, 1.0)


def test_ssim_colour_and_small_windows(rng):
    a = rng.random((5, 5, 3))
    assert ssim(a, a, 1.0) == pytest.approx(1.0)
    assert ssim(np.clip(a + 0.2, 0, 1), a, 1.0) < 1.0


# --------------------------------------------------------------------------
# images


@settings(max_examples=10)
@given(arrays(np.float32, (7, 5, 3), elements=st.floats(-10, 10, width=32)))
def test_pfm_round_trip_exact(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    io.write_pfm(p, img)
    assert np.array_equal(io.read_pfm(p), img.astype(float))


def test_pfm_grey_and_orientation(tmp_path):
    img = np.arange(12, dtype=float).reshape(3, 4)
    io.write_pfm(tmp_path / "g.pfm", img)
    assert np.array_equal(io.read_pfm(tmp_path / "g.pfm"), img)
    # PFM stores the bottom row first
    raw = (tmp_path / "g.pfm").read_bytes()
    assert np.frombuffer(raw[-16:], "<f4").tolist() == [0.0, 1.0, 2.0, 3.0]


def test_pfm_rejects_bad_shape_and_file(tmp_path):
    with pytest.raises(io.FormatError):
        io.write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 4)))
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(io.FormatError):
        io.read_pfm(tmp_path / "bad.pfm")


@pytest.mark.parametrize("gamma", [2.2, None])
def test_png16_round_trip(tmp_path, rng, gamma):
    img = rng.random((6, 8, 3))
    io.write_png16(tmp_path / "x.png", img, gamma)
    back = io.read_png16(tmp_path / "x.png")
    # 16-bit quantization; gamma encoding stretches the step near black
    tol = 1e-4 if gamma else 1 / 65535
    assert np.abs(back - img).max() <= tol


def test_unknown_image_suffix(tmp_path):
    with pytest.raises(io.FormatError):
        io.write_image(tmp_path / "x.tif", np.zeros((2, 2, 3)))
    with pytest.raises(FileNotFoundError):
        io.read_image(tmp_path / "absent.pfm")


# --------------------------------------------------------------------------
# structured data


def test_stack_round_trip(tmp_path, rng):
    data = rng.random((3, 2, 3, 9, 9))
    stack = PSFStack(np.array([0.0, 0.5, 1.0]), np.array([0.0, np.pi]), data,
                     np.array([0.0, 0.5, 1.0]), rng.normal(size=(2, 2, 2)), {"note": "x"})
    io.save_stack(stack, tmp_path / "s")
    back = io.load_stack(tmp_path / "s")
    assert np.array_equal(back.data, data.astype(np.float32).astype(float))
    assert np.array_equal(back.H_samples, stack.H_samples)
    assert np.array_equal(back.shifts, stack.shifts)
    assert back.meta == {"note": "x"}


def test_truncated_stack_file(tmp_path):
    io.save_stack(PSFStack.impulse(9), tmp_path / "s")
    (tmp_path / "s" / "psf_H0_phi0_G.f32").write_bytes(b"\0" * 8)
    with pytest.raises(io.FormatError):
        io.load_stack(tmp_path / "s")


def test_missing_stack_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.load_stack(tmp_path)


def test_measurements_and_model_round_trip(tmp_path):
    model, shifts = random_lens(0, 4)
    ms = synthetic_measurements(model, np.deg2rad([0, 90]), shifts=shifts, pupil_n=32)
    io.save_measurements(ms, tmp_path / "m.json")
    back = io.load_measurements(tmp_path / "m.json")
    assert len(back.sfr) == len(ms.sfr) and len(back.ca) == len(ms.ca)
    for a, b in zip(ms.sfr, back.sfr):
        assert np.array_equal(a.values, b.values) and a.phi == b.phi and a.band == b.band
    for a, b in zip(ms.ca, back.ca):
        assert (a.delta_ca_r, a.delta_ca_b) == (b.delta_ca_r, b.delta_ca_b)
    io.save_model(model, tmp_path / "w.json")
    m2 = io.load_model(tmp_path / "w.json")
    assert np.array_equal(m2.coeffs, model.coeffs)
    assert np.array_equal(m2.band_edges, model.band_edges)


def test_json_is_deterministic(tmp_path):
    model, _ = random_lens(1, 3)
    io.save_model(model, tmp_path / "a.json")
    io.save_model(io.load_model(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_rows_csv(tmp_path):
    io.write_rows_csv([{"a": 1, "b": 2.5}, {"a": 3, "b": 4.0}], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == "a,b\n1,2.5\n3,4.0\n"
    io.write_rows_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ""

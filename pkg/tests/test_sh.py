import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relightfield.sh import SH_DIM, sh_basis


def random_dirs(n, seed=0):
    r = np.random.default_rng(seed)
    d = r.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_band0_constant():
    d = random_dirs(100)
    vals = sh_basis(d)
    np.testing.assert_allclose(vals[:, 0], 0.28209479177387814, rtol=0, atol=1e-15)


def test_pole_leaves_only_zonal_terms():
    vals = sh_basis(np.array([0.0, 0.0, 1.0]))
    zonal = {0, 2, 6, 12}  # m = 0 of each band
    for i in range(SH_DIM):
        if i in zonal:
            assert abs(vals[i]) > 1e-3
        else:
            assert vals[i] == pytest.approx(0.0, abs=1e-15)


def test_orthonormality_monte_carlo():
    # <Y_i Y_j> over the uniform sphere = delta_ij / (4 pi)
    n = 1_000_000
    d = random_dirs(n, seed=7)
    y = sh_basis(d)
    gram = y.T @ y / n
    target = np.eye(SH_DIM) / (4.0 * np.pi)
    # per-entry MC noise: std(YiYj) <= ~0.3 for band-3 products
    sd = y[:, :, None] * y[:, None, :]
    sigma = sd.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(gram - target) < 3.5 * sigma + 1e-6)


def test_addition_theorem_per_band():
    # sum_m Y_lm(w)^2 = (2l+1)/(4 pi) for any direction
    d = random_dirs(50, seed=3)
    y = sh_basis(d)
    bands = [(0, 1), (1, 4), (4, 9), (9, 16)]
    for l, (lo, hi) in enumerate(bands):
        s = (y[:, lo:hi] ** 2).sum(axis=1)
        np.testing.assert_allclose(s, (2 * l + 1) / (4 * np.pi), rtol=1e-12)


def test_zero_direction_raises():
    with pytest.raises(ValueError):
        sh_basis(np.zeros(3))


def test_non_unit_rejected():
    with pytest.raises(ValueError):
        sh_basis(np.array([0.0, 0.0, 2.0]))


@settings(max_examples=30, deadline=None)
@given(
    st.floats(-1.0, 1.0),
    st.floats(0.0, 2.0 * np.pi),
)
def test_output_finite_and_shaped(z, phi):
    s = np.sqrt(max(0.0, 1.0 - z * z))
    d = np.array([s * np.cos(phi), s * np.sin(phi), z])
    d = d / np.linalg.norm(d)
    v = sh_basis(d)
    assert v.shape == (SH_DIM,)
    assert np.all(np.isfinite(v))

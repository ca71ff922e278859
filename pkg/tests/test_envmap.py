import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relightfield.envmap import EnvironmentMap, texel_solid_angle_grid


def test_top_row_near_pole():
    for h in (8, 16):
        env = EnvironmentMap.constant((1, 1, 1), 2 * h, h)
        d = env.texel_direction(h, 0)
        elevation = np.degrees(np.arcsin(d[2]))
        # half a texel below the pole
        assert elevation == pytest.approx(90.0 - 0.5 * 180.0 / h, abs=1e-9)


def test_opposite_columns_differ_by_pi():
    env = EnvironmentMap.constant((1, 1, 1), 32, 16)
    for (x, y) in [(0, 3), (5, 8), (20, 15)]:
        a = env.texel_direction(x, y)
        b = env.texel_direction((x + 16) % 32, y)
        pa = np.arctan2(a[1], a[0])
        pb = np.arctan2(b[1], b[0])
        diff = (pb - pa) % (2 * np.pi)
        assert diff == pytest.approx(np.pi, abs=1e-12)


def test_texel_0_8_elevation():
    # first row below the equator of a 32x16 grid, hand-evaluated:
    # polar center = pi*(8+0.5)/16 -> elevation = -5.625 degrees
    env = EnvironmentMap.constant((1, 1, 1), 32, 16)
    d = env.texel_direction(0, 8)
    assert np.degrees(np.arcsin(d[2])) == pytest.approx(-5.625, abs=1e-9)


def test_direction_texel_roundtrip():
    env = EnvironmentMap.constant((1, 1, 1), 32, 16)
    for (x, y) in [(0, 0), (31, 15), (7, 8), (16, 3)]:
        assert env.direction_to_texel(env.texel_direction(x, y)) == (x, y)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 48), st.integers(1, 24))
def test_solid_angles_sum_to_sphere(w, h):
    omega = texel_solid_angle_grid(w, h)
    assert np.all(omega > 0)
    total = omega.sum()
    assert abs(total - 4 * np.pi) < 1e-6 * 4 * np.pi


def test_same_row_equal_solid_angle():
    omega = texel_solid_angle_grid(32, 16)
    for y in range(16):
        assert np.ptp(omega[y]) == 0.0


def test_equator_adjacent_band_value():
    # hand evaluation of the band formula for the 32x16 grid:
    # rows 7 and 8 touch the equator; each spans 11.25 degrees of polar
    # angle, so d_omega = (2 pi / 32) * (cos 78.75deg - cos 90deg)
    expected = (2 * np.pi / 32.0) * (np.cos(np.radians(78.75)) - 0.0)
    omega = texel_solid_angle_grid(32, 16)
    assert omega[7, 0] == pytest.approx(expected, rel=1e-12)
    assert omega[8, 0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.0383068, rel=1e-5)


def test_out_of_range_texel():
    env = EnvironmentMap.constant((1, 1, 1), 8, 4)
    with pytest.raises(IndexError):
        env.texel_direction(8, 0)
    with pytest.raises(IndexError):
        env.texel_solid_angle(0, 4)


def test_single_texel_always_sampled(rng):
    env = EnvironmentMap.single_texel(13, (5.0, 5.0, 5.0), 8, 4)
    for u in rng.random(64):
        idx, pdf = env.sample_texel(u)
        assert idx == 13
        assert pdf > 0


def test_uniform_sampling_follows_solid_angle(rng):
    env = EnvironmentMap.constant((2.0, 2.0, 2.0), 8, 4)
    n = 200_000
    counts = np.zeros(32)
    idx = [env.sample_texel(u)[0] for u in rng.random(n)]
    np.add.at(counts, idx, 1)
    probs = env.texel_solid_angles().ravel() / (4 * np.pi)
    sigma = np.sqrt(n * probs * (1 - probs))
    assert np.all(np.abs(counts - n * probs) < 3.5 * sigma + 3)


def test_luminance_ratio_sampling(rng):
    # two texels in the same row (equal solid angle), radiance 1 vs 3
    vals = np.zeros((4, 8, 3))
    vals[2, 1] = 1.0
    vals[2, 5] = 3.0
    env = EnvironmentMap(vals)
    n = 60_000
    ids = np.array([env.sample_texel(u)[0] for u in rng.random(n)])
    n1 = int((ids == 2 * 8 + 1).sum())
    n3 = int((ids == 2 * 8 + 5).sum())
    assert n1 + n3 == n
    p = 0.25
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(n1 - n * p) < 3.5 * sigma


def test_black_map_has_no_light():
    env = EnvironmentMap(np.zeros((4, 8, 3)))
    with pytest.raises(ValueError, match="no light"):
        env.sampling_tables()


def test_constructor_validation():
    with pytest.raises(ValueError):
        EnvironmentMap(np.full((4, 8, 3), -1.0))
    with pytest.raises(ValueError):
        EnvironmentMap(np.full((4, 8, 3), np.nan))
    with pytest.raises(ValueError):
        EnvironmentMap(np.zeros((4, 8)))


def test_bilinear_matches_texels_at_centers():
    rng = np.random.default_rng(0)
    env = EnvironmentMap(rng.random((8, 16, 3)))
    dirs = env.texel_directions()[2:6].reshape(-1, 3)  # interior rows
    vals = env.lookup_bilinear(dirs)
    np.testing.assert_allclose(vals, env.values[2:6].reshape(-1, 3), atol=1e-12)


def test_resample_constant_invariant():
    env = EnvironmentMap.constant((0.3, 0.5, 0.7), 32, 16)
    down = env.resample(16, 8)
    np.testing.assert_allclose(down.values, 0.0 + env.values[0, 0], atol=1e-12)
    up = env.resample(64, 32)
    np.testing.assert_allclose(up.values[0, 0], env.values[0, 0], atol=1e-12)


def test_resample_preserves_mean_energy(rng):
    env = EnvironmentMap(rng.random((16, 32, 3)))
    down = env.resample(8, 4)
    e0 = (env.values * env.texel_solid_angles()[..., None]).sum(axis=(0, 1))
    e1 = (down.values * down.texel_solid_angles()[..., None]).sum(axis=(0, 1))
    np.testing.assert_allclose(e0, e1, rtol=1e-9)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from gmsfem_wave.medium import (MediumField, RasterGrid, SourceConfig, constant_medium, layered_random_medium,
                                load_vector, read_raster, ricker, ricker_space, ricker_time, sample_raster,
                                write_raster)
from gmsfem_wave.mesh import build_staggered_mesh


@pytest.fixture(scope="module")
def fine():
    return build_staggered_mesh(2, 2).fine


def test_constant_medium(fine):
    m = constant_medium(fine)
    assert np.all(m.kappa == 1) and np.all(m.rho == 1)
    m = constant_medium(fine, 2.0, 0.5)
    assert np.all(m.kappa == 2.0) and np.all(m.rho == 0.5)
    with pytest.raises(ValueError):
        constant_medium(fine, 0.0)


def test_medium_field_validation():
    with pytest.raises(ValueError):
        MediumField(np.array([1.0, -1.0]), np.ones(2))
    with pytest.raises(ValueError):
        MediumField(np.array([1.0, np.inf]), np.ones(2))
    with pytest.raises(ValueError):
        MediumField(np.ones(2), np.ones(3))
    m = MediumField(np.ones(2), np.ones(2)).scaled(4.0, 0.5)
    assert np.all(m.kappa == 4.0) and np.all(m.rho == 0.5)


def test_layered_medium_contract(fine):
    assert np.all(layered_random_medium(fine, contrast=1.0).kappa == 1.0)
    a = layered_random_medium(fine, seed=11)
    b = layered_random_medium(fine, seed=11)
    assert np.array_equal(a.kappa, b.kappa)
    assert np.all(a.rho == 1.0)
    modulus = 1.0 / a.kappa
    assert modulus.min() >= 1.0 and modulus.max() <= 10.0
    # constant along horizontal bands
    band = np.floor(fine.centroids[:, 1] * 16).astype(int)
    for k in np.unique(band):
        assert np.ptp(a.kappa[band == k]) == 0.0


def test_layered_medium_pinned_output():
    f = build_staggered_mesh(8, 3).fine
    m = layered_random_medium(f, seed=7, layers=16, contrast=10)
    rng = np.random.Generator(np.random.PCG64(7))
    expected = 1.0 + 9.0 * rng.random(16)
    got = np.array([1.0 / m.kappa[np.argmin(np.abs(f.centroids[:, 1] - (k + 0.5) / 16))] for k in range(16)])
    assert np.allclose(got, expected, rtol=1e-15)
    assert 1.0 / m.kappa.max() == pytest.approx(expected.min())
    assert 1.0 / m.kappa.min() == pytest.approx(expected.max())


def test_raster_sampling(fine):
    m = sample_raster(fine, RasterGrid(3, 2, np.full(6, 2.5)))
    assert np.all(m.kappa == 2.5) and np.all(m.rho == 1.0)
    m = sample_raster(fine, RasterGrid(2, 1, [1.0, 7.0]))
    left = fine.centroids[:, 0] < 0.5
    assert np.all(m.kappa[left] == 1.0) and np.all(m.kappa[~left] == 7.0)
    vals = np.array([1.0 + ((i + j) % 2) for j in range(4) for i in range(4)])
    g = RasterGrid(4, 4, vals)
    m = sample_raster(fine, g, rho=RasterGrid(1, 1, [3.0]))
    for c, k in zip(fine.centroids, m.kappa):
        i, j = min(int(c[0] * 4), 3), min(int(c[1] * 4), 3)
        assert k == vals[j * 4 + i]
    assert np.all(m.rho == 3.0)


def test_raster_extent_checked(fine):
    with pytest.raises(ValueError):
        sample_raster(fine, RasterGrid(1, 1, [1.0], extent=(0.0, 0.0, 0.5, 1.0)))
    with pytest.raises(ValueError):
        RasterGrid(2, 2, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        RasterGrid(1, 1, [0.0])


def test_raster_file_roundtrip(tmp_path):
    g = RasterGrid(3, 2, [1.0, 2.0, 3.0, 4.0, 5.0, 6.5], extent=(-0.1, 0.0, 1.2, 1.0))
    write_raster(g, tmp_path / "r.txt", per_line=4)
    h = read_raster(tmp_path / "r.txt")
    assert (h.nx, h.ny, h.extent) == (3, 2, g.extent)
    assert np.array_equal(h.values, g.values)
    (tmp_path / "bad.txt").write_text("3 2\n1 2 3 4 5 6\n")
    with pytest.raises(ValueError):
        read_raster(tmp_path / "bad.txt")


def test_ricker_values():
    s = SourceConfig(f0=20.0, delta=1 / 32)
    pts = np.random.default_rng(0).random((5, 2))
    assert np.all(ricker(2 / 20, pts, s) == 0.0)
    assert ricker_space(np.array([0.5, 0.5]), s) == pytest.approx(32.0 ** 2)
    t = 0.15
    direct = 32.0 ** 2 * (t - 0.1) * np.exp(-np.pi ** 2 * 400 * (t - 0.1) ** 2)
    assert ricker(t, np.array([0.5, 0.5]), s) == pytest.approx(direct, rel=1e-14)


def test_ricker_time_integrates_to_zero():
    f0 = 20.0
    total, _ = quad(lambda t: ricker_time(t, f0), 0, 4 / f0, epsabs=1e-14, limit=200)
    mass, _ = quad(lambda t: abs(ricker_time(t, f0)), 0, 4 / f0, limit=200)
    assert abs(total) < 1e-6 * mass


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.7), st.floats(0.0, 0.7))
def test_spatial_factor_decays(r1, r2):
    s = SourceConfig(delta=0.1)
    a, b = sorted((r1, r2))
    ga = ricker_space(np.array([0.5 + a, 0.5]), s)
    gb = ricker_space(np.array([0.5 + b, 0.5]), s)
    assert gb <= ga


def test_source_config_validation():
    with pytest.raises(ValueError):
        SourceConfig(f0=0.0)
    with pytest.raises(ValueError):
        SourceConfig(delta=-1.0)


def test_load_vector_centroid_rule(fine):
    s = SourceConfig(f0=10.0, delta=0.2)
    F = load_vector(fine, s)
    assert np.allclose(F, ricker_space(fine.centroids, s) * fine.areas)

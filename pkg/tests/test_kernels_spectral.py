import numpy as np
import pytest

from conewave import kernels
from conewave.cone import parse_cone
from conewave.spectral import (NodeGrid, SampledSignal, SpatialGrid, Spectrum, node_grid, ramp,
                               smoothstep, smoothstep_deriv)


def direct_type2(P, N, C):
    out = np.zeros(len(P), dtype=complex)
    for p in range(len(P)):
        out[p] = np.sum(C * np.exp(2j * np.pi * (N @ P[p])))
    return out


@pytest.mark.parametrize("backend", ["cython", "numpy"])
def test_type2_type1_against_loops(backend):
    if backend == "cython" and kernels.BACKEND != "cython":
        pytest.skip("compiled core not built")
    rng = np.random.default_rng(0)
    P = rng.normal(size=(37, 3))
    N = rng.normal(size=(23, 3))
    C = rng.normal(size=23) + 1j * rng.normal(size=23)
    ref = direct_type2(P, N, C)
    assert np.allclose(kernels.type2(P, N, C, backend=backend), ref, atol=1e-12)
    V = rng.normal(size=37) + 1j * rng.normal(size=37)
    ref1 = np.array([np.sum(V * np.exp(-2j * np.pi * (P @ N[m]))) for m in range(23)])
    assert np.allclose(kernels.type1(P, N, V, backend=backend), ref1, atol=1e-12)
    C2 = rng.normal(size=(3, 23)) + 0j
    out = kernels.type2(P, N, C2, backend=backend)
    assert out.shape == (3, 37)
    assert np.allclose(out[1], direct_type2(P, N, C2[1]), atol=1e-12)


def test_separable_matches_direct():
    rng = np.random.default_rng(1)
    N = rng.normal(size=(15, 2))
    C = rng.normal(size=15) + 1j * rng.normal(size=15)
    axes = [np.linspace(-1, 1, 5), np.linspace(-2, 2, 4)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
    sep = kernels.separable_type2(axes, N, C)
    assert sep.shape == (5, 4)
    assert np.allclose(sep.reshape(-1), direct_type2(P, N, C), atol=1e-12)


def test_smoothstep():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    assert np.allclose(smoothstep(t), [0, 0, 0.5, 1, 1])
    s = np.linspace(0.01, 0.99, 50)
    assert np.all(np.diff(smoothstep(s)) > 0)
    h = 1e-6
    fd = (smoothstep(s + h, 2.0) - smoothstep(s - h, 2.0)) / (2 * h)
    assert np.allclose(fd, smoothstep_deriv(s, 2.0), rtol=1e-6, atol=1e-9)
    assert np.allclose(ramp([0.2, 0.5, 2.0, 3.0], 0.5, 2.0), [1, 1, 0, 0])


@pytest.mark.parametrize("name", ["orthant:r=1", "orthant:r=2", "spd2"])
def test_node_grid_quadrature(name):
    cone = parse_cone(name)
    grid = node_grid(cone, 2.0)
    assert np.all(cone.metric_distance(grid.xi, np.broadcast_to(cone.e, grid.xi.shape)) < 2.0)
    # lookups
    assert np.array_equal(grid.positions(grid.idx), np.arange(grid.size))
    assert grid.positions(grid.idx[:1] + 10 ** 6)[0] == -1
    # integral of a smooth radial bump in log-coordinates is resolved
    coarse = NodeGrid.ball(cone, grid.step * 2, 2.0)

    def fn(xi):
        return ramp(cone.distance_to_e(xi), 0.3, 1.5)

    v1 = np.sum(grid.weights * fn(grid.xi))
    v2 = np.sum(coarse.weights * fn(coarse.xi))
    # the doubled spd2 step is coarser than any grid used in practice
    assert v1 == pytest.approx(v2, rel=1e-6 if cone.kind == "orthant" else 1e-4)


def test_orthant1_node_weights_integrate_exponential():
    cone = parse_cone("orthant:r=1")
    grid = NodeGrid.ball(cone, [1 / 64], 9.0)
    val = np.sum(grid.weights * np.exp(-grid.xi[:, 0]))
    # int_0^inf e^-x dx = 1, truncated at e^-9 and e^9
    assert val == pytest.approx(1.0 - np.exp(-9.0), abs=1e-6)


def test_interpolation_recovers_smooth_spectrum():
    cone = parse_cone("orthant:r=2")
    grid = node_grid(cone, 2.0)

    def fn(xi):
        return ramp(cone.distance_to_e(xi), 0.2, 1.6) * np.exp(-2j * np.pi * xi @ np.array([0.2, -0.1]))

    s = Spectrum(grid, fn(grid.xi))
    rng = np.random.default_rng(2)
    q = np.exp(rng.uniform(-1.2, 1.2, size=(40, 2)))
    assert np.max(np.abs(s.at(q) - fn(q))) < 1e-5


def test_spectrum_spatial_evaluation_and_norm():
    cone = parse_cone("orthant:r=1")
    grid = node_grid(cone, 2.0)
    s = Spectrum(grid, ramp(cone.distance_to_e(grid.xi), 0.5, 2.0) + 0j)
    assert s.norm() == pytest.approx(np.sqrt(s.inner(s).real))
    x = np.linspace(-1, 1, 7)[:, None]
    direct = np.array([np.sum(grid.weights * s.values * np.exp(2j * np.pi * grid.xi[:, 0] * xx)) for xx in x[:, 0]])
    assert np.allclose(s.evaluate(x), direct, atol=1e-12)
    sg = SpatialGrid.centered([1.0], [1 / 3])
    assert np.allclose(s.on_grid(sg), direct, atol=1e-12)


def test_sampled_signal_dft_round_trip():
    g = SpatialGrid.centered([2.0, 1.0], [0.25, 0.125])
    rng = np.random.default_rng(3)
    vals = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    s = SampledSignal(g, vals)
    back = SampledSignal.from_frequency(g, s.to_frequency())
    assert np.max(np.abs(back.values - vals)) < 1e-12
    with pytest.raises(ValueError):
        SampledSignal(g, vals[:-1])

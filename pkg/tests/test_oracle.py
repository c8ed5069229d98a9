import numpy as np
import pytest

from conewave.cone import parse_cone
from conewave.oracle import (OracleError, TestSignalSpec, bruteforce_group_convolution, direct_voice,
                             make_test_signal, newhaar_constant, newhaar_ratios, random_bumps)
from conewave.spectral import Spectrum, node_grid
from conewave.transform import (CoefficientField, HSamples, group_convolve, make_wavelet, voice_at,
                                voice_field)

ORTH1 = parse_cone("orthant:r=1")
ORTH2 = parse_cone("orthant:r=2")
SPD2 = parse_cone("spd2")


@pytest.mark.parametrize("cone", [ORTH1, ORTH2], ids=lambda c: c.name)
def test_newhaar_orthant_is_one(cone):
    c = newhaar_constant(cone, random_bumps(cone, 5, seed=1))
    assert c == pytest.approx(1.0, abs=1e-6)


def test_newhaar_spd2_constant_and_homogeneity():
    fs = random_bumps(SPD2, 5, seed=2)
    r = newhaar_ratios(SPD2, fs, step=0.03)
    assert np.ptp(r) / r.mean() <= 1e-3
    doubled = newhaar_ratios(SPD2, [lambda x, f=fs[0]: 2 * f(x)] + fs[1:3], step=0.03)
    assert doubled[0] == pytest.approx(r[0], rel=1e-14)


def test_newhaar_errors():
    with pytest.raises(OracleError):
        newhaar_constant(ORTH1, random_bumps(ORTH1, 2))
    # quadrature noise on spd2 exceeds an unrealistically tight spread
    with pytest.raises(OracleError, match="spread"):
        newhaar_constant(SPD2, random_bumps(SPD2, 3, seed=2), step=0.05, spread=1e-14)


def test_make_test_signal_determinism_and_support():
    g = node_grid(ORTH2, 2.0)
    spec = TestSignalSpec(seed=7, n_bumps=2)
    f1, f2 = make_test_signal(spec, ORTH2, g), make_test_signal(spec, ORTH2, g)
    assert np.array_equal(f1.values, f2.values)
    d = ORTH2.distance_to_e(g.xi)
    assert np.all(f1.values[d > spec.radius] == 0)
    assert np.any(f1.values != 0)
    with pytest.raises(OracleError, match="margin"):
        make_test_signal(TestSignalSpec(radius=1.9), ORTH2, g)


def test_one_bump_signal_is_translated_ramp():
    g = node_grid(ORTH1, 2.0)
    f = make_test_signal(TestSignalSpec(seed=3, n_bumps=1), ORTH1, g)
    src = f.source
    y, rho, a, x0 = src.centers[0], src.radii[0], src.amps[0], src.shifts[0]
    from conewave.spectral import ramp
    ref = a * ramp(ORTH1.metric_distance(g.xi, np.broadcast_to(y, g.xi.shape)), 0.0, rho) \
        * np.exp(-2j * np.pi * g.xi @ x0)
    assert np.allclose(f.values, ref, atol=1e-15)


def test_direct_voice_matches_transform():
    g = node_grid(ORTH2, 2.0)
    W = make_wavelet(ORTH2, g)
    f = make_test_signal(TestSignalSpec(seed=1), ORTH2, g)
    rng = np.random.default_rng(0)
    th = rng.normal(scale=0.3, size=(6, 2))
    x = rng.normal(size=(6, 2))
    assert np.allclose(direct_voice(ORTH2, f.compact(), W.psi, th, x), voice_at(f, W, th, x), atol=1e-13)


@pytest.mark.parametrize("cone", [ORTH1, ORTH2, SPD2], ids=lambda c: c.name)
def test_group_convolve_matches_bruteforce(cone):
    g = node_grid(cone, 2.0)
    W = make_wavelet(cone, g)
    G = voice_field(make_test_signal(TestSignalSpec(seed=2), cone, g), W)
    rng = np.random.default_rng(11)
    hs = HSamples(cone, [0.25] * cone.n, rng.integers(-2, 3, size=(6, cone.n)))
    N = 24
    F = CoefficientField(hs, x=rng.uniform(-1, 1, size=(N, cone.n)), hidx=rng.integers(0, 6, N),
                         values=rng.normal(size=N) + 1j * rng.normal(size=N), weights=rng.uniform(0.1, 1, N))
    a = group_convolve(F, G).values
    b = bruteforce_group_convolution(F, G).values
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


def test_bruteforce_trivial_cases():
    g = node_grid(ORTH1, 2.0)
    W = make_wavelet(ORTH1, g)
    G = voice_field(Spectrum.from_function(g, W.psi), W)
    hs = HSamples(ORTH1, [0.125], [[0], [2]])
    F0 = CoefficientField(hs, x=np.zeros((2, 1)), hidx=np.array([0, 1]), values=np.zeros(2), weights=np.ones(2))
    assert np.all(bruteforce_group_convolution(F0, G).values == 0)
    big = CoefficientField(hs, x=np.zeros((1001, 1)), hidx=np.zeros(1001, int), values=np.ones(1001),
                           weights=np.ones(1001))
    with pytest.raises(OracleError, match="budget"):
        bruteforce_group_convolution(big, G)

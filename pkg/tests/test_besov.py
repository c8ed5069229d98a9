import numpy as np
import pytest

from conewave.besov import (BesovError, BesovParams, ConeLattice, SpatialPolicy, besov_record,
                            continuous_h_samples, default_spatial_policy, fft_box, make_lattice,
                            make_partition, mixed_norm, norm_continuous, norm_discrete)
from conewave.cone import parse_cone
from conewave.oracle import TestSignalSpec, classical_besov_1d, make_test_signal
from conewave.spectral import NodeGrid, Spectrum, node_grid, ramp
from conewave.transform import CoefficientField, GroupPoint, analyze, make_wavelet, rep_apply

ORTH1 = parse_cone("orthant:r=1")
ORTH2 = parse_cone("orthant:r=2")
SPD2 = parse_cone("spd2")
ALL = [ORTH1, ORTH2, SPD2]


@pytest.fixture(scope="module")
def setup():
    out = {}
    for c in ALL:
        g = node_grid(c, 2.0)
        W = make_wavelet(c, g)
        L = make_lattice(c, grid=g)
        P = make_partition(c, L, g)
        out[c.name] = (g, W, L, P)
    return out


def test_params():
    bp = BesovParams.for_cone(SPD2, 1.0, 2.0, 0.5)
    assert bp.s_prime == 0.5 * 2 / 3 - 1.0
    assert BesovParams.for_cone(ORTH2, 2, 2, 1).s_prime == 0.0
    with pytest.raises(BesovError):
        BesovParams(0.5, 2.0, 0.0)


def test_orthant1_lattice_is_log_spaced(setup):
    L = setup[ORTH1.name][2]
    logs = np.sort(np.log(L.points[:, 0]))
    assert np.allclose(np.diff(logs), 1.2)
    assert np.any(np.abs(logs) < 1e-15)
    assert L.min_separation >= 1.0 and L.covering_radius <= 1.0


@pytest.mark.parametrize("cone", ALL, ids=lambda c: c.name)
def test_lattice_invariants(setup, cone):
    g, _, L, _ = setup[cone.name]
    D = cone.metric_distance(L.points[:, None], L.points[None])
    np.fill_diagonal(D, np.inf)
    assert D.min() >= 2 * L.delta
    region = g.xi[cone.distance_to_e(g.xi) <= L.extent]
    cov = cone.metric_distance(region[:, None], L.points[None]).min(axis=1)
    assert cov.max() <= L.R * L.delta


def test_lattice_single_point_and_errors():
    for c in ALL:
        L = make_lattice(c, extent=0.0)
        assert len(L.points) == 1 and np.allclose(L.points[0], c.e)
    with pytest.raises(BesovError):
        make_lattice(ORTH1, delta=0.0)
    with pytest.raises(BesovError):
        make_lattice(ORTH1, R=1.5)
    with pytest.raises(BesovError, match="overlapping"):
        make_lattice(ORTH2, spacing=0.5)
    with pytest.raises(BesovError, match="not covered"):
        make_lattice(ORTH2, spacing=2.5)


@pytest.mark.parametrize("cone", ALL, ids=lambda c: c.name)
def test_partition_invariants(setup, cone):
    g, _, L, P = setup[cone.name]
    region = cone.distance_to_e(g.xi) <= L.extent
    assert np.max(np.abs(P.values[:, region].sum(axis=0) - 1.0)) <= 1e-10
    assert P.values.min() >= 0 and P.values.max() <= 1 + 1e-15
    D = cone.metric_distance(g.xi[None], L.points[:, None])
    assert np.all(P.values[D >= 2.0] == 0)
    assert np.all(P.values[D <= 0.5] == 1.0)
    # off the cone
    bad = -np.abs(np.random.default_rng(0).normal(size=(5, cone.n))) - 0.1
    assert np.all(P.evaluate(bad) == 0)


def test_partition_errors(setup):
    g, _, L, _ = setup[ORTH2.name]
    with pytest.raises(BesovError, match="coarse"):
        make_partition(ORTH2, L, NodeGrid.ball(ORTH2, [0.2, 0.2], 2.0))
    far = ConeLattice(ORTH2, np.exp(np.array([[5.0, 5.0], [-5.0, 5.0]])), 0.5, 2.0, 2.0,
                      np.array([1.2, 1.2]), 14.0, 0.0)
    with pytest.raises(BesovError, match="covered by no bump"):
        make_partition(ORTH2, far, g)


@pytest.mark.parametrize("cone", ALL, ids=lambda c: c.name)
def test_norm_discrete_basic(setup, cone):
    g, W, L, P = setup[cone.name]
    bp = BesovParams.for_cone(cone, 2, 2, 0.5)
    zero = Spectrum(g, np.zeros(g.size))
    assert norm_discrete(zero, P, bp).value == 0.0
    f = make_test_signal(TestSignalSpec(seed=4), cone, g)
    for p in (1.0, 2.0):
        bp = BesovParams.for_cone(cone, p, 2, 0.5)
        a = norm_discrete(f, P, bp).value
        b = norm_discrete(f * (-2.5j), P, bp).value
        assert a > 0 and b == pytest.approx(2.5 * a, rel=1e-12)


def test_norm_discrete_single_band_is_l2():
    # one lattice point: its band is 1 on B_2(e), so the norm is ||f||_2
    g = node_grid(ORTH2, 2.0)
    P = make_partition(ORTH2, make_lattice(ORTH2, extent=0.0), g)
    f = make_test_signal(TestSignalSpec(seed=1, radius=0.8), ORTH2, g)
    val = norm_discrete(f, P, BesovParams.for_cone(ORTH2, 2, 2, 0.7)).value
    assert val == pytest.approx(f.norm(), rel=1e-12)


@pytest.mark.parametrize("cone", ALL, ids=lambda c: c.name)
def test_norm_discrete_inner_ball_band(setup, cone):
    # f^ inside B_1/2(x_j0) meets a single band, which equals 1 there
    g, _, L, P = setup[cone.name]
    j0 = int(np.argmax(cone.distance_to_e(L.points) > 0.5))
    y = L.points[j0]
    fn = lambda xi: ramp(cone.metric_distance(xi, np.broadcast_to(y, xi.shape)), 0.1, 0.45) + 0j  # noqa: E731
    f = Spectrum.from_function(g, fn)
    s, q = 0.8, 1.0
    val = norm_discrete(f, P, BesovParams.for_cone(cone, 2, q, s)).value
    ref = cone.determinant(y) ** (-s / q) * f.norm()
    assert val == pytest.approx(ref, rel=1e-12)


def test_norm_discrete_uncovered_energy():
    g = node_grid(ORTH2, 3.0)
    P = make_partition(ORTH2, make_lattice(ORTH2, extent=0.0), g)
    y = np.exp(np.array([2.2, 0.0]))
    f = Spectrum.from_function(g, lambda xi: ramp(ORTH2.metric_distance(xi, np.broadcast_to(y, xi.shape)), 0, 0.5)
                               + 0j)
    with pytest.raises(BesovError, match="uncovered"):
        norm_discrete(f, P, BesovParams.for_cone(ORTH2, 2, 2, 0))


@pytest.mark.parametrize("p,q,s", [(2, 2, 0.5), (1, 2, -1), (1, 1, 1), (2, 1, 0)])
def test_classical_reduction(setup, p, q, s):
    g, W, _, _ = setup[ORTH1.name]
    bp = BesovParams.for_cone(ORTH1, p, q, s)
    for seed in range(3):
        f = make_test_signal(TestSignalSpec(seed=seed), ORTH1, g)
        fc = f.compact()
        hs = continuous_h_samples(ORTH1, fc.grid.xi)
        box = fft_box(fc.grid.xi, default_spatial_policy(ORTH1))
        a = norm_continuous(f, W, bp).value
        b = classical_besov_1d(f.source, p, q, s, hs.theta[:, 0], hs.step[0], fc.grid.xi[:, 0], fc.grid.weights,
                               (box.axes[0], box.padded[0]))
        assert a == pytest.approx(b, rel=1e-10)


def test_classical_single_band():
    # one scale, a spectrum inside the plateau of the profile: the quadrature is a single term
    xi = np.linspace(0.8, 1.25, 10)
    w = np.full(10, 0.05)
    fhat = lambda x: np.ones(len(x)) + 0j  # noqa: E731
    val = classical_besov_1d(fhat, 2, 2, 0.0, [0.0], 0.1, xi, w)
    assert val == pytest.approx(np.sqrt(0.1 * 0.5), rel=1e-14)
    assert classical_besov_1d(lambda x: np.zeros(len(x)), 2, 2, 0.0, [0.0, 0.1], 0.1, xi, w) == 0.0


def test_norm_continuous_zero(setup):
    g, W, _, _ = setup[ORTH2.name]
    assert norm_continuous(Spectrum(g, np.zeros(g.size)), W, BesovParams.for_cone(ORTH2, 1, 2, 0)).value == 0.0


@pytest.mark.parametrize("cone,theta0,p,h_step,policy", [
    (ORTH2, [0.25, -0.125], 2, None, None),
    (ORTH2, [0.25, -0.125], 1, None, SpatialPolicy(32.0)),
    (SPD2, [0.08, 0.0, 0.08], 2, 0.125, None),
], ids=["orthant2-p2", "orthant2-p1", "spd2-p2"])
def test_norm_continuous_dilation_covariance(setup, cone, theta0, p, h_step, policy):
    g, W, _, _ = setup[cone.name]
    f = make_test_signal(TestSignalSpec(seed=2, radius=0.5), cone, g)
    th0 = np.array(theta0)
    f2 = rep_apply(GroupPoint.make(cone, th0, np.zeros(cone.n)), f)
    D0 = cone.det_action(th0)
    for q, s in [(2, 0.5), (1, -1)]:
        bp = BesovParams.for_cone(cone, p, q, s)
        a = norm_continuous(f, W, bp, h_step=h_step, policy=policy).value
        b = norm_continuous(f2, W, bp, h_step=h_step, policy=policy).value
        expo = 1 / p - 0.5 + s * cone.r / (cone.n * q)
        assert b / a == pytest.approx(D0 ** expo, rel=1e-3)


def test_mixed_norm_l2_and_solidity(setup):
    g, W, _, _ = setup[ORTH2.name]
    f = make_test_signal(TestSignalSpec(seed=3), ORTH2, g)
    F = analyze(f, W)
    bp = BesovParams.for_cone(ORTH2, 2, 2, 0)
    val = mixed_norm(F, bp, weight_exponent=0.0).value
    ref = np.sqrt(np.sum(F.hs.weights[:, None] * F.grid.weights[None] * np.abs(F.spec) ** 2))
    assert val == pytest.approx(ref, rel=1e-12)
    # point field: s = -1 gives the left Haar quadrature norm
    rng = np.random.default_rng(0)
    hidx = rng.integers(0, len(F.hs), 40)
    x = rng.normal(size=(40, 2))
    wts = rng.uniform(0.5, 1.0, 40)
    v1 = rng.normal(size=40) + 1j * rng.normal(size=40)
    P1 = CoefficientField(F.hs, x=x, hidx=hidx, values=v1, weights=wts)
    assert mixed_norm(P1, bp, weight_exponent=-1.0).value == pytest.approx(np.sqrt(np.sum(wts * np.abs(v1) ** 2)))
    v2 = v1 * (1 + rng.uniform(0, 1, 40))
    P2 = CoefficientField(F.hs, x=x, hidx=hidx, values=v2, weights=wts)
    for p, q in [(1, 2), (2, 1), (1, 1)]:
        b = BesovParams.for_cone(ORTH2, p, q, 0.3)
        assert mixed_norm(P1, b).value <= mixed_norm(P2, b).value
    with pytest.raises(Exception, match="weights"):
        mixed_norm(CoefficientField(F.hs, x=x, hidx=hidx, values=v1), bp)


@pytest.mark.parametrize("cone", [ORTH1, ORTH2, SPD2], ids=lambda c: c.name)
def test_coorbit_consistency(setup, cone):
    g, W, _, _ = setup[cone.name]
    ratios = []
    for seed in range(4):
        f = make_test_signal(TestSignalSpec(seed=seed), cone, g)
        F = analyze(f, W)
        for p, q, s in [(2, 2, 0.5), (1, 2, -1)]:
            bp = BesovParams.for_cone(cone, p, q, s)
            ratios.append(mixed_norm(F, bp).value / norm_continuous(f, W, bp).value)
    ratios = np.array(ratios)
    assert np.ptp(ratios) / ratios.mean() <= 1e-2
    # both sides use the same dilated profile, up to the wavelet normalization
    assert ratios.mean() == pytest.approx(W.raw_constant ** -0.5, rel=1e-2)


@pytest.mark.parametrize("p", [2.0, 1.0])
def test_mixed_norm_left_translation(setup, p):
    g, W, _, _ = setup[ORTH2.name]
    f = make_test_signal(TestSignalSpec(seed=5, radius=0.5), ORTH2, g)
    th0 = np.array([0.25, 0.125])
    g0 = GroupPoint.make(ORTH2, th0, np.array([0.3, -0.2]))
    F = analyze(f, W)
    F2 = analyze(rep_apply(g0, f), W)
    pol = SpatialPolicy(32.0)
    for q, s in [(2, 0.5), (1, -0.5)]:
        bp = BesovParams.for_cone(ORTH2, p, q, 0.0)
        a = mixed_norm(F, bp, weight_exponent=s, policy=pol).value
        b = mixed_norm(F2, bp, weight_exponent=s, policy=pol).value
        # change of variables: det(h0)^{1/p + s/q}
        assert b / a == pytest.approx(ORTH2.det_action(th0) ** (1 / p + s / q), rel=1e-6 if p == 2 else 1e-3)


def test_band_cache_and_record(setup):
    g, W, _, P = setup[ORTH1.name]
    f = make_test_signal(TestSignalSpec(seed=0), ORTH1, g)
    cache = {}
    bp = BesovParams.for_cone(ORTH1, 1, 2, 0)
    r1 = norm_continuous(f, W, bp, band_cache=cache)
    r2 = norm_continuous(f, W, BesovParams.for_cone(ORTH1, 1, 1, 1), band_cache=cache)
    assert len(cache) == 1 and r1.value != r2.value
    d = norm_discrete(f, P, bp, band_cache=cache)
    rec = besov_record(bp, d)
    assert set(rec) == {"p", "q", "s", "s_prime", "value", "quadrature_report"}
    assert rec["value"] == d.value

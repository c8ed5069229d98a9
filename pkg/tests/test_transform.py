import numpy as np
import pytest

from conewave.cone import parse_cone
from conewave.oracle import TestSignalSpec, make_test_signal
from conewave.spectral import NodeGrid, SampledSignal, SpatialGrid, Spectrum, node_grid
from conewave.transform import (CoefficientField, GroupPoint, HSamples, TransformError, admissibility_constant,
                                analyze, coverage, group_convolve, group_exp, make_wavelet, rep_apply,
                                rep_derivative, synthesize, voice_at, voice_field)

ORTH1 = parse_cone("orthant:r=1")
ORTH2 = parse_cone("orthant:r=2")
SPD2 = parse_cone("spd2")


@pytest.fixture(scope="module")
def w1():
    return make_wavelet(ORTH1)


@pytest.fixture(scope="module")
def w2():
    return make_wavelet(ORTH2)


@pytest.fixture(scope="module")
def wspd():
    return make_wavelet(SPD2)


def _dist(cone, xi):
    return cone.distance_to_e(xi)


@pytest.mark.parametrize("fixture", ["w1", "w2", "wspd"])
def test_wavelet_invariants(fixture, request):
    W = request.getfixturevalue(fixture)
    cone = W.cone
    d = _dist(cone, W.grid.xi)
    prof = W.profile(W.grid.xi)
    assert np.all(prof[d <= 0.5] == 1.0)
    assert np.all(prof[d >= 2.0] == 0.0)
    assert np.all((prof >= 0) & (prof <= 1))
    assert W.profile(cone.e[None])[0] == 1.0
    assert W.admissibility_constant == pytest.approx(1.0, abs=1e-6)
    assert W.refined_constant == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(W.psi_hat.values, prof / np.sqrt(W.raw_constant))


def test_admissibility_examples(w1):
    assert admissibility_constant(ORTH1, lambda xi: np.zeros(xi.shape[:-1])) == 0.0
    c = admissibility_constant(ORTH1, w1.profile)
    assert admissibility_constant(ORTH1, lambda xi: 3.0 * w1.profile(xi)) == pytest.approx(9 * c, rel=1e-13)
    # one-dimensional log-coordinate oracle: int profile(e^t)^2 dt
    from scipy import integrate

    ref, _ = integrate.quad(lambda t: w1.profile(np.array([[np.exp(t)]]))[0] ** 2, -2.0, 2.0,
                            points=[-0.5, 0.5], epsabs=1e-13, epsrel=1e-12, limit=200)
    assert c == pytest.approx(ref, rel=1e-9)


def test_make_wavelet_errors():
    coarse = NodeGrid.ball(ORTH1, [0.25], 2.0)
    with pytest.raises(TransformError, match="coarse"):
        make_wavelet(ORTH1, coarse)
    small = NodeGrid.ball(ORTH1, [1 / 64], 1.5)
    with pytest.raises(TransformError, match="exits"):
        make_wavelet(ORTH1, small)
    with pytest.raises(TransformError):
        make_wavelet(ORTH1, sharpness=0.0)


def test_group_point_laws():
    rng = np.random.default_rng(0)
    g = [GroupPoint.make(SPD2, rng.normal(size=3), rng.normal(size=3)) for _ in range(3)]
    a = (g[0] @ g[1]) @ g[2]
    b = g[0] @ (g[1] @ g[2])
    assert np.allclose(a.h.theta, b.h.theta, atol=1e-12) and np.allclose(a.x, b.x, atol=1e-12)
    e = g[0] @ g[0].inv()
    assert np.allclose(e.h.theta, 0, atol=1e-12) and np.allclose(e.x, 0, atol=1e-12)


def test_rep_apply_identity_inverse_unitarity(w2):
    f = make_test_signal(TestSignalSpec(seed=1), ORTH2, w2.grid)
    ident = GroupPoint.make(ORTH2, [0.0, 0.0])
    assert np.allclose(rep_apply(ident, f).values, f.values)
    g = GroupPoint.make(ORTH2, [0.3, -0.2], [0.4, 0.1])  # not lattice aligned
    back = rep_apply(g.inv(), rep_apply(g, f))
    assert np.max(np.abs(back.values - f.values)) < 1e-8 * np.abs(f.values).max()
    aligned = GroupPoint.make(ORTH2, np.array([4, -2]) * w2.grid.step, [0.4, 0.1])
    assert rep_apply(aligned, f).norm() == pytest.approx(f.norm(), rel=1e-10)
    # off-lattice dilation through the closed-form source is unitary up to quadrature
    assert rep_apply(g, f).norm() == pytest.approx(f.norm(), rel=1e-5)
    with pytest.raises(TransformError):
        rep_apply(GroupPoint.make(ORTH2, [3.0, 0.0]), f)


def test_rep_apply_translation_is_circular_shift():
    grid = SpatialGrid.centered([4.0], [0.25])
    rng = np.random.default_rng(2)
    s = SampledSignal(grid, rng.normal(size=grid.shape) + 0j)
    g = GroupPoint.make(ORTH1, [0.0], [0.75])
    out = rep_apply(g, s)
    assert np.allclose(out.values, np.roll(s.values, 3), atol=1e-12)


def test_analyze_examples(w1):
    psi = w1.psi_hat
    F = analyze(psi, w1)
    j0 = int(np.argmin(np.abs(F.hs.theta[:, 0])))
    val = F.evaluate(j0, np.zeros((1, 1)))[0]
    assert val == pytest.approx(psi.norm() ** 2, rel=1e-12)
    # spectrum disjoint from every sampled dilate -> zero coefficients
    far = Spectrum(w1.grid, np.where(w1.grid.u[:, 0] > 1.9, 1.0, 0.0))
    hs = HSamples(ORTH1, [0.125], [[8], [9], [10]])  # h = e^1..: dilates centred near e^-1
    G = analyze(far, w1, hs)
    assert np.all(G.spec == 0)
    assert G.report["uncovered_fraction"] == pytest.approx(1.0)


@pytest.mark.parametrize("fixture,cone", [("w1", ORTH1), ("w2", ORTH2)])
def test_covariance_lattice_aligned(fixture, cone, request):
    W = request.getfixturevalue(fixture)
    f = make_test_signal(TestSignalSpec(seed=3), cone, W.grid)
    F = analyze(f, W)
    th0 = np.array([3, -5][: cone.n]) * W.grid.step
    g0 = GroupPoint.make(cone, th0, np.array([0.3, -0.7][: cone.n]))
    F2 = analyze(rep_apply(g0, f), W, F.hs)
    rng = np.random.default_rng(4)
    for j in rng.integers(0, len(F.hs), 10):
        x = rng.uniform(-2, 2, size=(5, cone.n))
        lhs = F2.evaluate(j, x)
        pts = [g0.inv() @ GroupPoint.make(cone, F.hs.theta[j], xx) for xx in x]
        rhs = voice_at(f, W, np.array([p.h.theta for p in pts]), np.array([p.x for p in pts]))
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_covariance_spd2(wspd):
    f = make_test_signal(TestSignalSpec(seed=3, n_bumps=1), SPD2, wspd.grid)
    hs = HSamples(SPD2, [0.25] * 3, [[0, 0, 0], [1, -1, 0], [-1, 2, 1]])
    st = wspd.grid.step
    g0 = GroupPoint.make(SPD2, [2 * st[0], 0.0, -3 * st[2]], [0.2, -0.1, 0.3])
    F2 = analyze(rep_apply(g0, f), wspd, hs)
    x = np.random.default_rng(5).uniform(-1, 1, size=(4, 3))
    for j in range(len(hs)):
        pts = [g0.inv() @ GroupPoint.make(SPD2, hs.theta[j], xx) for xx in x]
        rhs = voice_at(f, wspd, np.array([p.h.theta for p in pts]), np.array([p.x for p in pts]))
        assert np.max(np.abs(F2.evaluate(j, x) - rhs)) < 1e-12


def test_coverage_close_to_one(w2):
    f = make_test_signal(TestSignalSpec(seed=0), ORTH2, w2.grid).compact()
    F = analyze(f, w2)
    c = coverage(w2, F.hs, f.grid.xi)
    assert np.max(np.abs(c - 1)) < 1e-4


def test_synthesize_examples(w1):
    f = make_test_signal(TestSignalSpec(seed=2), ORTH1, w1.grid)
    F = analyze(f, w1)
    zero = CoefficientField(F.hs, F.grid, np.zeros_like(F.spec))
    assert np.all(synthesize(zero, w1).values == 0)
    rec = synthesize(F, w1)
    fc = f.compact()
    err = np.sqrt(np.sum(fc.grid.weights * np.abs(rec.values - fc.values) ** 2)) / fc.norm()
    assert err < 1e-2
    # single unit coefficient at (h0, x0) with weight 1 -> pi(h0, x0) psi
    hs = HSamples(ORTH1, [0.125], [[2]])
    C = CoefficientField(hs, x=np.array([[0.4]]), hidx=np.array([0]), values=np.array([1.0 + 0j]),
                         weights=np.array([1.0]))
    wide = node_grid(ORTH1, 2.5)
    out = synthesize(C, w1, wide)
    ref = rep_apply(GroupPoint.make(ORTH1, hs.theta[0], [0.4]), Spectrum.from_function(wide, w1.psi))
    assert np.allclose(out.values, ref.values, atol=1e-14)


@pytest.mark.parametrize("fixture,cone", [("w1", ORTH1), ("w2", ORTH2)])
def test_reproducing_formula(fixture, cone, request):
    W = request.getfixturevalue(fixture)
    f = make_test_signal(TestSignalSpec(seed=5), cone, W.grid)
    F = analyze(f, W)
    R = group_convolve(F, voice_field(W.psi_hat, W))
    ax = np.linspace(-3, 3, 9)
    P = np.stack(np.meshgrid(*([ax] * cone.n), indexing="ij"), -1).reshape(-1, cone.n)
    A, B = F.evaluate_all(P), R.evaluate_all(P)
    assert np.abs(A - B).max() / np.abs(A).max() < 5e-3
    zero = CoefficientField(F.hs, F.grid, np.zeros_like(F.spec))
    assert np.all(group_convolve(zero, voice_field(W.psi_hat, W)).spec == 0)
    with pytest.raises(TransformError, match="incompatible"):
        group_convolve(F, F.__class__(F.hs, F.grid, F.spec))


@pytest.mark.parametrize("fixture", ["w1", "w2", "wspd"])
def test_rep_derivative(fixture, request):
    W = request.getfixturevalue(fixture)
    cone = W.cone
    n = cone.n
    zero = rep_derivative(np.zeros(n), np.zeros(n), W.psi_hat)
    assert np.all(zero.values == 0)
    X = np.zeros(n)
    X[0] = 1.0
    tr = rep_derivative(np.zeros(n), X, W.psi_hat)
    assert np.allclose(tr.values, -2j * np.pi * W.grid.xi[:, 0] * W.psi_hat.values)
    d = np.array([0.3, -0.2, 0.5][:n])
    x = np.array([0.1, 0.4, -0.3][:n])
    D = rep_derivative(d, x, W.psi_hat)
    D2 = rep_derivative(2 * d, 2 * x, W.psi_hat)
    assert np.allclose(D2.values, 2 * D.values)

    def fd_err(t):
        p = rep_apply(group_exp(cone, d, x, t), W.psi_hat)
        m = rep_apply(group_exp(cone, d, x, -t), W.psi_hat)
        diff = (p.values - m.values) / (2 * t) - D.values
        return np.sqrt(np.sum(W.grid.weights * np.abs(diff) ** 2)) / D.norm()

    assert fd_err(1e-4) < 1e-6
    ratio = fd_err(1e-2) / fd_err(5e-3)
    assert 3.5 < ratio < 4.5
    with pytest.raises(TransformError):
        rep_derivative(np.zeros(n + 1), x, W.psi_hat)


@pytest.mark.parametrize("fixture", ["w1", "w2", "wspd"])
def test_growth_bounds(fixture, request):
    W = request.getfixturevalue(fixture)
    cone = W.cone
    xi = W.grid.xi
    vals = np.abs(W.psi_hat.values)
    det = cone.determinant(xi)
    for k in range(3):
        for m in range(3):
            bound = np.max(vals * (1 + np.linalg.norm(xi, axis=1)) ** k / det ** m)
            assert np.isfinite(bound)


def test_point_group_convolution_single_point(w1):
    f = make_test_signal(TestSignalSpec(seed=6), ORTH1, w1.grid)
    hs = HSamples(ORTH1, [0.125], [[1], [3]])
    F = CoefficientField(hs, x=np.array([[0.2], [0.0]]), hidx=np.array([0, 1]),
                         values=np.array([2.0 + 1j, 0.0]), weights=np.array([0.5, 0.7]))
    G = voice_field(f, w1)
    out = group_convolve(F, G)
    g0 = GroupPoint.make(ORTH1, hs.theta[0], [0.2])
    for i in range(2):
        gi = g0.inv() @ GroupPoint.make(ORTH1, hs.theta[F.hidx[i]], F.x[i])
        ref = 0.5 * (2.0 + 1j) * voice_at(f, w1, gi.h.theta[None], gi.x[None])[0]
        assert out.values[i] == pytest.approx(ref, rel=1e-12)

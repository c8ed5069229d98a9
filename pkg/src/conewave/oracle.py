"""Independent reference computations and seeded test signals.

The references here deliberately avoid the evaluation paths of the modules
they check; they share only the cone primitives.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cone import ConeModel, from_matrix, to_matrix
from .spectral import NodeGrid, Spectrum, node_grid, ramp, ramp_deriv


class OracleError(RuntimeError):
    pass


# -------------------------------------------------------------- test signals


@dataclass(frozen=True)
class TestSignalSpec:
    """Recipe for a seeded sum of translated ramp bumps in frequency.

    Parameters
    ----------
    seed : int
    n_bumps : int
    radius : float
        Metric radius of the frequency region around ``center``.
    center : tuple, optional
        Region centre (default ``e``).
    margin : float
        Required metric clearance between the region and the edge of the
        node grid.
    amplitude : (float, float)
        Range of bump amplitudes (moduli); phases are uniform.
    bump_radius : (float, float)
        Range of bump radii.
    shift : float
        Half-width of the box from which spatial translations are drawn.
    """

    __test__ = False  # not a pytest class

    seed: int = 0
    n_bumps: int = 3
    radius: float = 0.6
    center: tuple | None = None
    margin: float = 0.2
    amplitude: tuple = (0.5, 1.5)
    bump_radius: tuple = (0.25, 0.4)
    shift: float = 1.0


class BumpSpectrum:
    """Closed-form spectrum ``sum_b a_b ramp(d(xi, y_b); 0, rho_b) e^{-2 pi i <x_b, xi>}``."""

    def __init__(self, cone, centers, radii, amps, shifts, sharpness=1.0):
        self.cone = cone
        self.centers = np.asarray(centers, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        self.amps = np.asarray(amps, dtype=complex)
        self.shifts = np.asarray(shifts, dtype=float)
        self.sharpness = sharpness
        # h_b with h_b e = y_b, so d(xi, y_b) = d(h_b^-1 xi, e)
        self._inv = cone.inverse(cone.chart(self.centers))

    def _terms(self, xi):
        xi = np.asarray(xi, dtype=float)
        ok = self.cone.contains(xi)
        for b in range(len(self.radii)):
            safe = np.where(ok[..., None], xi, self.cone.e)
            z = np.where(ok[..., None], self.cone.act(self._inv[b], safe), self.cone.e)
            d = self.cone.distance_to_e(z)
            yield b, ok, z, d

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1], dtype=complex)
        for b, ok, z, d in self._terms(xi):
            val = ramp(d, 0.0, self.radii[b], self.sharpness)
            out += np.where(ok, self.amps[b] * val * np.exp(-2j * np.pi * (xi @ self.shifts[b])), 0.0)
        return out

    def grad(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape, dtype=complex)
        for b, ok, z, d in self._terms(xi):
            val = ramp(d, 0.0, self.radii[b], self.sharpness)
            dr = ramp_deriv(d, 0.0, self.radii[b], self.sharpness)
            # chain rule through z = h_b^-1 xi (linear map M): grad = M^T grad_z
            gz = self.cone.distance_to_e_grad(z)
            M = self.cone.linear_map(self._inv[b])
            gx = gz @ M
            phase = np.exp(-2j * np.pi * (xi @ self.shifts[b]))
            term = self.amps[b] * phase[..., None] * (dr[..., None] * gx - 2j * np.pi * val[..., None] * self.shifts[b])
            out += np.where(ok[..., None], term, 0.0)
        return out


def _random_ball_point(cone, rng, radius):
    """Point z with d(z, e) = radius * U^(1/n) in a uniformly random direction."""
    r = radius * rng.uniform() ** (1.0 / cone.n)
    v = rng.normal(size=cone.n)
    v *= r / np.linalg.norm(v)
    if cone.kind == "orthant":
        return np.exp(v)
    w, U = np.linalg.eigh(to_matrix(v))
    return from_matrix(U @ np.diag(np.exp(w)) @ U.T)


def make_test_signal(spec: TestSignalSpec, cone: ConeModel, grid: NodeGrid | None = None,
                     sharpness=1.0) -> Spectrum:
    """Seeded bandlimited test signal on ``grid`` (default: preset grid of B_2(e)).

    Raises
    ------
    OracleError
        If the region plus margin is not contained in the node grid.
    """
    grid = node_grid(cone, 2.0) if grid is None else grid
    center = cone.e if spec.center is None else np.asarray(spec.center, dtype=float)
    if spec.radius <= 0 or spec.margin < 0:
        raise OracleError("radius must be positive and margin nonnegative")
    if not np.all(cone.contains(center)):
        raise OracleError("region centre outside the cone")
    need = NodeGrid.ball(cone, grid.step, spec.radius + spec.margin, center)
    if np.any(grid.positions(need.idx) < 0):
        raise OracleError("test-signal region violates the margin to the grid edge")
    rng = np.random.default_rng(spec.seed)
    hc = cone.chart(center)
    centers, radii, amps, shifts = [], [], [], []
    for _ in range(spec.n_bumps):
        rho = rng.uniform(*spec.bump_radius)
        rho = min(rho, spec.radius)
        z = _random_ball_point(cone, rng, spec.radius - rho)
        centers.append(cone.act(hc, z))
        radii.append(rho)
        amps.append(rng.uniform(*spec.amplitude) * np.exp(2j * np.pi * rng.uniform()))
        shifts.append(rng.uniform(-spec.shift, spec.shift, size=cone.n))
    src = BumpSpectrum(cone, centers, radii, amps, shifts, sharpness)
    return Spectrum.from_function(grid, src)


# -------------------------------------------------------- Haar-adjoint constant


def _cone_inverse(cone, x):
    """x -> x^-1 in the Jordan sense (an isometry of the metric fixing e)."""
    x = np.asarray(x, dtype=float)
    if cone.kind == "orthant":
        return 1.0 / x
    return from_matrix(np.linalg.inv(to_matrix(x)))


def random_bumps(cone: ConeModel, count: int, seed=0, radius=1.2):
    """Smooth compactly supported functions on the cone for Haar checks.

    Each is ``ramp(d(x, y); 0, rho)`` times a linear weight, with ``y`` drawn
    off-centre so that inversion moves it.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        rho = rng.uniform(0.4, 0.7)
        y = _random_ball_point(cone, rng, radius - rho)
        c = rng.normal(size=cone.n)

        def fn(x, y=y, rho=rho, c=c):
            x = np.asarray(x, dtype=float)
            d = cone.metric_distance(x, np.broadcast_to(y, x.shape))
            return ramp(d, 0.0, rho) * (2.0 + np.tanh(x @ c))
        out.append(fn)
    return out


def _h_box(cone, radius, step):
    """Chart lattice covering every h with d(h e, e) < radius."""
    if cone.kind == "orthant":
        ax = np.arange(-np.ceil(radius / step), np.ceil(radius / step) + 1) * step
        axes = [ax] * cone.n
    else:
        # eigenvalues of L L^T lie in [e^-R, e^R]: |log a|, |log c| <= R/2, |b| <= e^{R/2}
        la = np.arange(-np.ceil(radius / 2 / step), np.ceil(radius / 2 / step) + 1) * step
        bmax = np.exp(radius / 2)
        bb = np.arange(-np.ceil(bmax / step), np.ceil(bmax / step) + 1) * step
        axes = [la, bb, la]
    th = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, cone.n)
    return th


def newhaar_ratios(cone: ConeModel, test_functions: Sequence, radius=2.0, step=0.02):
    """Ratios ``int_H F(h) dh / int_H F((h*)^-1) dh`` for ``F(h) = phi(h e)``.

    ``(h*)^-1 e = (h e)^-1``, so the second integral is that of
    ``phi(x^-1)``.  Each ``phi`` must vanish off B_radius(e).
    """
    if len(test_functions) < 3:
        raise OracleError("need at least three test functions")
    th = _h_box(cone, radius, step)
    x = cone.act(th, cone.e)
    w = cone.haar_weight(th)
    keep = cone.distance_to_e(x) < radius
    x, w = x[keep], w[keep]
    xinv = _cone_inverse(cone, x)
    ratios = []
    for phi in test_functions:
        a = np.sum(w * phi(x))
        b = np.sum(w * phi(xinv))
        if b == 0:
            raise OracleError("test function vanishes on the quadrature set")
        ratios.append(a / b)
    return np.array(ratios)


def newhaar_constant(cone: ConeModel, test_functions: Sequence, radius=2.0, step=0.02, spread=1e-3) -> float:
    """Mean Haar-adjoint constant; raises if the ratios disagree.

    Raises
    ------
    OracleError
        If the relative spread of the ratios exceeds ``spread``.
    """
    r = newhaar_ratios(cone, test_functions, radius, step)
    c = float(np.mean(r))
    rel = float((r.max() - r.min()) / abs(c))
    if rel > spread:
        raise OracleError(f"Haar-adjoint ratios spread {rel:.2e} exceeds {spread:.0e}")
    return c


# ------------------------------------------------------ classical 1-D Besov


def _classical_profile(t, sharpness=1.0):
    """``S((2 - |log t|) / 1.5)``, ``S(u) = f(u) / (f(u) + f(1-u))``, ``f(u) = e^{-k/u}``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    pos = t > 0
    u = (2.0 - np.abs(np.log(t[pos]))) / 1.5
    val = np.zeros(u.shape)
    val[u >= 1] = 1.0
    mid = (u > 0) & (u < 1)
    um = u[mid]
    fa = np.exp(-sharpness / um)
    fb = np.exp(-sharpness / (1.0 - um))
    val[mid] = fa / (fa + fb)
    out[pos] = val
    return out


def classical_besov_1d(fhat, p, q, s, log_scales, log_step, xi=None, xi_weights=None, box=None,
                       sharpness=1.0) -> float:
    """Continuous Besov norm on the half line by a scalar dilation loop.

    ``(sum_j dlog a ||f * psi_{a_j}||_p^q a_j^{-s})^(1/q)`` with
    ``psi_a^(xi) = profile(xi / a)``.

    Parameters
    ----------
    fhat : callable
        Spectrum on the positive half line.
    log_scales : array
        ``log a_j`` (the shared H nodes; Haar measure is ``da / a``).
    xi, xi_weights : arrays
        Frequency nodes and weights for p = 2 (Plancherel).
    box : (freqs, period_count)
        For p != 2: regular frequencies with spacing ``d`` and the number
        ``N`` of spatial samples ``x_k = k / (N d)`` over one period.
    """
    log_scales = np.asarray(log_scales, dtype=float).reshape(-1)
    total = 0.0
    if p == 2:
        xi = np.asarray(xi, dtype=float).reshape(-1)
        fv = np.asarray(fhat(xi[:, None]), dtype=complex)
        for la in log_scales:
            a = np.exp(la)
            band = fv * _classical_profile(xi / a, sharpness)
            lp = np.sqrt(np.sum(np.asarray(xi_weights) * np.abs(band) ** 2))
            total += log_step * lp ** q * a ** (-s)
        return float(total ** (1.0 / q))
    freqs, N = box
    freqs = np.asarray(freqs, dtype=float)
    d = freqs[1] - freqs[0]
    fv = np.zeros(len(freqs), dtype=complex)
    pos = freqs > 0
    fv[pos] = fhat(freqs[pos][:, None])
    k = np.arange(N)
    # explicit DFT matrix; |F| does not see the phase of the box origin
    E = np.exp(-2j * np.pi * np.outer(k, np.arange(len(freqs))) / N)
    for la in log_scales:
        a = np.exp(la)
        band = fv * _classical_profile(freqs / a, sharpness)
        F = d * (E @ band)
        lp = (np.sum(np.abs(F) ** p) / (N * d)) ** (1.0 / p)
        total += log_step * lp ** q * a ** (-s)
    return float(total ** (1.0 / q))


# --------------------------------------------------- brute-force convolution


def direct_voice(cone: ConeModel, g: Spectrum, psi, theta, x):
    """``W_psi g(h, x) = sqrt(det h) sum_m w_m g^_m psi^(h* xi_m) e^{2 pi i x.xi_m}`` point by point."""
    theta = np.asarray(theta, dtype=float).reshape(-1, cone.n)
    x = np.asarray(x, dtype=float).reshape(-1, cone.n)
    xi, w = g.grid.xi, g.grid.weights * g.values
    out = np.empty(len(theta), dtype=complex)
    for i in range(len(theta)):
        ps = psi(cone.adjoint_act(theta[i], xi))
        out[i] = np.sqrt(cone.det_action(theta[i])) * np.sum(w * ps * np.exp(2j * np.pi * (xi @ x[i])))
    return out


def bruteforce_group_convolution(F, G, budget=1000):
    """``(F * G)(g_o) = sum_i w_i F(g_i) G(g_i^-1 g_o)`` by explicit double loop.

    Parameters
    ----------
    F : CoefficientField
        Point-sampled field with weights.
    G : CoefficientField with ``source = (g, W)``, or callable ``(theta, x) -> values``.

    Returns
    -------
    CoefficientField at the points of F.
    """
    from .transform import CoefficientField

    if F.weights is None or F.x is None:
        raise OracleError("F must be point-sampled with weights")
    N = len(F.x)
    if N > budget:
        raise OracleError(f"{N} points exceed the brute-force budget {budget}")
    cone = F.cone
    if callable(G):
        Gfn = G
    else:
        g, W = G.source

        def Gfn(theta, x):
            return direct_voice(cone, g, W.psi, theta, x)
    th = F.hs.theta[F.hidx]
    vals = F.point_values() if F.values is None else F.values
    out = np.zeros(N, dtype=complex)
    for o in range(N):
        acc = 0.0 + 0.0j
        k_th = np.empty((N, cone.n))
        k_x = np.empty((N, cone.n))
        for i in range(N):
            inv = cone.inverse(th[i])
            k_th[i] = cone.compose(inv, th[o])
            k_x[i] = cone.act(inv, F.x[o] - F.x[i])
        gv = Gfn(k_th, k_x)
        for i in range(N):
            acc += F.weights[i] * vals[i] * gv[i]
        out[o] = acc
    return CoefficientField(F.hs, x=F.x, hidx=F.hidx, values=out, weights=F.weights)


# ------------------------------------------------------ sequence-norm raster


def raster_sequence_norm(sd, params, sub=4, scale=0.5):
    """``||sum_i |lambda_i| 1_{g_i U}||`` in the weighted mixed norm on a fine grid.

    ``U`` is the chart box ``[-scale eps, scale eps]^n`` times the lattice
    box ``[-scale, scale]^n`` (``scale = 1/2``: the lattice cells, 1: the
    tent supports).  Each chart cell is sampled at ``sub^n`` midpoints with
    the Haar density and ``Det^s'`` evaluated there; the spatial integral is
    a midpoint rule with ``sub`` points per lattice step.
    """
    ws = sd.ws
    cone, n = ws.cone, ws.cone.n
    p, q = params.p, params.q
    t = (np.arange(sub) + 0.5) / sub - 0.5
    T = np.stack(np.meshgrid(*([t] * n), indexing="ij"), -1).reshape(-1, n) * ws.epsilon
    # rasterized function lives on the union of H-cells; find contributing levels per sub-point
    total = 0.0
    reach = int(np.ceil(scale - 0.5 + 1e-12))  # neighbouring levels whose boxes reach a cell
    offs = np.stack(np.meshgrid(*([np.arange(-reach, reach + 1)] * n), indexing="ij"), -1).reshape(-1, n)
    lam = np.abs(sd.values)
    for j in range(ws.n_levels):
        th = ws.hs.theta[j] + T
        wq = cone.haar_weight(th) * (ws.epsilon / sub) ** n * cone.det_action(th) ** params.s_prime
        for a, tp in enumerate(th):
            field_lp = _raster_level_lp(ws, lam, j, tp, offs, scale, sub, p)
            total += wq[a] * field_lp ** (q / p)
    return float(total ** (1.0 / q))


def _raster_level_lp(ws, lam, j, theta, offs, scale, sub, p):
    """``int_V |sum_i |lambda_i| 1_{g_i U}(theta, x)|^p dx`` on a fine x-grid."""
    n = ws.cone.n
    levels = []
    for o in offs:
        jj = ws.level_of(ws.hs.idx[j] + o)[0]
        if jj >= 0 and np.all(np.abs(theta - ws.hs.theta[jj]) <= scale * ws.epsilon + 1e-12):
            levels.append(jj)
    if not levels:
        return 0.0
    # fine x-grid in the lattice coordinates of level j
    A = ws.A[j]
    h = 1.0 / sub
    axes = [np.arange(lo - 1, hi + 1, h) + h / 2 for lo, hi in zip(ws.kmin[j], ws.kmax[j])]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    X = U @ A.T
    acc = np.zeros(len(X))
    for jj in levels:
        u = X @ np.linalg.inv(ws.A[jj]).T
        base = np.floor(u + scale).astype(np.int64)
        span = int(np.ceil(2 * scale))
        for d in itertools.product(range(-span, 1), repeat=n):
            k = base + np.array(d)
            inside = np.all((k >= ws.kmin[jj]) & (k <= ws.kmax[jj]) & (np.abs(u - k) <= scale), axis=1)
            flat = np.ravel_multi_index(tuple((k[inside] - ws.kmin[jj]).T), ws.level_shape(jj))
            acc[inside] += lam[ws.offsets[jj] + flat]
    dx = abs(np.linalg.det(A)) * h ** n
    return float(np.sum(acc ** p) * dx)

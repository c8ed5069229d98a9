"""Cone wavelets, the quasi-regular representation and the voice transform.

Conventions
-----------
Fourier transform ``f^(xi) = int f(x) exp(-2 pi i <x, xi>) dx``.  The group
``G = H x| V`` acts by

    (pi(h, x) f)^(xi) = sqrt(det h) exp(-2 pi i <x, xi>) f^(h* xi),

where ``det h`` is the determinant of h as a linear map on V.  The voice
transform is ``W_psi f(g) = <f, pi(g) psi>`` and left Haar measure on G is
``dx dh / det h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from . import kernels
from .cone import ConeModel, HElement
from .spectral import NodeGrid, SampledSignal, Spectrum, node_grid, ramp, ramp_deriv

INNER_RADIUS = 0.5
OUTER_RADIUS = 2.0


class TransformError(RuntimeError):
    """Raised when a transform precondition fails (support, grid, sizes)."""


# ---------------------------------------------------------------- group G


@dataclass(frozen=True)
class GroupPoint:
    """An element ``(h, x)`` of ``G = H x| V``."""

    h: HElement
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.shape != (self.h.cone.n,):
            raise ValueError("translation has wrong dimension")
        object.__setattr__(self, "x", x)

    @classmethod
    def make(cls, cone, theta, x=None):
        return cls(HElement(cone, theta), np.zeros(cone.n) if x is None else x)

    @property
    def cone(self):
        return self.h.cone

    def __matmul__(self, other: "GroupPoint") -> "GroupPoint":
        return GroupPoint(self.h @ other.h, self.h.act(other.x) + self.x)

    def inv(self) -> "GroupPoint":
        hi = self.h.inv()
        return GroupPoint(hi, -hi.act(self.x))


def group_exp(cone, direction, translation, t):
    """``exp(t (A, X))`` in G for ``A`` in the Lie algebra of H (chart tangent)."""
    A = cone.algebra_map(direction)
    n = cone.n
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = translation
    E = expm(t * M)
    return GroupPoint(HElement(cone, cone.exp_algebra(direction, t)), E[:n, n])


# ------------------------------------------------------------------ wavelet


class _Profile:
    """Radial ramp ``ramp(d(xi, e))``; callable with a gradient."""

    def __init__(self, cone, sharpness, scale=1.0):
        self.cone = cone
        self.sharpness = sharpness
        self.scale = scale

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1])
        ok = self.cone.contains(xi)
        d = self.cone.distance_to_e(xi[ok])
        out[ok] = self.scale * ramp(d, INNER_RADIUS, OUTER_RADIUS, self.sharpness)
        return out

    def grad(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape)
        ok = self.cone.contains(xi)
        d = self.cone.distance_to_e(xi[ok])
        dr = ramp_deriv(d, INNER_RADIUS, OUTER_RADIUS, self.sharpness)
        out[ok] = self.scale * dr[:, None] * self.cone.distance_to_e_grad(xi[ok])
        return out


def default_h_step(cone, refine=1):
    """Preset spacing of H-sample lattices in chart coordinates."""
    if cone.kind == "orthant":
        return np.full(cone.n, 0.125 / refine)
    return np.array([0.25, 0.25, 0.25]) / refine


def _quad_step(cone):
    # admissibility quadrature spacing in chart coordinates
    if cone.kind == "orthant":
        return np.full(cone.n, 1.0 / 32 if cone.n <= 2 else 1.0 / 16)
    return np.array([0.05, 0.05, 0.05])


def admissibility_constant(cone, psi_hat, step=None):
    """``int_H |psi^(h* e)|^2 dh`` by a uniform chart lattice with Haar weights.

    Parameters
    ----------
    cone : ConeModel
    psi_hat : callable
        Spectrum as a function of cone points.
    step : array_like, optional
        Lattice spacing in chart coordinates.
    """
    step = np.broadcast_to(np.asarray(_quad_step(cone) if step is None else step, dtype=float), (cone.n,))
    theta = _chart_box(cone, OUTER_RADIUS + 0.1, step)
    vals = np.abs(psi_hat(cone.adjoint_act(theta, cone.e))) ** 2
    return float(np.sum(vals * cone.haar_weight(theta)) * np.prod(step))


def _chart_box(cone, radius, step):
    """Chart lattice points covering {h : d(h* e, e) < radius}."""
    if cone.kind == "orthant":
        ext = np.full(cone.n, radius)
        lo, hi = -ext, ext
    else:
        # h* e = L^T L has eigenvalues in [e^-R, e^R]: |log a|, |log c| <= R/2,
        # and |b| <= sqrt(e^R)
        a = radius / np.sqrt(2.0)
        bmax = np.exp(radius / 2.0)
        lo, hi = np.array([-a, -bmax, -a]), np.array([a, bmax, a])
    axes = [np.arange(np.floor(u / s), np.ceil(v / s) + 1) * s for u, v, s in zip(lo, hi, step)]
    th = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, cone.n)
    d = cone.distance_to_e(cone.adjoint_act(th, cone.e))
    return th[d < radius]


@dataclass(eq=False)
class WaveletSystem:
    """Admissible cone wavelet.

    Attributes
    ----------
    profile : callable
        Unnormalized ramp, 1 on B_{1/2}(e) and 0 off B_2(e).
    psi : callable
        Normalized analyzing vector ``profile / sqrt(raw_constant)``.
    psi_hat : Spectrum
        ``psi`` sampled on the node grid.
    raw_constant : float
        Admissibility integral of ``profile``.
    admissibility_constant : float
        Admissibility integral of ``psi`` (1 up to quadrature rounding).
    """

    cone: ConeModel
    grid: NodeGrid
    sharpness: float
    profile: _Profile
    psi: _Profile
    psi_hat: Spectrum
    raw_constant: float
    admissibility_constant: float
    refined_constant: float
    inner_radius: float = INNER_RADIUS
    outer_radius: float = OUTER_RADIUS


def make_wavelet(cone, freq_grid: Optional[NodeGrid] = None, sharpness=1.0, quad_step=None) -> WaveletSystem:
    """Build and normalize the ramp wavelet on ``freq_grid``.

    Raises
    ------
    TransformError
        If the grid has fewer than 8 samples across B_{1/2}(e) on some chart
        axis or does not contain all lattice nodes of B_2(e).
    """
    if sharpness <= 0:
        raise TransformError("sharpness must be positive")
    grid = node_grid(cone, OUTER_RADIUS) if freq_grid is None else freq_grid
    _check_resolves(cone, grid)
    profile = _Profile(cone, sharpness)
    step = _quad_step(cone) if quad_step is None else np.broadcast_to(quad_step, (cone.n,))
    raw = admissibility_constant(cone, profile, step)
    raw_half = admissibility_constant(cone, profile, np.asarray(step) / 2)
    if abs(raw - raw_half) > 1e-6 * raw:
        raise TransformError(f"admissibility quadrature not converged ({raw} vs {raw_half})")
    psi = _Profile(cone, sharpness, scale=1.0 / np.sqrt(raw))
    c1 = admissibility_constant(cone, psi, step)
    c2 = admissibility_constant(cone, psi, np.asarray(step) / 2)
    return WaveletSystem(cone, grid, sharpness, profile, psi, Spectrum.from_function(grid, psi), raw, c1, c2)


def _check_resolves(cone, grid):
    inner = NodeGrid.ball(cone, grid.step, INNER_RADIUS)
    span = inner.idx.max(0) - inner.idx.min(0) + 1
    if np.any(span < 8):
        raise TransformError(f"frequency grid too coarse: {span.min()} samples across B_1/2(e)")
    outer = NodeGrid.ball(cone, grid.step, OUTER_RADIUS)
    if np.any(grid.positions(outer.idx) < 0):
        raise TransformError("ball B_2(e) exits the frequency grid")


# --------------------------------------------------------------- H samples


@dataclass(eq=False)
class HSamples:
    """Sample points of H on a chart lattice with Haar quadrature weights."""

    cone: ConeModel
    step: np.ndarray
    idx: np.ndarray
    theta: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.step = np.broadcast_to(np.asarray(self.step, dtype=float), (self.cone.n,)).copy()
        self.idx = np.asarray(self.idx, dtype=np.int64).reshape(-1, self.cone.n)
        self.theta = self.idx * self.step
        self.weights = self.cone.haar_weight(self.theta) * np.prod(self.step)

    def __len__(self):
        return len(self.idx)

    @property
    def det(self):
        return self.cone.det_action(self.theta)


def support_h_samples(cone, xi, step=None, outer=OUTER_RADIUS, budget=200000) -> HSamples:
    """Chart-lattice h with ``d(h* xi_m, e) < outer`` for some given node.

    Found by flood fill from the lattice points nearest to each node's
    dilation centre, so the set is exact for the lattice (no cutoff box).
    """
    step = np.broadcast_to(np.asarray(default_h_step(cone) if step is None else step, dtype=float), (cone.n,))
    xi = np.asarray(xi, dtype=float).reshape(-1, cone.n)
    if len(xi) == 0:
        return HSamples(cone, step, np.zeros((0, cone.n)))
    # h with h* xi = e  <=>  (h*)^-1 e = xi, i.e. h* = chart(xi)^*^-1
    centres = _adjoint_centres(cone, xi)
    seeds = np.unique(np.rint(centres / step).astype(np.int64), axis=0)
    nbrs = _neighbour_offsets(cone.n)
    seen = {tuple(k) for k in seeds}
    frontier = seeds
    accepted = []
    while len(frontier):
        th = frontier * step
        ok = _near_any(cone, th, xi, outer)
        good = frontier[ok]
        accepted.append(good)
        if sum(len(a) for a in accepted) > budget:
            raise TransformError("H sample budget exceeded")
        cand = (good[:, None, :] + nbrs[None]).reshape(-1, cone.n)
        new = []
        for k in map(tuple, np.unique(cand, axis=0)):
            if k not in seen:
                seen.add(k)
                new.append(k)
        frontier = np.array(new, dtype=np.int64).reshape(-1, cone.n)
    idx = np.concatenate(accepted)
    idx = idx[np.lexsort(idx.T[::-1])]
    return HSamples(cone, step, idx)


def _adjoint_centres(cone, xi):
    """theta of the h with h* xi = e."""
    if cone.kind == "orthant":
        return -np.log(xi)
    # h* = L^T with L^T X L = I  <=>  L = chol-type factor of X^-1 in lower form
    from .cone import from_matrix, to_matrix

    X = to_matrix(xi)
    Xi = np.linalg.inv(X)
    # want L lower with L L^T = X^-1, so that L^T X L = I
    return cone.chart(from_matrix(Xi))


def _near_any(cone, theta, xi, outer, chunk=4000000):
    ok = np.zeros(len(theta), dtype=bool)
    step = max(1, chunk // max(1, len(xi)))
    for lo in range(0, len(theta), step):
        th = theta[lo:lo + step]
        y = cone.adjoint_act(th[:, None, :], xi[None, :, :])
        d = cone.distance_to_e(y)
        ok[lo:lo + step] = np.any(d < outer, axis=1)
    return ok


def _neighbour_offsets(n):
    g = np.stack(np.meshgrid(*([np.arange(-1, 2)] * n), indexing="ij"), -1).reshape(-1, n)
    return g[np.any(g != 0, axis=1)]


def coverage(W: WaveletSystem, hs: HSamples, xi):
    """Discrete admissibility ``c(xi) = sum_j w_j |psi^(h_j* xi)|^2`` per node."""
    xi = np.asarray(xi, dtype=float).reshape(-1, W.cone.n)
    out = np.zeros(len(xi))
    step = max(1, 2000000 // max(1, len(xi)))
    for lo in range(0, len(hs), step):
        th = hs.theta[lo:lo + step]
        vals = W.psi(W.cone.adjoint_act(th[:, None, :], xi[None])) ** 2
        out += hs.weights[lo:lo + step] @ vals
    return out


# --------------------------------------------------------- coefficient fields


@dataclass(eq=False)
class CoefficientField:
    """Wavelet coefficients, either spectral per H-sample or point-sampled.

    Spectral form: ``spec[j, m]`` is the spectrum of ``x -> F(h_j, x)`` at the
    nodes of ``grid``, so ``F(h_j, x) = sum_m w_m spec[j, m] e^{2 pi i x.xi_m}``.

    Point form: values ``F(g_i)`` at ``g_i = (h_{hidx[i]}, x[i])`` with
    left Haar quadrature weights ``weights[i]`` (``dx dh / det h``).

    ``source = (g, W)`` marks the field as ``W_psi g`` so it can be evaluated
    at arbitrary group points.
    """

    hs: HSamples
    grid: Optional[NodeGrid] = None
    spec: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    hidx: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    source: Optional[tuple] = None
    report: dict = field(default_factory=dict)

    @property
    def cone(self):
        return self.hs.cone

    @property
    def is_spectral(self):
        return self.spec is not None

    def evaluate(self, j, points):
        """``F(h_j, x)`` at spatial points (spectral form)."""
        if not self.is_spectral:
            raise TransformError("field is point-sampled")
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1]
        out = kernels.type2(points.reshape(-1, self.cone.n), self.grid.xi, self.grid.weights * self.spec[j])
        return out.reshape(shape)

    def evaluate_all(self, points):
        """``F(h_j, x_k)`` for every j and a shared point set; shape (J, K)."""
        points = np.asarray(points, dtype=float).reshape(-1, self.cone.n)
        return kernels.type2(points, self.grid.xi, self.spec * self.grid.weights)

    def at(self, theta, x):
        """Evaluate at arbitrary group points; needs ``source``."""
        if self.source is None:
            raise TransformError("field has no source; cannot evaluate off its samples")
        g, W = self.source
        return voice_at(g, W, theta, x)

    def point_values(self):
        """Values at the point samples (evaluating the spectral form if needed)."""
        if self.values is not None:
            return self.values
        out = np.empty(len(self.x), dtype=complex)
        for j in np.unique(self.hidx):
            sel = self.hidx == j
            out[sel] = self.evaluate(j, self.x[sel])
        return out


def voice_field(g: Spectrum, W: WaveletSystem) -> CoefficientField:
    """``W_psi g`` as an evaluate-anywhere field (no stored samples)."""
    hs = HSamples(g.cone, default_h_step(g.cone), np.zeros((0, g.cone.n)))
    return CoefficientField(hs, source=(g, W))


def voice_at(g: Spectrum, W: WaveletSystem, theta, x, chunk=2000000):
    """``W_psi g(h, x)`` at arbitrary points by direct node sums."""
    cone = g.cone
    theta = np.asarray(theta, dtype=float).reshape(-1, cone.n)
    x = np.asarray(x, dtype=float).reshape(-1, cone.n)
    gm = g.compact()
    xi, w = gm.grid.xi, gm.grid.weights * gm.values
    out = np.empty(len(theta), dtype=complex)
    step = max(1, chunk // max(1, len(xi)))
    for lo in range(0, len(theta), step):
        th = theta[lo:lo + step]
        ps = W.psi(cone.adjoint_act(th[:, None, :], xi[None]))
        ph = np.exp(2j * np.pi * (x[lo:lo + step] @ xi.T))
        out[lo:lo + step] = np.sqrt(cone.det_action(th)) * np.sum(w * ps * ph, axis=1)
    return out


# ----------------------------------------------------------- representation


def rep_apply(g: GroupPoint, f):
    """Apply ``pi(g)``.

    For a :class:`Spectrum` the result lives on the same node grid; when
    ``g.h`` is lattice-aligned for the grid the nodes are permuted exactly,
    otherwise the spectrum is evaluated at ``h* xi`` from its closed form or
    by chart-cubic interpolation.  A :class:`SampledSignal` is processed
    through its periodic DFT.
    """
    if isinstance(f, SampledSignal):
        return _rep_apply_sampled(g, f)
    cone = f.cone
    grid = f.grid
    theta = g.h.theta
    xi = grid.xi
    scale = np.sqrt(cone.det_action(theta)) * np.exp(-2j * np.pi * (xi @ g.x))
    shift = cone.node_shift(theta, grid.step)
    src = f.source
    if shift is not None:
        pos = grid.shifted_positions(shift)
        # nodes of f that no node maps onto have left the grid
        hit = np.zeros(grid.size, dtype=bool)
        hit[pos[pos >= 0]] = True
        if np.any(np.abs(f.values[~hit]) > 0):
            raise TransformError("dilated support exits the frequency box")
        vals = np.where(pos >= 0, f.values[np.maximum(pos, 0)], 0.0)
    else:
        _check_in_grid(f, theta)
        vals = f.at(cone.adjoint_act(theta, xi))
    new_src = None
    if src is not None:
        new_src = _Translated(cone, src, theta, g.x)
    return Spectrum(grid, scale * vals, new_src)


class _Translated:
    def __init__(self, cone, src, theta, x):
        self.cone, self.src, self.theta, self.x = cone, src, np.asarray(theta), np.asarray(x)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (np.sqrt(self.cone.det_action(self.theta)) * np.exp(-2j * np.pi * (xi @ self.x))
                * self.src(self.cone.adjoint_act(self.theta, xi)))


def _check_in_grid(f, theta):
    cone, grid = f.cone, f.grid
    sup = np.abs(f.values) > 0
    if not np.any(sup):
        return
    # support node xi_m is reached from (h*)^-1 xi_m, which must be a grid point
    inv = cone.inverse(theta)
    target = cone.adjoint_act(inv, grid.xi[sup])
    k = np.rint(cone.node_chart(target) / grid.step).astype(np.int64)
    if np.any(grid.positions(k) < 0):
        raise TransformError("dilated support exits the frequency box")


def _rep_apply_sampled(g, f: SampledSignal):
    from scipy import ndimage

    cone = g.cone
    fhat = f.to_frequency()
    xi = f.frequencies()
    theta = g.h.theta
    if np.allclose(theta, 0.0):
        vals = fhat
    else:
        # evaluate f^ at h* xi on the periodic frequency lattice
        target = cone.adjoint_act(theta, xi.reshape(-1, cone.n))
        dxi = 1.0 / (np.asarray(f.grid.shape) * np.asarray(f.grid.spacing))
        coords = (target / dxi).T
        shifted = np.fft.fftshift(fhat)
        centre = (np.asarray(f.grid.shape) // 2)[:, None]
        re = ndimage.map_coordinates(shifted.real, coords + centre, order=3, mode="constant")
        im = ndimage.map_coordinates(shifted.imag, coords + centre, order=3, mode="constant")
        vals = (re + 1j * im).reshape(fhat.shape)
    vals = np.sqrt(cone.det_action(theta)) * np.exp(-2j * np.pi * (xi @ g.x)) * vals
    return SampledSignal.from_frequency(f.grid, vals)


def rep_derivative(direction, translation, psi: Spectrum) -> Spectrum:
    """Derivative of ``t -> pi(exp(t (A, X))) psi`` at ``t = 0``.

    ``(1/2) tr(A) psi^ - 2 pi i <X, xi> psi^ + (A* xi) . grad psi^``.
    """
    cone = psi.cone
    direction = np.asarray(direction, dtype=float)
    translation = np.asarray(translation, dtype=float)
    if direction.shape != (cone.n,) or translation.shape != (cone.n,):
        raise TransformError(f"direction and translation must have length {cone.n}")
    A = cone.algebra_map(direction)
    xi = psi.grid.xi
    grad = psi.grad_at(xi)
    flow = xi @ A  # rows are A^T xi
    vals = (0.5 * np.trace(A) - 2j * np.pi * (xi @ translation)) * psi.values + np.sum(flow * grad, axis=1)
    return Spectrum(psi.grid, vals)


# ---------------------------------------------------------- analysis/synthesis


def analyze(f: Spectrum, W: WaveletSystem, h_samples: Optional[HSamples] = None, h_step=None) -> CoefficientField:
    """Voice transform ``W_psi f(h_j, .)`` in spectral form.

    The H-samples default to the support-exact set of the chart lattice.  The
    report carries the discrete admissibility range on supp f^ and the energy
    fraction of f^ that the samples fail to cover.
    """
    cone = f.cone
    fc = f.compact()
    if h_samples is None:
        h_samples = support_h_samples(cone, fc.grid.xi, h_step)
    hs = h_samples
    if fc.grid.size == 0:
        spec = np.zeros((len(hs), 0), dtype=complex)
        return CoefficientField(hs, fc.grid, spec, source=(f, W), report={"uncovered_fraction": 0.0})
    spec = np.empty((len(hs), fc.grid.size), dtype=complex)
    sq = np.sqrt(hs.det)
    step = max(1, 2000000 // fc.grid.size)
    for lo in range(0, len(hs), step):
        th = hs.theta[lo:lo + step]
        ps = W.psi(cone.adjoint_act(th[:, None, :], fc.grid.xi[None]))
        spec[lo:lo + step] = sq[lo:lo + step, None] * ps * fc.values[None]
    c = coverage(W, hs, fc.grid.xi)
    energy = fc.grid.weights * np.abs(fc.values) ** 2
    unc = float(np.sum(energy * np.clip(1.0 - c, 0.0, None)) / np.sum(energy))
    report = {"n_h": len(hs), "coverage_min": float(c.min()), "coverage_max": float(c.max()),
              "uncovered_fraction": unc}
    return CoefficientField(hs, fc.grid, spec, source=(f, W), report=report)


def synthesize(C: CoefficientField, W: WaveletSystem, grid: Optional[NodeGrid] = None) -> Spectrum:
    """Quadrature of ``f = int W(g) pi(g) psi dg``.

    Spectral fields integrate the V-part exactly; point fields use their
    weights.  The output lives on ``C.grid`` (spectral) or ``grid``
    (point form, default the wavelet grid).
    """
    cone = C.cone
    hs = C.hs
    if C.is_spectral:
        out = np.zeros(C.grid.size, dtype=complex)
        step = max(1, 2000000 // max(1, C.grid.size))
        for lo in range(0, len(hs), step):
            th = hs.theta[lo:lo + step]
            ps = W.psi(cone.adjoint_act(th[:, None, :], C.grid.xi[None]))
            coef = hs.weights[lo:lo + step] / np.sqrt(hs.det[lo:lo + step])
            out += np.sum(coef[:, None] * ps * C.spec[lo:lo + step], axis=0)
        return Spectrum(C.grid, out)
    if C.weights is None:
        raise TransformError("point field has no quadrature weights")
    grid = W.grid if grid is None else grid
    return Spectrum(grid, atoms_adjoint(W, hs.theta[C.hidx], C.x, C.weights * C.point_values(), grid))


def atoms_adjoint(W, theta, x, coef, grid, chunk=2000000):
    """Spectrum of ``sum_i coef_i pi(h_i, x_i) psi`` on ``grid`` nodes."""
    cone = W.cone
    theta = np.asarray(theta, dtype=float).reshape(-1, cone.n)
    out = np.zeros(grid.size, dtype=complex)
    step = max(1, chunk // max(1, grid.size))
    for lo in range(0, len(theta), step):
        th = theta[lo:lo + step]
        ps = W.psi(cone.adjoint_act(th[:, None, :], grid.xi[None]))
        amp = coef[lo:lo + step] * np.sqrt(cone.det_action(th))
        ph = np.exp(-2j * np.pi * (x[lo:lo + step] @ grid.xi.T))
        out += np.sum(amp[:, None] * ps * ph, axis=0)
    return out


def group_convolve(F: CoefficientField, G: CoefficientField) -> CoefficientField:
    """Group convolution ``F * G (g) = int F(k) G(k^-1 g) dk``.

    * spectral ``F`` and ``G = W_psi g``: the V-integral is exact,
      ``(F*G)_{h}^(xi) = sqrt(det h) psi^(h* xi) sum_j w_j det(h_j)^{-1/2}
      F^_j(xi) g^(h_j* xi)``.
    * point-sampled ``F``: ``sum_i w_i F(g_i) G(g_i^-1 g)`` at the points of
      ``F``, with ``G`` evaluated through its source.
    """
    if G.source is None:
        raise TransformError("incompatible sample sets: G must be evaluable at k^-1 g (needs a source)")
    g, W = G.source
    cone = F.cone
    hs = F.hs
    if F.is_spectral:
        xi = F.grid.xi
        acc = np.zeros(F.grid.size, dtype=complex)
        step = max(1, 2000000 // max(1, F.grid.size))
        for lo in range(0, len(hs), step):
            th = hs.theta[lo:lo + step]
            gv = g.at(cone.adjoint_act(th[:, None, :], xi[None]))
            coef = hs.weights[lo:lo + step] / np.sqrt(hs.det[lo:lo + step])
            acc += np.sum(coef[:, None] * F.spec[lo:lo + step] * gv, axis=0)
        out = np.empty_like(F.spec)
        sq = np.sqrt(hs.det)
        for lo in range(0, len(hs), step):
            th = hs.theta[lo:lo + step]
            ps = W.psi(cone.adjoint_act(th[:, None, :], xi[None]))
            out[lo:lo + step] = sq[lo:lo + step, None] * ps * acc[None]
        return CoefficientField(hs, F.grid, out)
    th_pts = hs.theta[F.hidx]
    vals = F.point_values()
    N = len(th_pts)
    # all pairs (i source, o target): k = h_i^-1 h_o, z = h_i^-1 (x_o - x_i)
    inv_i = cone.inverse(th_pts)
    K = cone.compose(inv_i[:, None, :], th_pts[None, :, :])
    Z = cone.act(inv_i[:, None, :], F.x[None, :, :] - F.x[:, None, :])
    Gv = voice_at(g, W, K.reshape(-1, cone.n), Z.reshape(-1, cone.n)).reshape(N, N)
    out_vals = (F.weights * vals) @ Gv
    return CoefficientField(hs, x=F.x, hidx=F.hidx, values=out_vals, weights=F.weights)

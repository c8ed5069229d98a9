"""Lattices on the cone, frequency partitions and Besov / mixed norms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cone import ConeModel
from .spectral import NodeGrid, Spectrum, ramp
from .transform import OUTER_RADIUS, CoefficientField, HSamples, TransformError, WaveletSystem, default_h_step


class BesovError(RuntimeError):
    pass


# -------------------------------------------------------------- parameters


@dataclass(frozen=True)
class BesovParams:
    """Besov exponents with the coorbit shift ``s' = s r / n - q / 2``."""

    p: float
    q: float
    s: float
    rank_ratio: float = 1.0  # r / n of the cone

    def __post_init__(self):
        if not (self.p >= 1 and self.q >= 1) or not (np.isfinite(self.p) and np.isfinite(self.q)):
            raise BesovError("p and q must be finite and >= 1")

    @classmethod
    def for_cone(cls, cone, p, q, s):
        return cls(float(p), float(q), float(s), cone.r / cone.n)

    @property
    def s_prime(self) -> float:
        return self.s * self.rank_ratio - self.q / 2.0


# ------------------------------------------------------------------ lattice


@dataclass(eq=False)
class ConeLattice:
    """A (delta, R)-lattice with its verification data."""

    cone: ConeModel
    points: np.ndarray
    delta: float
    R: float
    extent: float
    spacing: np.ndarray
    min_separation: float
    covering_radius: float


def _chart_spacing(cone, delta):
    scale = 2.0 * delta
    if cone.kind == "orthant":
        return np.full(cone.n, scale * max(1.0, min(1.2, 2.0 / np.sqrt(cone.r))))
    # node-chart layers (log a, b/a, log c)
    return scale * np.array([0.6, 0.9, 0.6])


def _lattice_points(cone, spacing, radius):
    """Chart-lattice points within metric distance ``radius`` of e."""
    if cone.kind == "orthant":
        k = int(np.ceil(radius / spacing[0])) + 1
        ax = np.arange(-k, k + 1) * spacing[0]
        u = np.stack(np.meshgrid(*([ax] * cone.n), indexing="ij"), -1).reshape(-1, cone.n)
        x = np.exp(u)
    else:
        ka = int(np.ceil(radius / spacing[0])) + 1
        al = np.arange(-ka, ka + 1) * spacing[0]
        pts = []
        for a in al:
            for g in al:
                kb = int(np.ceil(np.exp(radius / 2) / spacing[1])) + 1
                beta = np.arange(-kb, kb + 1) * spacing[1]
                u = np.stack([np.full_like(beta, a), beta, np.full_like(beta, g)], -1)
                pts.append(cone.node_point(u))
        x = np.concatenate(pts)
    d = cone.distance_to_e(x)
    keep = d <= radius + 1e-12
    order = np.lexsort(np.round(x[keep], 12).T[::-1])
    return x[keep][order]


def make_lattice(cone, delta=0.5, R=2.0, extent=2.0, grid: Optional[NodeGrid] = None, spacing=None) -> ConeLattice:
    """Build and verify a (delta, R)-lattice covering B_extent(e).

    Parameters
    ----------
    grid : NodeGrid, optional
        Working grid whose nodes within ``extent`` must be covered; default
        the preset node grid of B_extent(e).
    spacing : array, optional
        Chart spacing override (default tuned per cone).

    Raises
    ------
    BesovError
        On overlapping delta-balls or an uncovered node.
    """
    if delta <= 0 or R < 2:
        raise BesovError("need delta > 0 and R >= 2")
    spacing = _chart_spacing(cone, delta) if spacing is None else np.broadcast_to(
        np.asarray(spacing, dtype=float), (cone.n,)).copy()
    pts = _lattice_points(cone, spacing, extent + R * delta)
    if len(pts) > 1:
        D = cone.metric_distance(pts[:, None, :], pts[None, :, :])
        np.fill_diagonal(D, np.inf)
        sep = float(D.min())
        if sep < 2 * delta - 1e-12:
            i, j = np.unravel_index(np.argmin(D), D.shape)
            raise BesovError(f"overlapping balls at lattice points {i} and {j} (distance {sep})")
    else:
        sep = np.inf
    if grid is None:
        from .spectral import node_grid

        grid = node_grid(cone, max(extent, 1e-9))
    nodes = grid.xi[cone.distance_to_e(grid.xi) <= extent]
    if len(nodes):
        cov_all = _min_distance(cone, nodes, pts)
        cov = float(cov_all.max())
        if cov > R * delta:
            k = int(np.argmax(cov_all))
            raise BesovError(f"node {nodes[k]} not covered (distance {cov})")
    else:
        cov = 0.0
    return ConeLattice(cone, pts, delta, R, extent, spacing, sep, cov)


def _min_distance(cone, xi, pts, chunk=2000000):
    out = np.empty(len(xi))
    step = max(1, chunk // max(1, len(pts)))
    for lo in range(0, len(xi), step):
        out[lo:lo + step] = cone.metric_distance(xi[lo:lo + step, None, :], pts[None]).min(axis=1)
    return out


# ---------------------------------------------------------------- partition


@dataclass(eq=False)
class FrequencyPartition:
    """Partition of unity ``{psi_j}`` subordinate to a cone lattice.

    ``psi_j = chi_j + (1 - sum_k chi_k) b_j / sum_k b_k`` where ``chi_j`` is 1
    on B_{1/2}(x_j) and vanishes off B_{1/2 + eta}(x_j) (disjoint supports),
    and ``b_j`` is 1 on B_{R delta}(x_j) and vanishes off B_2(x_j).
    """

    lattice: ConeLattice
    grid: NodeGrid
    values: np.ndarray
    eta: float
    sharpness: float = 1.0

    @property
    def cone(self):
        return self.lattice.cone

    def evaluate(self, xi):
        """``psi_j(xi)`` for all j, shape (J, K); zero where nothing covers xi."""
        xi = np.asarray(xi, dtype=float).reshape(-1, self.cone.n)
        out = np.zeros((len(self.lattice.points), len(xi)))
        ok = self.cone.contains(xi)
        out[:, ok] = _partition_values(self.cone, self.lattice, xi[ok], self.eta, self.sharpness)[0]
        return out


def _partition_values(cone, lattice, xi, eta, sharpness):
    inner = lattice.delta
    D = cone.metric_distance(xi[None, :, :], lattice.points[:, None, :])
    chi = ramp(D, inner, inner + eta, sharpness)
    b = ramp(D, lattice.R * lattice.delta, OUTER_RADIUS, sharpness)
    bsum = b.sum(axis=0)
    covered = bsum > 0
    rest = 1.0 - chi.sum(axis=0)
    vals = chi + np.where(covered, rest / np.where(covered, bsum, 1.0), 0.0) * b
    vals[:, ~covered] = 0.0
    return vals, covered


def make_partition(cone, lattice: ConeLattice, freq_grid: NodeGrid, sharpness=1.0) -> FrequencyPartition:
    """Smooth partition of unity on the grid nodes covered by the lattice.

    Raises
    ------
    BesovError
        If the grid has fewer than 8 samples across B_{1/2}(e), or a node of
        the lattice region is covered by no bump.
    """
    inner = NodeGrid.ball(cone, freq_grid.step, lattice.delta)
    if np.any(inner.idx.max(0) - inner.idx.min(0) + 1 < 8):
        raise BesovError("frequency grid too coarse to resolve B_1/2")
    eta = 0.9 * (lattice.min_separation - 2 * lattice.delta) / 2 if np.isfinite(lattice.min_separation) else 0.25
    if eta <= 0:
        raise BesovError("lattice separation leaves no room for the inner plateaus")
    vals, covered = _partition_values(cone, lattice, freq_grid.xi, eta, sharpness)
    region = cone.distance_to_e(freq_grid.xi) <= lattice.extent
    if np.any(region & ~covered):
        raise BesovError("a node of the lattice region is covered by no bump")
    return FrequencyPartition(lattice, freq_grid, vals, eta, sharpness)


# -------------------------------------------------------------- band norms


@dataclass(frozen=True)
class SpatialPolicy:
    """Spatial quadrature for L^p norms with p != 2.

    Bands are sampled on a regular frequency box with spacing
    ``1 / (2 half_width)``, zero padded by ``oversample`` and transformed by FFT,
    which yields the band on the period box ``[-half_width, half_width]^n``.
    """

    half_width: float
    oversample: int = 2

    def refined(self, factor=2.0):
        return SpatialPolicy(self.half_width * factor, self.oversample)


def default_spatial_policy(cone) -> SpatialPolicy:
    return SpatialPolicy({1: 32.0, 2: 16.0, 3: 8.0}[cone.n])


@dataclass(frozen=True)
class FFTBox:
    """Regular frequency box and its periodic spatial dual."""

    axes: tuple  # frequency coordinates per axis
    spacing: float  # frequency spacing d
    padded: tuple  # FFT length per axis
    half_width: float

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def cell(self) -> float:
        """Spatial cell volume; the period box is ``[-W, W]^n``."""
        return float(np.prod([2.0 * self.half_width / m for m in self.padded]))

    def points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), -1).reshape(-1, len(self.axes))

    def spatial_axes(self):
        """Spatial sample positions ``k / (N d)``, ``k = 0..N-1``."""
        return [np.arange(m) / (m * self.spacing) for m in self.padded]


def fft_box(xi_support, policy: SpatialPolicy) -> FFTBox:
    """Box covering the given frequency nodes with a 10% margin."""
    from scipy import fft as sfft

    xi = np.asarray(xi_support, dtype=float)
    lo, hi = xi.min(axis=0), xi.max(axis=0)
    pad = 0.1 * (hi - lo) + 1e-3
    lo, hi = lo - pad, hi + pad
    d = 1.0 / (2.0 * policy.half_width)
    N = np.ceil((hi - lo) / d).astype(int) + 1
    axes = tuple(lo[k] + d * np.arange(N[k]) for k in range(len(lo)))
    padded = tuple(sfft.next_fast_len(int(policy.oversample * m)) for m in N)
    return FFTBox(axes, d, padded, float(policy.half_width))


def lp_norms_fft(cone, fvals, row_factor, K, xi_support, p, policy: Optional[SpatialPolicy] = None, chunk=None):
    """``||F_k||_p`` for ``F_k^ = row_factor(k, xi) * fvals(xi)``.

    Parameters
    ----------
    fvals : callable
        Common spectrum factor at cone points.
    row_factor : callable
        ``(rows, xi) -> (len(rows), len(xi))`` band factors.
    xi_support : (M, n) array
        Nodes covering the support of ``fvals`` (sets the frequency box).
    """
    from scipy import fft as sfft

    policy = default_spatial_policy(cone) if policy is None else policy
    n = cone.n
    box = fft_box(np.asarray(xi_support, dtype=float).reshape(-1, n), policy)
    pts = box.points()
    inside = np.flatnonzero(cone.contains(pts))
    fv = np.zeros(len(pts), dtype=complex)
    fv[inside] = fvals(pts[inside])
    live = np.flatnonzero(fv)
    out = np.zeros(K)
    if len(live) == 0:
        return out
    if chunk is None:
        chunk = max(1, (1 << 24) // int(np.prod(box.padded)))
    for r0 in range(0, K, chunk):
        rows = np.arange(r0, min(K, r0 + chunk))
        vals = np.zeros((len(rows), len(pts)), dtype=complex)
        vals[:, live] = row_factor(rows, pts[live]) * fv[live]
        F = sfft.fftn(vals.reshape((len(rows),) + box.shape), s=box.padded, axes=tuple(range(1, n + 1)), workers=-1)
        F *= box.spacing ** n
        out[rows] = (np.sum(np.abs(F.reshape(len(rows), -1)) ** p, axis=1) * box.cell) ** (1.0 / p)
    return out


def l2_norms(grid: NodeGrid, spec):
    """L^2 norms of the functions whose spectra are the rows of ``spec`` (Plancherel)."""
    spec = np.atleast_2d(spec)
    return np.sqrt(np.sum(grid.weights * np.abs(spec) ** 2, axis=1))


# ------------------------------------------------------------------ norms


@dataclass
class NormResult:
    value: float
    report: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def _band_lp(fc: Spectrum, K, spec_rows, row_factor, p, policy):
    """Per-band L^p norms: Plancherel on the nodes for p = 2, FFT box otherwise."""
    if p == 2:
        return l2_norms(fc.grid, spec_rows())
    return lp_norms_fft(fc.cone, fc.at, row_factor, K, fc.grid.xi, p, policy)


def norm_discrete(f: Spectrum, P: FrequencyPartition, params: BesovParams,
                  policy: Optional[SpatialPolicy] = None, band_cache=None) -> NormResult:
    """``(sum_j Delta(x_j)^-s ||f * psi_j||_p^q)^(1/q)``.

    ``band_cache`` (a dict) keeps the per-band norms for reuse across q and s.

    Raises
    ------
    BesovError
        If more than 1e-10 of the energy of f^ lies where the partition does
        not sum to one.
    """
    fc = f.compact()
    cone = f.cone
    if fc.grid.size == 0:
        return NormResult(0.0, {"bands": 0})
    psi = P.evaluate(fc.grid.xi)
    energy = fc.grid.weights * np.abs(fc.values) ** 2
    unc = float(np.sum(energy * np.abs(1.0 - psi.sum(axis=0))) / np.sum(energy))
    if unc > 1e-10:
        raise BesovError(f"uncovered support energy fraction {unc:.3e}")
    active = np.flatnonzero(np.any(psi != 0, axis=1))
    key = ("discrete", params.p)
    if band_cache is not None and key in band_cache:
        norms = band_cache[key]
    else:
        norms = _band_lp(fc, len(active), lambda: psi[active] * fc.values,
                         lambda r, xi: P.evaluate(xi)[active[r]], params.p, policy)
        if band_cache is not None:
            band_cache[key] = norms
    det = cone.determinant(P.lattice.points[active])
    val = np.sum(det ** (-params.s) * norms ** params.q) ** (1.0 / params.q)
    return NormResult(float(val), {"bands": int(len(active)), "uncovered_fraction": unc})


def continuous_h_samples(cone, xi, step=None, budget=200000) -> HSamples:
    """Chart-lattice h whose dilate ``profile(h^-1 .)`` meets the given nodes.

    Flood fill from the lattice points nearest to ``chart(xi)``, so the set is
    exact for the lattice.
    """
    from .transform import _neighbour_offsets

    step = np.broadcast_to(np.asarray(default_h_step(cone) if step is None else step, dtype=float), (cone.n,))
    xi = np.asarray(xi, dtype=float).reshape(-1, cone.n)
    if len(xi) == 0:
        return HSamples(cone, step, np.zeros((0, cone.n)))
    seeds = np.unique(np.rint(cone.chart(xi) / step).astype(np.int64), axis=0)
    nbrs = _neighbour_offsets(cone.n)
    seen = {tuple(k) for k in seeds}
    frontier, accepted, total = seeds, [], 0
    while len(frontier):
        good = frontier[_meets(cone, frontier * step, xi)]
        accepted.append(good)
        total += len(good)
        if total > budget:
            raise BesovError("H sample budget exceeded")
        cand = (good[:, None, :] + nbrs[None]).reshape(-1, cone.n)
        new = [k for k in map(tuple, np.unique(cand, axis=0)) if k not in seen]
        seen.update(new)
        frontier = np.array(new, dtype=np.int64).reshape(-1, cone.n)
    idx = np.concatenate(accepted)
    idx = idx[np.lexsort(idx.T[::-1])]
    return HSamples(cone, step, idx)


def _meets(cone, theta, xi, chunk=4000000):
    ok = np.zeros(len(theta), dtype=bool)
    inv = cone.inverse(theta)
    step = max(1, chunk // max(1, len(xi)))
    for lo in range(0, len(theta), step):
        y = cone.act(inv[lo:lo + step, None, :], xi[None])
        ok[lo:lo + step] = np.any(cone.distance_to_e(y) < OUTER_RADIUS, axis=1)
    return ok


def _dilated_profile(W, cone, inv_theta):
    def factor(rows, xi):
        return W.profile(cone.act(inv_theta[rows][:, None, :], xi[None]))
    return factor


def norm_continuous(f: Spectrum, W: WaveletSystem, params: BesovParams, h_samples: Optional[HSamples] = None,
                    h_step=None, policy: Optional[SpatialPolicy] = None, band_cache=None) -> NormResult:
    """``(int_H ||f * psi_h||_p^q Det(h)^{-s r/n} dh)^(1/q)``, ``psi_h^ = profile(h^-1 .)``.

    The H-integral runs over the chart-lattice points whose dilated profile
    meets supp f^ (exact truncation for the lattice), with Haar weights.
    """
    fc = f.compact()
    cone = f.cone
    if fc.grid.size == 0:
        return NormResult(0.0, {"n_h": 0})
    hs = continuous_h_samples(cone, fc.grid.xi, h_step) if h_samples is None else h_samples
    key = ("continuous", params.p, tuple(hs.step))
    if band_cache is not None and key in band_cache:
        norms = band_cache[key]
    else:
        inv = cone.inverse(hs.theta)
        factor = _dilated_profile(W, cone, inv)
        norms = _band_lp(fc, len(hs), lambda: factor(np.arange(len(hs)), fc.grid.xi) * fc.values,
                         factor, params.p, policy)
        if band_cache is not None:
            band_cache[key] = norms
    val = np.sum(hs.weights * norms ** params.q * hs.det ** (-params.s * params.rank_ratio)) ** (1.0 / params.q)
    return NormResult(float(val), {"n_h": len(hs), "h_step": [float(v) for v in hs.step]})


def _field_lp(F: CoefficientField, p, policy):
    """Per-row L^p norms of a spectral coefficient field."""
    if p == 2:
        return l2_norms(F.grid, F.spec)
    cone = F.cone
    if F.source is not None:
        g, W = F.source
        sq = np.sqrt(F.hs.det)

        def factor(rows, xi):
            return sq[rows, None] * W.psi(cone.adjoint_act(F.hs.theta[rows][:, None, :], xi[None]))
        return lp_norms_fft(cone, g.at, factor, len(F.hs), F.grid.xi, p, policy)

    def rows_interp(rows, xi):
        return np.stack([F.grid.interpolate(F.spec[j], xi) for j in rows])
    return lp_norms_fft(cone, lambda xi: np.ones(len(xi), dtype=complex), rows_interp, len(F.hs), F.grid.xi, p,
                        policy)


def mixed_norm(F: CoefficientField, params: BesovParams, weight_exponent: Optional[float] = None,
               policy: Optional[SpatialPolicy] = None) -> NormResult:
    """``(int_H (int_V |F|^p dx)^(q/p) Det(h)^w dh)^(1/q)``.

    ``w`` defaults to ``params.s_prime``.  Spectral fields integrate over V
    exactly (p = 2) or on the FFT box; point fields use their weights.
    """
    w = params.s_prime if weight_exponent is None else weight_exponent
    hs = F.hs
    p, q = params.p, params.q
    if F.is_spectral:
        inner = _field_lp(F, p, policy)
        hw, det = hs.weights, hs.det
    else:
        if F.weights is None:
            raise TransformError("point field has no quadrature weights")
        vals = np.abs(F.point_values()) ** p
        # point weights are dx dh / det h; recover dx per point
        dx = F.weights * hs.det[F.hidx] / hs.weights[F.hidx]
        used, inv = np.unique(F.hidx, return_inverse=True)
        inner = np.bincount(inv, weights=vals * dx, minlength=len(used)) ** (1.0 / p)
        hw, det = hs.weights[used], hs.det[used]
    val = np.sum(hw * inner ** q * det ** w) ** (1.0 / q)
    return NormResult(float(val), {"weight_exponent": w})


def besov_record(params: BesovParams, result: NormResult) -> dict:
    """JSON-ready record ``{p, q, s, s_prime, value, quadrature_report}``."""
    return {"p": params.p, "q": params.q, "s": params.s, "s_prime": params.s_prime,
            "value": result.value, "quadrature_report": result.report}

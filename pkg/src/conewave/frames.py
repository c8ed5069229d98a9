"""Well-spread sampling of G, BUPUs, sequence norms and frame reconstruction.

Signals are spectra on a fixed frequency *window* (a node grid).  The
H-part of a well-spread set is a chart lattice of spacing ``epsilon``; every
level ``h_j`` carries a spatial lattice ``x_{j,k} = A_j k`` on a box of
half-width ``extent``.  The partition of unity is a product of tents (hat
functions) in chart and lattice coordinates, so each smeared atom
``a_i = int psi_i(g) pi(g) psi dg`` factors as

    a_i^(xi) = exp(-2 pi i x_i . xi) |det A_j| prod sinc^2((A_j^T xi)_a) Psi_j(xi)

with ``Psi_j`` a small H-quadrature.  The operators T1, T2 and the frame
operator are then sums of per-level separable Fourier transforms.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .besov import BesovParams
from .cone import ConeModel
from .spectral import NodeGrid, Spectrum, node_grid
from .transform import (OUTER_RADIUS, CoefficientField, HSamples, WaveletSystem, analyze,
                        support_h_samples)

__all__ = ["FrameError", "WellSpreadSet", "Bupu", "SequenceData", "make_wellspread", "make_bupu",
           "sample_coefficients", "bupu_coefficients", "bupu_integrals", "sequence_norm", "apply_T1", "apply_T2",
           "reconstruct", "frame_ratio"]

DEFAULT_WINDOW = 0.8  # metric radius of the default signal window
BUDGET = 10 ** 7


class FrameError(RuntimeError):
    """Frame construction or reconstruction failure; ``report`` holds context."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _hat(t):
    return np.clip(1.0 - np.abs(t), 0.0, None)


def _corners(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)


# ------------------------------------------------------------ well-spread set


@dataclass(eq=False)
class WellSpreadSet:
    """Sampling points ``g_i = (h_j, A_j k)`` of G.

    Attributes
    ----------
    hs : HSamples
        Chart lattice of spacing ``epsilon`` (one entry per level).
    window : NodeGrid
        Frequency window on which signals live.
    A : (J, n, n) array
        Spatial lattice matrices, ``x = A_j k``.
    kmin, kmax : (J, n) int arrays
        Inclusive integer boxes of ``k`` per level.
    offsets : (J + 1,) int array
        Flat index of the first point of each level.
    bands : list of int arrays
        Window nodes with ``psi^(h_j* xi) != 0``.
    """

    cone: ConeModel
    epsilon: float
    beta: float
    extent: float
    mode: str
    window: NodeGrid
    hs: HSamples
    A: np.ndarray
    kmin: np.ndarray
    kmax: np.ndarray
    offsets: np.ndarray
    bands: list
    quad_sub: int = 4
    report: dict = field(default_factory=dict)
    _ops: dict = field(default_factory=dict, repr=False)
    _lookup: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return int(self.offsets[-1])

    @property
    def n_levels(self) -> int:
        return len(self.hs)

    @property
    def u_box(self) -> dict:
        """Description of U_eps: chart box in H times a lattice-cell box in V."""
        return {"h_box": [-self.epsilon, self.epsilon], "x_box_lattice_units": [-1.0, 1.0]}

    def kaxes(self, j):
        return [np.arange(a, b + 1) for a, b in zip(self.kmin[j], self.kmax[j])]

    def level_shape(self, j):
        return tuple(int(v) for v in self.kmax[j] - self.kmin[j] + 1)

    def level_points(self, j):
        grids = np.meshgrid(*self.kaxes(j), indexing="ij")
        k = np.stack(grids, -1).reshape(-1, self.cone.n)
        return k @ self.A[j].T

    def points(self):
        """``(theta, x)`` of every sampling point, in flat order."""
        th = np.repeat(self.hs.theta, np.diff(self.offsets), axis=0)
        x = np.concatenate([self.level_points(j) for j in range(self.n_levels)]) if self.n_levels else \
            np.zeros((0, self.cone.n))
        return th, x

    def level_of(self, idx):
        """Level index of H-lattice indices (-1 where absent)."""
        if not self._lookup:
            self._lookup.update({tuple(k): j for j, k in enumerate(self.hs.idx)})
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, self.cone.n)
        return np.array([self._lookup.get(tuple(k), -1) for k in idx], dtype=np.int64)

    def cell_volume(self):
        """Spatial lattice-cell volume per level."""
        return np.abs(np.linalg.det(self.A))

    def tile_weights(self):
        """Left Haar volume ``dx dh / det h`` of every lattice cell, per level."""
        return self.hs.weights * self.cell_volume() / self.hs.det


def _band(cone, theta, xi, radius=OUTER_RADIUS):
    return np.flatnonzero(cone.distance_to_e(cone.adjoint_act(theta, xi)) < radius)


def make_wellspread(cone: ConeModel, epsilon: float, extent: float = 6.0, beta: float = 0.5,
                    window: Optional[NodeGrid] = None, mode: str = "nyquist", budget: int = BUDGET,
                    h_region: Optional[np.ndarray] = None, quad_sub: int = 4) -> WellSpreadSet:
    """Well-spread set for signals on ``window``.

    Parameters
    ----------
    epsilon : float
        H chart-lattice spacing.
    extent : float
        Half-width of the spatial box ``[-extent, extent]^n`` to cover.
    beta : float
        Spatial density.  ``mode="nyquist"``: spacing per axis is
        ``beta / width`` with ``width`` the extent of the level's band inside
        the window (``beta = 1/2`` samples ``|W f|^2`` at its Nyquist rate).
        ``mode="act"``: ``x_{j,k} = act(h_j, beta k)`` literally.
    window : NodeGrid, optional
        Frequency window, default the preset node grid of ``B_0.8(e)``.
    h_region : (J, n) int array, optional
        Explicit H-lattice indices instead of all levels meeting the window.
    quad_sub : int
        Sub-steps per chart step in the H-quadrature of the smeared atoms
        (second-order accurate; 4 gives ~1e-3).

    Raises
    ------
    FrameError
        For ``epsilon <= 0``, an empty window, or more than ``budget`` points.
    """
    if not epsilon > 0 or not beta > 0 or not extent > 0:
        raise FrameError("epsilon, beta and extent must be positive")
    if mode not in ("nyquist", "act"):
        raise FrameError(f"unknown spatial mode {mode!r}")
    window = node_grid(cone, DEFAULT_WINDOW) if window is None else window
    if window.size == 0:
        raise FrameError("empty frequency window")
    n = cone.n
    step = np.full(n, float(epsilon))
    if h_region is None:
        hs = support_h_samples(cone, window.xi, step, budget=budget)
    else:
        hs = HSamples(cone, step, h_region)
    J = len(hs)
    A = np.empty((J, n, n))
    kmin = np.empty((J, n), dtype=np.int64)
    kmax = np.empty((J, n), dtype=np.int64)
    bands = []
    box = np.array(list(itertools.product((-extent, extent), repeat=n)))
    total = 0
    for j in range(J):
        band = _band(cone, hs.theta[j], window.xi)
        bands.append(band)
        if mode == "act":
            A[j] = beta * cone.linear_map(hs.theta[j])
        else:
            xb = window.xi[band] if len(band) else window.xi
            width = np.maximum(np.ptp(xb, axis=0), 1e-3)
            A[j] = np.diag(beta / width)
        u = box @ np.linalg.inv(A[j]).T
        kmin[j] = np.floor(u.min(0)).astype(np.int64) - 1
        kmax[j] = np.ceil(u.max(0)).astype(np.int64) + 1
        total += int(np.prod(kmax[j] - kmin[j] + 1))
        if total > budget:
            raise FrameError(f"well-spread set exceeds the budget of {budget} points (epsilon={epsilon}, "
                             f"extent={extent})")
    offsets = np.concatenate([[0], np.cumsum(np.prod(kmax - kmin + 1, axis=1))]).astype(np.int64)
    ws = WellSpreadSet(cone, float(epsilon), float(beta), float(extent), mode, window, hs, A, kmin, kmax,
                       offsets, bands, int(quad_sub))
    ws.report.update({"n_levels": J, "n_points": len(ws), "overlap": 4 ** n, "separated_families": 1})
    ws.report["covering"] = covering_certificate(ws)
    return ws


def working_h_mask(ws: WellSpreadSet, theta):
    """True where every corner of the chart cell of ``theta`` is a level."""
    theta = np.asarray(theta, dtype=float).reshape(-1, ws.cone.n)
    base = np.floor(theta / ws.epsilon).astype(np.int64)
    ok = np.ones(len(theta), dtype=bool)
    for c in _corners(ws.cone.n):
        ok &= ws.level_of(base + c) >= 0
    return ok


def covering_certificate(ws: WellSpreadSet, sub=3):
    """Check that every node of a fine G-grid of the working region lies in a tile.

    The fine grid refines the chart lattice ``sub`` times in H and samples
    each level's spatial box at ``sub`` points per cell; tiles are
    ``g_i U_eps`` = chart box ``[-eps, eps]`` x lattice box ``[-1, 1]``.
    """
    n = ws.cone.n
    t = (np.arange(sub) + 0.5) / sub
    offs = np.stack(np.meshgrid(*([t] * n), indexing="ij"), -1).reshape(-1, n)
    checked, worst = 0, 0.0
    for j in range(ws.n_levels):
        th = (ws.hs.idx[j] + offs) * ws.epsilon
        th = th[working_h_mask(ws, th)]
        if not len(th):
            continue
        # a coarse spatial sample of the box in lattice units
        xs = np.stack(np.meshgrid(*[np.linspace(-ws.extent, ws.extent, 4 * sub)] * n, indexing="ij"),
                      -1).reshape(-1, n)
        for tp in th:
            jj = ws.level_of(np.rint(tp / ws.epsilon).astype(np.int64))[0]
            dh = np.max(np.abs(tp - ws.hs.theta[jj])) / ws.epsilon
            u = xs @ np.linalg.inv(ws.A[jj]).T
            k = np.rint(u)
            inside = np.all((k >= ws.kmin[jj]) & (k <= ws.kmax[jj]), axis=1)
            dx = np.max(np.abs(u - k), axis=1)
            if not np.all(inside):
                raise FrameError("covering failed: spatial node outside the level lattice")
            worst = max(worst, dh, float(dx.max()))
            checked += len(xs)
    if worst > 1.0:
        raise FrameError("covering failed: node outside every tile")
    return {"nodes_checked": checked, "max_tile_coordinate": worst}


# ----------------------------------------------------------------------- BUPU


@dataclass(eq=False)
class Bupu:
    """Tent partition of unity subordinate to the tiles ``g_i U_eps``.

    ``psi_i(theta, x) = prod_a hat((theta - theta_j)_a / eps) *
    prod_a hat((A_j^-1 x - k)_a)``; tents are nonnegative, at most 1 and sum
    to 1 on the working region because one-dimensional hats do.
    """

    ws: WellSpreadSet

    def evaluate(self, theta, x):
        """Nonzero BUPU values at points ``(theta, x)``.

        Returns
        -------
        ids : (P, 4^n) int array
            Flat point indices, -1 for absent tiles.
        vals : (P, 4^n) array
        """
        ws = self.ws
        n = ws.cone.n
        theta = np.asarray(theta, dtype=float).reshape(-1, n)
        x = np.asarray(x, dtype=float).reshape(-1, n)
        P = len(theta)
        corners = _corners(n)
        ids = np.full((P, len(corners) ** 2), -1, dtype=np.int64)
        vals = np.zeros((P, len(corners) ** 2))
        base = np.floor(theta / ws.epsilon).astype(np.int64)
        col = 0
        for c in corners:
            hidx = base + c
            lev = ws.level_of(hidx)
            wh = np.prod(_hat(theta / ws.epsilon - hidx), axis=1)
            for p in np.flatnonzero(lev >= 0):
                j = lev[p]
                u = np.linalg.solve(ws.A[j], x[p])
                kb = np.floor(u).astype(np.int64)
                for q, d in enumerate(corners):
                    k = kb + d
                    if np.all((k >= ws.kmin[j]) & (k <= ws.kmax[j])):
                        flat = np.ravel_multi_index(tuple(k - ws.kmin[j]), ws.level_shape(j))
                        ids[p, col + q] = ws.offsets[j] + flat
                        vals[p, col + q] = wh[p] * np.prod(_hat(u - k))
            col += len(corners)
        return ids, vals

    def total(self, theta, x):
        return self.evaluate(theta, x)[1].sum(axis=1)

    def region_mask(self, theta, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.ws.cone.n)
        return working_h_mask(self.ws, theta) & np.all(np.abs(x) <= self.ws.extent, axis=1)


def make_bupu(ws: WellSpreadSet, checks: int = 200, seed: int = 0) -> Bupu:
    """Tent BUPU on ``ws``, verified at random points of the working region.

    Raises
    ------
    FrameError
        If a sampled region point is covered by no tile or the sum is not 1.
    """
    b = Bupu(ws)
    rng = np.random.default_rng(seed)
    n = ws.cone.n
    if ws.n_levels == 0:
        raise FrameError("empty well-spread set")
    j = rng.integers(0, ws.n_levels, checks)
    th = ws.hs.theta[j] + rng.uniform(-0.5, 0.5, size=(checks, n)) * ws.epsilon
    x = rng.uniform(-ws.extent, ws.extent, size=(checks, n))
    keep = b.region_mask(th, x)
    ids, vals = b.evaluate(th[keep], x[keep])
    if np.any(np.all(ids < 0, axis=1)):
        raise FrameError("a region node is covered by no tile")
    err = float(np.max(np.abs(vals.sum(axis=1) - 1.0))) if len(vals) else 0.0
    if err > 1e-10:
        raise FrameError(f"partition of unity off by {err:.3g}")
    ws.report["bupu_sum_error"] = err
    ws.report["bupu_checked"] = int(keep.sum())
    return b


# ------------------------------------------------------------------ operators


class _FrameOps:
    """Per-level data of the sampled atoms and smeared atoms for one wavelet."""

    def __init__(self, ws: WellSpreadSet, W: WaveletSystem, sub: int = 4, use_table: bool = True):
        cone = ws.cone
        self.ws, self.W = ws, W
        xi = ws.window.xi
        n = cone.n
        t = np.arange(-sub + 1, sub) / sub
        T = np.stack(np.meshgrid(*([t] * n), indexing="ij"), -1).reshape(-1, n)
        tw = np.prod(_hat(T), axis=1) * (ws.epsilon / sub) ** n
        pad = OUTER_RADIUS + 3.0 * ws.epsilon * np.sqrt(n)
        table = self._log_table(ws, W, sub) if use_table else None
        self.P, self.ext, self.Q = [], [], []
        for j in range(ws.n_levels):
            th = ws.hs.theta[j]
            b = ws.bands[j]
            self.P.append(np.sqrt(ws.hs.det[j]) * W.psi(cone.adjoint_act(th, xi[b])))
            cand = _band(cone, th, xi, pad)
            ths = th + ws.epsilon * T
            amp = tw * cone.haar_weight(ths) / np.sqrt(cone.det_action(ths))
            if table is not None:
                vals = table(ws.hs.idx[j] * ws.epsilon, T * ws.epsilon, ws.window.idx[cand])
                psi = amp @ vals
            else:
                psi = np.zeros(len(cand))
                for lo in range(0, len(T), 64):
                    psi += amp[lo:lo + 64] @ W.psi(cone.adjoint_act(ths[lo:lo + 64, None, :], xi[cand][None]))
            A = ws.A[j]
            eta = xi[cand] @ A
            psi *= abs(np.linalg.det(A)) * np.prod(np.sinc(eta) ** 2, axis=1)
            keep = psi != 0
            self.ext.append(cand[keep])
            self.Q.append(psi[keep])
        self.tile = ws.tile_weights()
        # orthant nodes are a product lattice and A_j is diagonal: dense per-axis products
        self.tensor = cone.kind == "orthant" and all(np.count_nonzero(A - np.diag(np.diag(A))) == 0 for A in ws.A)

    @staticmethod
    def _log_table(ws, W, sub):
        """Lookup of ``psi(e^theta xi)`` on the node lattice, or None.

        On the orthant the profile depends on ``theta + log xi`` only; when
        every sub-quadrature shift is a whole number of node steps the values
        are read from one table instead of re-evaluated per level.
        """
        if ws.cone.kind != "orthant":
            return None
        step = ws.window.step
        ratio = ws.epsilon / (sub * step)
        if not np.allclose(ratio, np.rint(ratio), rtol=0, atol=1e-9):
            return None
        half = int(np.ceil(OUTER_RADIUS / step.min())) + 1
        ax = np.arange(-half, half + 1)
        v = np.stack(np.meshgrid(*([ax] * ws.cone.n), indexing="ij"), -1)
        vals = W.psi(np.exp(v * step))

        def lookup(theta0, shifts, node_idx):
            off = np.rint((theta0 + shifts) / step).astype(np.int64)
            k = node_idx[None, :, :] + off[:, None, :] + half
            ok = np.all((k >= 0) & (k <= 2 * half), axis=-1)
            k = np.clip(k, 0, 2 * half)
            return np.where(ok, vals[tuple(np.moveaxis(k, -1, 0))], 0.0)
        return lookup

    def _tensor_plan(self, j, nodes):
        """Dense index box of ``nodes`` with per-axis phase matrices (product node lattices)."""
        ws = self.ws
        idx = ws.window.idx[nodes]
        lo = idx.min(axis=0)
        shape = tuple(int(v) for v in idx.max(axis=0) - lo + 1)
        pos = np.ravel_multi_index(tuple((idx - lo).T), shape)
        E = []
        for a, kax in enumerate(ws.kaxes(j)):
            xa = np.exp((lo[a] + np.arange(shape[a])) * ws.window.step[a])
            E.append(np.exp(2j * np.pi * np.outer(kax * ws.A[j][a, a], xa)))
        return shape, pos, E

    @staticmethod
    def _contract(C, mats):
        for a, M in enumerate(mats):
            C = np.moveaxis(np.tensordot(M, C, axes=(1, a)), 0, a)
        return C

    def _t2(self, j, nodes, coef):
        """``sum_m coef_m exp(2 pi i x_k . xi_m)`` over the lattice of level ``j``."""
        ws = self.ws
        if self.tensor:
            shape, pos, E = self._tensor_plan(j, nodes)
            C = np.zeros(int(np.prod(shape)), dtype=complex)
            C[pos] = coef
            return self._contract(C.reshape(shape), E).reshape(-1)
        return kernels.separable_type2(ws.kaxes(j), ws.window.xi[nodes] @ ws.A[j], coef).reshape(-1)

    def _t1(self, j, nodes, vals):
        """Adjoint of :meth:`_t2`, evaluated at ``nodes``."""
        ws = self.ws
        if self.tensor:
            shape, pos, E = self._tensor_plan(j, nodes)
            out = self._contract(vals.reshape(ws.level_shape(j)), [M.conj().T for M in E])
            return out.reshape(-1)[pos]
        return kernels.separable_type1(ws.kaxes(j), ws.window.xi[nodes] @ ws.A[j], vals.reshape(ws.level_shape(j)))

    def sample(self, fv):
        """``W_psi f(g_i)`` for every point."""
        ws, w = self.ws, self.ws.window.weights
        out = np.empty(len(ws), dtype=complex)
        for j in range(ws.n_levels):
            b = ws.bands[j]
            out[ws.offsets[j]:ws.offsets[j + 1]] = self._t2(j, b, w[b] * fv[b] * self.P[j])
        return out

    def functionals(self, fv):
        """``<f, a_i>`` = BUPU integrals ``int W_psi f psi_i dg``."""
        ws, w = self.ws, self.ws.window.weights
        out = np.empty(len(ws), dtype=complex)
        for j in range(ws.n_levels):
            e = self.ext[j]
            out[ws.offsets[j]:ws.offsets[j + 1]] = self._t2(j, e, w[e] * fv[e] * self.Q[j])
        return out

    def atoms(self, c):
        """Window spectrum of ``sum_i c_i pi(g_i) psi``."""
        ws = self.ws
        out = np.zeros(ws.window.size, dtype=complex)
        for j in range(ws.n_levels):
            b = ws.bands[j]
            out[b] += self.P[j] * self._t1(j, b, c[ws.offsets[j]:ws.offsets[j + 1]])
        return out

    def smeared(self, c):
        """Window spectrum of ``sum_i c_i a_i``."""
        ws = self.ws
        out = np.zeros(ws.window.size, dtype=complex)
        for j in range(ws.n_levels):
            e = self.ext[j]
            out[e] += self.Q[j] * self._t1(j, e, c[ws.offsets[j]:ws.offsets[j + 1]])
        return out

    def point_weights(self):
        return np.repeat(self.tile, np.diff(self.ws.offsets))

    # signal-space forms of T1, T2 and the frame operator
    def S1(self, fv):
        return self.smeared(self.sample(fv))

    def S2(self, fv):
        return self.atoms(self.functionals(fv))

    def S(self, fv):
        return self.atoms(self.point_weights() * self.sample(fv))


def _ops(ws: WellSpreadSet, W: WaveletSystem) -> _FrameOps:
    key = id(W)
    if key not in ws._ops:
        if W.cone is not ws.cone and W.cone.name != ws.cone.name:
            raise FrameError("wavelet and well-spread set live on different cones")
        ws._ops[key] = _FrameOps(ws, W, ws.quad_sub)
    return ws._ops[key]


def _window_values(f: Spectrum, ws: WellSpreadSet, tol=1e-12):
    """Spectrum values on the window nodes; refuses energy outside it."""
    if f.grid is ws.window:
        return f.values
    fc = f.compact()
    pos = ws.window.positions(fc.grid.idx) if np.array_equal(fc.grid.step, ws.window.step) else None
    if pos is not None:
        out = np.zeros(ws.window.size, dtype=complex)
        inside = pos >= 0
        out[pos[inside]] = fc.values[inside]
        lost = np.sum(fc.grid.weights[~inside] * np.abs(fc.values[~inside]) ** 2)
    else:
        out = f.at(ws.window.xi)
        lost = max(0.0, f.norm() ** 2 - np.sum(ws.window.weights * np.abs(out) ** 2))
    total = f.norm() ** 2
    if total > 0 and lost > tol * total:
        raise FrameError(f"signal has {lost / total:.3g} of its energy outside the frequency window")
    return out


# ------------------------------------------------------------- sequence data


@dataclass(eq=False)
class SequenceData:
    """Coefficients ``lambda_i`` aligned with a well-spread set.

    ``kind`` is ``"samples"`` (``W_psi f(g_i)``) or ``"bupu"``
    (``int W_psi f psi_i dg``).
    """

    ws: WellSpreadSet
    values: np.ndarray
    params: Optional[BesovParams] = None
    kind: str = "samples"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(-1)
        if len(self.values) != len(self.ws):
            raise FrameError(f"alignment mismatch: {len(self.values)} values for {len(self.ws)} points")
        if self.kind not in ("samples", "bupu"):
            raise FrameError(f"unknown coefficient kind {self.kind!r}")


def sample_coefficients(f: Spectrum, W: WaveletSystem, ws: WellSpreadSet,
                        params: Optional[BesovParams] = None) -> SequenceData:
    """``lambda_i = W_psi f(g_i)``."""
    return SequenceData(ws, _ops(ws, W).sample(_window_values(f, ws)), params, "samples")


def bupu_coefficients(f: Spectrum, W: WaveletSystem, ws: WellSpreadSet,
                      params: Optional[BesovParams] = None) -> SequenceData:
    """``lambda_i = int W_psi f(g) psi_i(g) dg`` through the smeared atoms."""
    return SequenceData(ws, _ops(ws, W).functionals(_window_values(f, ws)), params, "bupu")


def sequence_norm(sd: SequenceData, params: Optional[BesovParams] = None) -> float:
    """Tile-weighted mixed norm of the coefficients.

    ``(sum_j det(h_j)^s' w_H(j) (sum_k |lambda_jk|^p vol_j)^(q/p))^(1/q)``
    with ``w_H(j)`` the Haar volume of the chart cell and ``vol_j`` the
    spatial cell volume (``det(h_j) w_x`` for the ``act`` lattice).
    """
    params = sd.params if params is None else params
    if params is None:
        raise FrameError("sequence norm needs Besov parameters")
    ws = sd.ws
    p, q = params.p, params.q
    lev = np.repeat(np.arange(ws.n_levels), np.diff(ws.offsets))
    inner = np.bincount(lev, weights=np.abs(sd.values) ** p, minlength=ws.n_levels) * ws.cell_volume()
    outer = ws.hs.det ** params.s_prime * ws.hs.weights * inner ** (q / p)
    return float(np.sum(outer) ** (1.0 / q))


def frame_ratio(f: Spectrum, W: WaveletSystem, ws: WellSpreadSet, params: BesovParams,
                coorbit: Optional[float] = None) -> float:
    """``||sample_coefficients(f)||_Y# / ||f||_coorbit``."""
    from .besov import mixed_norm

    if coorbit is None:
        coorbit = mixed_norm(analyze(f, W), params).value
    return sequence_norm(sample_coefficients(f, W, ws, params)) / coorbit


# ------------------------------------------------------------- T1, T2


def _field_signal(F: CoefficientField, ws: WellSpreadSet):
    """Window values of the signal behind ``F = W_psi f``."""
    if F.source is None:
        raise FrameError("region mismatch: the field is not in the range of W_psi (no source signal)")
    return _window_values(F.source[0], ws)


def _field_samples(F: CoefficientField, ws: WellSpreadSet, W: WaveletSystem):
    """``F(g_i)``: through the source, or rows of ``F`` at the levels of ``ws``."""
    if F.source is not None:
        return _ops(ws, W).sample(_field_signal(F, ws))
    if not F.is_spectral or not np.allclose(ws.epsilon / F.hs.step, np.rint(ws.epsilon / F.hs.step)):
        raise FrameError("region mismatch: F cannot be evaluated at the sampling points")
    ratio = np.rint(ws.epsilon / F.hs.step).astype(np.int64)
    rows = {tuple(k): r for r, k in enumerate(F.hs.idx)}
    out = np.empty(len(ws), dtype=complex)
    for j in range(ws.n_levels):
        r = rows.get(tuple(ws.hs.idx[j] * ratio))
        if r is None:
            raise FrameError("region mismatch: F has no row at a sampling level")
        out[ws.offsets[j]:ws.offsets[j + 1]] = F.evaluate(r, ws.level_points(j))
    return out


def _as_field(values, ws, W, hs):
    return analyze(Spectrum(ws.window, values), W, h_samples=hs)


def apply_T1(F: CoefficientField, ws: WellSpreadSet, bupu: Bupu, W: WaveletSystem) -> CoefficientField:
    """``T1 F = sum_i F(g_i) psi_i * W_psi psi = W_psi(sum_i F(g_i) a_i)``.

    The output is returned on the H-samples of ``F`` and keeps its signal as
    source, so it lies in the reproducing subspace.
    """
    _check_bupu(ws, bupu)
    return _as_field(_ops(ws, W).smeared(_field_samples(F, ws, W)), ws, W, F.hs)


def apply_T2(F: CoefficientField, ws: WellSpreadSet, bupu: Bupu, W: WaveletSystem) -> CoefficientField:
    """``T2 F = sum_i lambda_i(F) l_{g_i} W_psi psi`` with ``lambda_i(F) = int F psi_i dg``.

    For ``F = W_psi f`` the BUPU integrals are ``<f, a_i>`` exactly.
    """
    _check_bupu(ws, bupu)
    ops = _ops(ws, W)
    return _as_field(ops.atoms(ops.functionals(_field_signal(F, ws))), ws, W, F.hs)


def bupu_integrals(F, ws: WellSpreadSet, bupu: Bupu, W: Optional[WaveletSystem] = None, sub: int = 8,
                   x_step: Optional[float] = None):
    """``lambda_i(F) = int F psi_i dg`` for every point.

    ``F`` is a coefficient field with a source (closed form through smeared
    atoms, needs ``W``) or a callable ``F(theta, x)`` integrated by a midpoint
    rule on a fine grid of the working region (``sub`` nodes per chart step,
    spatial step ``x_step``).
    """
    _check_bupu(ws, bupu)
    if isinstance(F, CoefficientField):
        if W is None:
            raise FrameError("closed-form BUPU integrals need the wavelet")
        return _ops(ws, W).functionals(_field_signal(F, ws))
    cone, n = ws.cone, ws.cone.n
    x_step = ws.extent / 32 if x_step is None else x_step
    t = (np.arange(sub) + 0.5) / sub - 0.5
    T = np.stack(np.meshgrid(*([t] * n), indexing="ij"), -1).reshape(-1, n) * ws.epsilon
    xs = np.arange(-ws.extent + x_step / 2, ws.extent, x_step)
    X = np.stack(np.meshgrid(*([xs] * n), indexing="ij"), -1).reshape(-1, n)
    out = np.zeros(len(ws), dtype=complex)
    for j in range(ws.n_levels):
        th = ws.hs.theta[j] + T
        wq = cone.haar_weight(th) * (ws.epsilon / sub) ** n / cone.det_action(th) * x_step ** n
        for a, tp in enumerate(th):
            vals = np.asarray(F(np.broadcast_to(tp, X.shape), X), dtype=complex)
            nz = vals != 0
            if not np.any(nz):
                continue
            ids, pv = bupu.evaluate(np.broadcast_to(tp, (nz.sum(), n)), X[nz])
            contrib = (wq[a] * vals[nz])[:, None] * pv
            ok = ids >= 0
            np.add.at(out, ids[ok], contrib[ok])
    return out


def _check_bupu(ws, bupu):
    if bupu is not None and bupu.ws is not ws:
        raise FrameError("BUPU belongs to a different well-spread set")


# -------------------------------------------------------------- reconstruction


def _l2(ws, v):
    return float(np.sqrt(np.sum(ws.window.weights * np.abs(v) ** 2)))


STALL_RATIO = 0.98  # residual ratio counted as "not decreasing" ...
STALL_FLOOR = 1e-2  # ... while the relative residual is still above this


def _neumann(apply, y, ws, max_iter, tol, report, stall_ratio=STALL_RATIO, stall_floor=STALL_FLOOR):
    """Solve ``S u = y`` by ``u <- u + (y - S u)``, i.e. the Neumann series.

    A step counts as non-decreasing if the residual grows, or if it shrinks
    by less than ``1 - stall_ratio`` while still above ``stall_floor``
    (tent BUPUs keep the spectrum of S in [0, 2), so coarse sets stagnate
    rather than blow up).  Three such steps in a row raise.
    """
    ny = _l2(ws, y)
    u = y.copy()
    res = report["residuals"]
    if ny == 0:
        return u
    flat = 0
    for it in range(max_iter):
        r = y - apply(u)
        rel = _l2(ws, r) / ny
        if not np.isfinite(rel):
            raise FrameError("epsilon too coarse: Neumann iteration overflowed", report)
        if res and (rel >= res[-1] or (rel > stall_floor and rel >= stall_ratio * res[-1])):
            flat += 1
        else:
            flat = 0
        res.append(rel)
        report["iterations"] = it + 1
        if flat >= 3:
            kind = "non-decreasing" if rel >= res[-2] else "stagnating"
            report["divergence"] = kind
            raise FrameError(f"epsilon too coarse: Neumann residual {kind} for 3 consecutive iterations "
                             f"(residual {rel:.3g})", report)
        if rel <= tol:
            break
        u = u + r
    return u


def _cg(apply, y, ws, max_iter, tol, report):
    """Conjugate gradient for the weighted-Hermitian frame operator."""
    sw = np.sqrt(ws.window.weights)
    b = sw * y
    nb = np.linalg.norm(b)
    x = np.zeros_like(b)
    res = report["residuals"]
    if nb == 0:
        return x

    def A(v):
        return sw * apply(v / sw)
    r = b.copy()
    p = r.copy()
    rr = np.vdot(r, r).real
    for it in range(max_iter):
        Ap = A(p)
        alpha = rr / np.vdot(p, Ap).real
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = np.vdot(r, r).real
        res.append(float(np.sqrt(rr_new) / nb))
        report["iterations"] = it + 1
        if res[-1] <= tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x / sw


def reconstruct(data, method: str, W: WaveletSystem, ws: WellSpreadSet, bupu: Optional[Bupu] = None,
                max_iter: int = 100, tol: float = 1e-10, reference: Optional[Spectrum] = None):
    """Reconstruct a signal from frame data.

    Parameters
    ----------
    data : SequenceData or CoefficientField
        Samples ``W_psi f(g_i)`` (T1-neumann, frame-cg), BUPU integrals
        (T2-neumann), or the field ``W_psi f`` itself.
    method : {"T1-neumann", "T2-neumann", "frame-cg"}
        * T1-neumann: ``f = W^-1 T1^-1 W(sum_i lambda_i a_i)``.
        * T2-neumann: from a field, the atomic decomposition
          ``c_i = lambda_i(T2^-1 W f)``, ``f = sum_i c_i pi(g_i) psi``; from
          BUPU integrals, ``T2^-1`` applied to ``sum_i lambda_i pi(g_i) psi``.
        * frame-cg: conjugate gradient on ``S f = sum_i w_i <f, pi(g_i)psi>
          pi(g_i) psi`` with Haar tile weights ``w_i``.
    reference : Spectrum, optional
        True signal; sets ``final_error`` in the report.

    Returns
    -------
    (Spectrum, dict)
        Signal on the window grid and the iteration report.

    Raises
    ------
    FrameError
        On divergence of a Neumann iteration (``report`` attached) or
        mismatched inputs.
    """
    _check_bupu(ws, bupu)
    if method not in ("T1-neumann", "T2-neumann", "frame-cg"):
        raise FrameError(f"unknown method {method!r}")
    ops = _ops(ws, W)
    report = {"method": method, "epsilon": ws.epsilon, "beta": ws.beta, "iterations": 0, "residuals": [],
              "final_error": None}
    field_in = isinstance(data, CoefficientField)
    if not field_in:
        if not isinstance(data, SequenceData) or data.ws is not ws:
            raise FrameError("sequence data not aligned with this well-spread set")
        want = "bupu" if method == "T2-neumann" else "samples"
        if data.kind != want:
            raise FrameError(f"{method} needs coefficients of kind {want!r}, got {data.kind!r}")
    if method == "T1-neumann":
        lam = _field_samples(data, ws, W) if field_in else data.values
        out = _neumann(ops.S1, ops.smeared(lam), ws, max_iter, tol, report)
    elif method == "T2-neumann":
        if field_in:
            u = _neumann(ops.S2, _field_signal(data, ws), ws, max_iter, tol, report)
            coef = ops.functionals(u)
            report["n_coefficients"] = len(coef)
            out = ops.atoms(coef)
        else:
            out = _neumann(ops.S2, ops.atoms(data.values), ws, max_iter, tol, report)
    else:
        lam = _field_samples(data, ws, W) if field_in else data.values
        out = _cg(ops.S, ops.atoms(ops.point_weights() * lam), ws, max_iter, tol, report)
    result = Spectrum(ws.window, out)
    res = report["residuals"]
    report["converged"] = bool(not res or res[-1] <= tol)
    if reference is not None:
        ref = _window_values(reference, ws)
        report["final_error"] = _l2(ws, out - ref) / _l2(ws, ref)
    return result, report

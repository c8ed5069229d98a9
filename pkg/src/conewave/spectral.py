"""Discrete carriers for signals: chart-lattice frequency nodes and spatial grids.

A signal is represented by its spectrum sampled on frequency nodes
``xi_m = nu(u_m)`` where ``u_m`` runs over a uniform lattice in the node
chart of the cone (see :meth:`ConeModel.node_point`).  Each node carries the
weight ``J(u_m) * prod(step)`` so that ``sum_m w_m F(xi_m)`` is a quadrature
of ``int_Omega F(xi) dxi``.  Spatial values are the corresponding Fourier sums

    f(x) = sum_m w_m f^(xi_m) exp(2 pi i <x, xi_m>).

Dilations by lattice-aligned elements of H permute the nodes, which makes
covariance statements exact at the discrete level.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .cone import ConeModel

# ---------------------------------------------------------------- smooth steps


def smoothstep(t, sharpness=1.0):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, monotone in between.

    ``S(t) = f(t) / (f(t) + f(1 - t))`` with ``f(t) = exp(-sharpness / t)``.
    """
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-sharpness / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-sharpness / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
        return np.where(t >= 1, 1.0, np.where(t <= 0, 0.0, a / (a + b)))


def smoothstep_deriv(t, sharpness=1.0):
    """Derivative of :func:`smoothstep`."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    ts = np.where(inside, t, 0.5)
    # S = 1 / (1 + exp(k/t - k/(1-t)))
    z = sharpness / ts - sharpness / (1.0 - ts)
    dz = -sharpness / ts**2 - sharpness / (1.0 - ts) ** 2
    with np.errstate(over="ignore"):
        ez = np.exp(-np.abs(z))
    # S' = -dz * e^z / (1+e^z)^2, written symmetrically for stability
    val = -dz * ez / (1.0 + ez) ** 2
    return np.where(inside, val, 0.0)


def ramp(d, inner, outer, sharpness=1.0):
    """1 for d <= inner, 0 for d >= outer, smooth monotone in between."""
    return smoothstep((outer - np.asarray(d, dtype=float)) / (outer - inner), sharpness)


def ramp_deriv(d, inner, outer, sharpness=1.0):
    """d/dd of :func:`ramp`."""
    return -smoothstep_deriv((outer - np.asarray(d, dtype=float)) / (outer - inner), sharpness) / (outer - inner)


# ------------------------------------------------------------------- node grid


@dataclass(frozen=True, eq=False)
class NodeGrid:
    """Uniform lattice in node-chart coordinates with quadrature weights.

    Parameters
    ----------
    cone : ConeModel
    step : (n,) array
        Lattice spacing in chart coordinates.
    idx : (M, n) int array
        Integer lattice indices of the active nodes.
    """

    cone: ConeModel
    step: np.ndarray
    idx: np.ndarray
    u: np.ndarray = field(init=False, repr=False)
    xi: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    lo: np.ndarray = field(init=False, repr=False)
    _lookup: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        step = np.asarray(self.step, dtype=float).reshape(-1)
        idx = np.asarray(self.idx, dtype=np.int64).reshape(-1, self.cone.n)
        object.__setattr__(self, "step", step)
        object.__setattr__(self, "idx", idx)
        u = idx * step
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "xi", self.cone.node_point(u))
        object.__setattr__(self, "weights", self.cone.node_jacobian(u) * np.prod(step))
        if len(idx):
            lo = idx.min(axis=0)
            shape = tuple(idx.max(axis=0) - lo + 1)
        else:
            lo = np.zeros(self.cone.n, dtype=np.int64)
            shape = (1,) * self.cone.n
        lookup = np.full(shape, -1, dtype=np.int64)
        lookup[tuple((idx - lo).T)] = np.arange(len(idx))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "_lookup", lookup)

    @property
    def size(self) -> int:
        return len(self.idx)

    @classmethod
    def ball(cls, cone, step, radius, center=None):
        """All lattice nodes within metric distance ``radius`` of ``center``."""
        step = np.broadcast_to(np.asarray(step, dtype=float), (cone.n,)).copy()
        center = cone.e if center is None else np.asarray(center, dtype=float)
        blo, bhi = _node_box(cone, radius, center)
        lo = np.floor(blo / step).astype(int)
        hi = np.ceil(bhi / step).astype(int)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, cone.n)
        keep = cone.metric_distance(cone.node_point(idx * step), center) < radius
        return cls(cone, step, idx[keep])

    def positions(self, idx):
        """Positions of lattice indices in this grid, -1 where absent."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, self.cone.n)
        rel = idx - self.lo
        ok = np.all((rel >= 0) & (rel < np.array(self._lookup.shape)), axis=1)
        out = np.full(len(idx), -1, dtype=np.int64)
        out[ok] = self._lookup[tuple(rel[ok].T)]
        return out

    def subgrid(self, mask) -> "NodeGrid":
        return NodeGrid(self.cone, self.step, self.idx[np.asarray(mask, dtype=bool)])

    def shifted_positions(self, shift):
        """Position of node ``idx + shift`` for every node (-1 if absent)."""
        return self.positions(self.idx + np.asarray(shift, dtype=np.int64))

    def to_dense(self, values):
        """Scatter node values into the bounding index box (zeros elsewhere)."""
        values = np.asarray(values)
        out = np.zeros(self._lookup.shape, dtype=values.dtype)
        out[tuple((self.idx - self.lo).T)] = values
        return out

    def interpolate(self, values, xi):
        """Cubic-spline interpolation of node values at cone points ``xi``.

        Points outside the lattice box evaluate to zero.
        """
        xi = np.asarray(xi, dtype=float)
        shape = xi.shape[:-1]
        xi = xi.reshape(-1, self.cone.n)
        out = np.zeros(len(xi), dtype=complex)
        inside = self.cone.contains(xi)
        if not np.any(inside):
            return out.reshape(shape)
        coords = (self.cone.node_chart(xi[inside]) / self.step - self.lo).T
        dense = self.to_dense(np.asarray(values, dtype=complex))
        # pad so the spline sees zeros beyond the active set
        dense = np.pad(dense, 3)
        coords = coords + 3
        re = ndimage.map_coordinates(dense.real, coords, order=3, mode="constant", cval=0.0)
        im = ndimage.map_coordinates(dense.imag, coords, order=3, mode="constant", cval=0.0)
        out[inside] = re + 1j * im
        return out.reshape(shape)


def _node_box(cone, radius, center):
    """Node-chart box containing the metric ball B_radius(center)."""
    u0 = cone.node_chart(center)
    if cone.kind == "orthant":
        return u0 - radius, u0 + radius
    # push a dense sample of the sphere through the chart, then pad
    from .cone import from_matrix, to_matrix

    rng = np.random.default_rng(0)
    S = rng.normal(size=(20000, 3))
    S *= radius / np.linalg.norm(S, axis=1)[:, None]
    w, U = np.linalg.eigh(to_matrix(S))
    E = np.einsum("nij,nj,nkj->nik", U, np.exp(w), U)
    C = to_matrix(center)
    cw, cu = np.linalg.eigh(C)
    Ch = cu @ np.diag(np.sqrt(cw)) @ cu.T
    u = cone.node_chart(from_matrix(Ch @ E @ Ch))
    pad = 0.05 * (u.max(0) - u.min(0)) + 0.05
    return u.min(0) - pad, u.max(0) + pad


def default_node_step(cone, refine=1):
    """Preset node spacing; ``refine`` halves it that many extra times minus one."""
    if cone.kind == "orthant":
        base = 1.0 / 64 if cone.r == 1 else 1.0 / 32
        return np.full(cone.n, base / refine)
    return np.array([0.04, 0.05, 0.04]) / refine


def node_grid(cone, radius=2.0, refine=1, center=None):
    """Node grid of the preset spacing covering B_radius(center)."""
    return NodeGrid.ball(cone, default_node_step(cone, refine), radius, center)


# ------------------------------------------------------------------- spectra


@dataclass(eq=False)
class Spectrum:
    """A signal given by its spectrum on a :class:`NodeGrid`.

    Parameters
    ----------
    grid : NodeGrid
    values : (M,) complex
        Spectrum at the grid nodes.
    source : callable, optional
        Closed-form spectrum ``xi -> f^(xi)``; used for off-node evaluation
        instead of interpolation.  May expose ``grad(xi)``.
    """

    grid: NodeGrid
    values: np.ndarray
    source: Optional[Callable] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(-1)
        if self.values.shape != (self.grid.size,):
            raise ValueError("spectrum length does not match node grid")

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.xi), source=fn)

    @property
    def cone(self) -> ConeModel:
        return self.grid.cone

    def at(self, xi):
        """Spectrum at arbitrary cone points."""
        if self.source is not None:
            return np.asarray(self.source(xi), dtype=complex)
        return self.grid.interpolate(self.values, xi)

    def grad_at(self, xi):
        if self.source is not None and hasattr(self.source, "grad"):
            return np.asarray(self.source.grad(xi), dtype=complex)
        return _spline_grad(self.grid, self.values, xi)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.weights * np.abs(self.values) ** 2)))

    def inner(self, other: "Spectrum") -> complex:
        if other.grid is not self.grid:
            raise ValueError("spectra live on different node grids")
        return complex(np.sum(self.grid.weights * self.values * np.conj(other.values)))

    def support(self, tol=0.0):
        return np.abs(self.values) > tol

    def compact(self, tol=0.0) -> "Spectrum":
        """Restrict to nodes where the spectrum is nonzero."""
        mask = self.support(tol)
        return Spectrum(self.grid.subgrid(mask), self.values[mask], self.source)

    def evaluate(self, points):
        """Spatial values at arbitrary points, shape ``points.shape[:-1]``."""
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1]
        out = kernels.type2(points.reshape(-1, self.cone.n), self.grid.xi, self.grid.weights * self.values)
        return out.reshape(shape)

    def on_grid(self, sgrid: "SpatialGrid"):
        return kernels.separable_type2(sgrid.axes(), self.grid.xi, self.grid.weights * self.values)

    def __add__(self, other):
        src = None
        if self.source is not None and other.source is not None:
            src = _SumSource(self.source, other.source)
        return Spectrum(self.grid, self.values + other.values, src)

    def __mul__(self, a):
        src = None if self.source is None else _ScaledSource(self.source, a)
        return Spectrum(self.grid, a * self.values, src)

    __rmul__ = __mul__


FrequencyField = Spectrum


class _ScaledSource:
    def __init__(self, src, a):
        self.src, self.a = src, a
        if hasattr(src, "grad"):
            self.grad = lambda xi: self.a * np.asarray(self.src.grad(xi), dtype=complex)

    def __call__(self, xi):
        return self.a * np.asarray(self.src(xi), dtype=complex)


class _SumSource:
    def __init__(self, s1, s2):
        self.s1, self.s2 = s1, s2
        if hasattr(s1, "grad") and hasattr(s2, "grad"):
            self.grad = lambda xi: (np.asarray(self.s1.grad(xi), dtype=complex)
                                    + np.asarray(self.s2.grad(xi), dtype=complex))

    def __call__(self, xi):
        return np.asarray(self.s1(xi), dtype=complex) + np.asarray(self.s2(xi), dtype=complex)


def _spline_grad(grid, values, xi):
    """Gradient of the chart-cubic interpolant in V coordinates."""
    cone = grid.cone
    xi = np.asarray(xi, dtype=float)
    h = 1e-6
    g = np.zeros(xi.shape, dtype=complex)
    for k in range(cone.n):
        d = np.zeros(cone.n)
        d[k] = h
        g[..., k] = (grid.interpolate(values, xi + d) - grid.interpolate(values, xi - d)) / (2 * h)
    return g


# -------------------------------------------------------------- spatial grids


@dataclass(frozen=True)
class SpatialGrid:
    """Regular grid over an axis-aligned box in V."""

    origin: tuple
    spacing: tuple
    shape: tuple

    def axes(self):
        return [o + d * np.arange(s) for o, d, s in zip(self.origin, self.spacing, self.shape)]

    def points(self):
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), -1)

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    @classmethod
    def centered(cls, half_width, spacing):
        half_width = np.atleast_1d(np.asarray(half_width, dtype=float))
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), half_width.shape)
        counts = np.ceil(half_width / spacing).astype(int)
        origin = -counts * spacing
        return cls(tuple(origin), tuple(spacing), tuple(2 * counts + 1))


@dataclass(eq=False)
class SampledSignal:
    """Samples of a signal on a periodic regular spatial grid.

    ``values`` has shape ``grid.shape``.  The DFT helpers treat the box as one
    period, with frequency samples at multiples of ``1 / (shape * spacing)``.
    """

    grid: SpatialGrid
    values: np.ndarray
    kind: str = "spatial"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != tuple(self.grid.shape):
            raise ValueError("values shape does not match grid")

    def _origin_phase(self):
        xi = self.frequencies()
        return np.exp(-2j * np.pi * (xi @ np.asarray(self.grid.origin, dtype=float)))

    def to_frequency(self):
        """Continuous-FT samples on the FFT frequency lattice."""
        return np.fft.fftn(self.values) * self.grid.cell * self._origin_phase()

    @classmethod
    def from_frequency(cls, grid, fhat):
        tmp = cls(grid, np.zeros(grid.shape, dtype=complex))
        return cls(grid, np.fft.ifftn(fhat / tmp._origin_phase()) / grid.cell)

    def frequencies(self):
        freq = [np.fft.fftfreq(s, d) for s, d in zip(self.grid.shape, self.grid.spacing)]
        return np.stack(np.meshgrid(*freq, indexing="ij"), -1)

    def norm(self, p=2.0) -> float:
        return float((np.sum(np.abs(self.values) ** p) * self.grid.cell) ** (1.0 / p))

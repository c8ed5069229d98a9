"""Concrete symmetric cones: the positive orthant and the 2x2 SPD cone.

Points of V are stored as real vectors of length ``n`` in coordinates that
are orthonormal for the trace inner product.  For ``spd2`` this means
``v = (x11, sqrt(2) x12, x22)``; use :func:`to_matrix` / :func:`from_matrix`
to move between the two.

The solvable group H acting simply transitively on the cone is handled in
canonical chart coordinates ``theta``:

* orthant(r): ``theta`` are the r log-scales, ``h = diag(exp(theta))``.
* spd2: ``theta = (log a, b, log c)`` for ``L = [[a, 0], [b, c]]`` acting by
  ``X -> L X L^T``.

All routines are vectorised over leading axes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

SQRT2 = np.sqrt(2.0)


class ConeError(ValueError):
    """A point or parameter is incompatible with the cone."""


def to_matrix(v):
    """spd2 vector (x11, sqrt2 x12, x22) -> symmetric 2x2 matrices."""
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 1] = v[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 1] / SQRT2
    return out


def from_matrix(X):
    X = np.asarray(X, dtype=float)
    return np.stack([X[..., 0, 0], SQRT2 * 0.5 * (X[..., 0, 1] + X[..., 1, 0]), X[..., 1, 1]], axis=-1)


def _lower(theta):
    a = np.exp(theta[..., 0])
    b = theta[..., 1]
    c = np.exp(theta[..., 2])
    return a, b, c


def _spd2_log_eigs(v):
    """Log-eigenvalues of the 2x2 matrices encoded by ``v`` (closed form)."""
    p = v[..., 0]
    q = v[..., 1] / SQRT2
    s = v[..., 2]
    half_tr = 0.5 * (p + s)
    disc = np.sqrt(0.25 * (p - s) ** 2 + q * q)
    lam1 = half_tr + disc
    lam2 = (p * s - q * q) / lam1
    return np.log(lam1), np.log(lam2)


@dataclass(frozen=True)
class ConeModel:
    """A concrete symmetric cone.

    Parameters
    ----------
    kind : {"orthant", "spd2"}
    r : int
        Rank.  For ``spd2`` this is fixed to 2.
    """

    kind: str
    r: int
    n: int = field(init=False)

    def __post_init__(self):
        if self.kind == "orthant":
            if self.r < 1:
                raise ConeError("orthant rank must be >= 1")
            object.__setattr__(self, "n", self.r)
        elif self.kind == "spd2":
            if self.r != 2:
                raise ConeError("spd2 has rank 2")
            object.__setattr__(self, "n", 3)
        else:
            raise ConeError(f"unknown cone kind {self.kind!r}")

    # ------------------------------------------------------------------ basics
    @property
    def name(self) -> str:
        return f"orthant:r={self.r}" if self.kind == "orthant" else "spd2"

    @property
    def e(self) -> np.ndarray:
        if self.kind == "orthant":
            return np.ones(self.n)
        return np.array([1.0, 0.0, 1.0])

    @property
    def phi_e(self) -> float:
        """Characteristic function at ``e``, by quadrature of its Laplace integral."""
        return _phi_e(self.kind, self.r)

    def _check_dim(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ConeError(f"expected points of dimension {self.n}, got {x.shape[-1]}")
        return x

    def contains(self, x):
        x = self._check_dim(x)
        if self.kind == "orthant":
            return np.all(x > 0, axis=-1)
        p, q, s = x[..., 0], x[..., 1] / SQRT2, x[..., 2]
        return (p > 0) & (p * s - q * q > 0)

    def _require_inside(self, x):
        x = self._check_dim(x)
        if not np.all(self.contains(x)):
            raise ConeError("point outside the open cone")
        return x

    def determinant(self, x):
        """Jordan determinant Delta(x)."""
        x = self._require_inside(x)
        if self.kind == "orthant":
            return np.prod(x, axis=-1)
        return x[..., 0] * x[..., 2] - 0.5 * x[..., 1] ** 2

    def characteristic(self, x):
        """phi(x) = phi(e) Delta(x)^(-n/r)."""
        return self.phi_e * self.determinant(x) ** (-self.n / self.r)

    # --------------------------------------------------------------- group H
    def identity(self) -> np.ndarray:
        return np.zeros(self.n)

    def linear_map(self, theta):
        """Matrix of the action of h(theta) on V (orthonormal coordinates)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "orthant":
            d = np.exp(theta)
            return d[..., :, None] * np.eye(self.n)
        a, b, c = _lower(theta)
        z = np.zeros_like(a)
        # X -> L X L^T written on (p, sqrt2 q, s)
        return np.stack([
            np.stack([a * a, z, z], -1),
            np.stack([SQRT2 * a * b, a * c, z], -1),
            np.stack([b * b, SQRT2 * b * c, c * c], -1),
        ], -2)

    def act(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        x = self._check_dim(x)
        if self.kind == "orthant":
            return np.exp(theta) * x
        a, b, c = _lower(theta)
        p, q, s = x[..., 0], x[..., 1] / SQRT2, x[..., 2]
        # L X L^T with L = [[a,0],[b,c]]
        np_ = a * a * p
        nq = a * (b * p + c * q)
        ns = b * b * p + 2 * b * c * q + c * c * s
        return np.stack([np_, SQRT2 * nq, ns], axis=-1)

    def adjoint_act(self, theta, x):
        """Action of h* (adjoint for the trace inner product)."""
        theta = np.asarray(theta, dtype=float)
        x = self._check_dim(x)
        if self.kind == "orthant":
            return np.exp(theta) * x
        a, b, c = _lower(theta)
        p, q, s = x[..., 0], x[..., 1] / SQRT2, x[..., 2]
        # L^T X L
        np_ = a * a * p + 2 * a * b * q + b * b * s
        nq = c * (a * q + b * s)
        ns = c * c * s
        return np.stack([np_, SQRT2 * nq, ns], axis=-1)

    def det_action(self, theta):
        """Det of h(theta) as a linear map on V."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "orthant":
            return np.exp(np.sum(theta, axis=-1))
        return np.exp(3.0 * (theta[..., 0] + theta[..., 2]))

    def compose(self, theta1, theta2):
        """Chart coordinates of h(theta1) h(theta2)."""
        theta1 = np.asarray(theta1, dtype=float)
        theta2 = np.asarray(theta2, dtype=float)
        if self.kind == "orthant":
            return theta1 + theta2
        a1, b1, c1 = _lower(theta1)
        a2, b2, c2 = _lower(theta2)
        return np.stack([theta1[..., 0] + theta2[..., 0], b1 * a2 + c1 * b2,
                         theta1[..., 2] + theta2[..., 2]], axis=-1)

    def inverse(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "orthant":
            return -theta
        a, b, c = _lower(theta)
        return np.stack([-theta[..., 0], -b / (a * c), -theta[..., 2]], axis=-1)

    def chart(self, x):
        """The unique h with h e = x, in chart coordinates."""
        x = self._require_inside(x)
        if self.kind == "orthant":
            return np.log(x)
        p, q, s = x[..., 0], x[..., 1] / SQRT2, x[..., 2]
        a = np.sqrt(p)
        b = q / a
        c = np.sqrt(s - b * b)
        return np.stack([np.log(a), b, np.log(c)], axis=-1)

    def exp_algebra(self, direction, t=1.0):
        """Chart coordinates of exp(t X) for a Lie-algebra direction of H.

        ``direction`` is the tangent vector at the identity in chart
        coordinates.  For spd2 it is the lower-triangular generator
        ``[[d0, 0], [d1, d2]]``.
        """
        direction = np.asarray(direction, dtype=float)
        if self.kind == "orthant":
            return t * direction
        p, q, s = t * direction[0], t * direction[1], t * direction[2]
        # exp of a 2x2 lower triangular matrix
        if abs(p - s) > 1e-8:
            off = q * (np.exp(p) - np.exp(s)) / (p - s)
        else:
            off = q * np.exp(0.5 * (p + s)) * (1.0 + (p - s) ** 2 / 24.0)
        return np.array([p, off, s])

    def algebra_map(self, direction):
        """Matrix on V of the derivative of the action along ``direction``."""
        direction = np.asarray(direction, dtype=float)
        if self.kind == "orthant":
            return np.diag(direction)
        p, q, s = direction
        # X -> A X + X A^T, A = [[p, 0], [q, s]]
        return np.array([
            [2 * p, 0.0, 0.0],
            [SQRT2 * q, p + s, 0.0],
            [0.0, SQRT2 * q, 2 * s],
        ])

    # ------------------------------------------------------------ geometry
    def metric_distance(self, x, y):
        """Geodesic distance of the invariant Riemannian metric."""
        x = self._require_inside(x)
        y = self._require_inside(y)
        if self.kind == "orthant":
            return np.sqrt(np.sum(np.log(y / x) ** 2, axis=-1))
        # generalized eigenvalues of (Y, X): roots of det(Y - lam X) = 0
        X = to_matrix(x)
        Y = to_matrix(y)
        detX = X[..., 0, 0] * X[..., 1, 1] - X[..., 0, 1] ** 2
        detY = Y[..., 0, 0] * Y[..., 1, 1] - Y[..., 0, 1] ** 2
        mid = X[..., 0, 0] * Y[..., 1, 1] + X[..., 1, 1] * Y[..., 0, 0] - 2 * X[..., 0, 1] * Y[..., 0, 1]
        half = 0.5 * mid / detX
        disc = np.sqrt(np.maximum(half * half - detY / detX, 0.0))
        lam1 = half + disc
        lam2 = (detY / detX) / lam1
        return np.sqrt(np.log(lam1) ** 2 + np.log(lam2) ** 2)

    def distance_to_e(self, x):
        """d(x, e); cheaper than :meth:`metric_distance` against ``e``."""
        x = self._require_inside(x)
        if self.kind == "orthant":
            return np.sqrt(np.sum(np.log(x) ** 2, axis=-1))
        l1, l2 = _spd2_log_eigs(x)
        return np.sqrt(l1 * l1 + l2 * l2)

    def distance_to_e_grad(self, x):
        """Euclidean gradient of d(., e) at ``x`` (undefined at e itself)."""
        x = self._require_inside(x)
        d = self.distance_to_e(x)
        safe = np.where(d > 0, d, 1.0)
        if self.kind == "orthant":
            g = np.log(x) / x / safe[..., None]
        else:
            # grad of tr(log^2 X) / 2 is log(X) X^{-1}; map back to vector coords
            X = to_matrix(x)
            w, U = np.linalg.eigh(X)
            G = np.einsum("...ij,...j,...kj->...ik", U, np.log(w) / w, U)
            g = np.stack([G[..., 0, 0], SQRT2 * G[..., 0, 1], G[..., 1, 1]], -1) / safe[..., None]
        return np.where((d > 0)[..., None], g, 0.0)

    def haar_weight(self, theta):
        """Left Haar density of H in chart coordinates (pulled back phi(x)dx)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "orthant":
            return np.full(theta.shape[:-1], self.phi_e)
        # phi(L L^T) |d(L L^T)/d theta| = phi(e) (ac)^-3 * 4 sqrt2 a^3 c^3 / c
        return 4.0 * SQRT2 * self.phi_e * np.exp(-theta[..., 2])

    # ------------------------------------------------- frequency node chart
    # Frequency nodes are xi = nu(u) = h(u)* e with a chart in which right
    # multiplication by lattice-aligned elements is a lattice shift.
    def node_point(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "orthant":
            return np.exp(u)
        # nu = D M(beta) D with D = diag(a, c), M(beta) = [[1 + beta^2, beta], [beta, 1]];
        # congruence by D is an isometry, so beta steps have uniform metric length
        a = np.exp(u[..., 0])
        beta = u[..., 1]
        c = np.exp(u[..., 2])
        return np.stack([a * a * (1.0 + beta * beta), SQRT2 * a * c * beta, c * c], axis=-1)

    def node_chart(self, xi):
        xi = self._require_inside(xi)
        if self.kind == "orthant":
            return np.log(xi)
        p, q, s = xi[..., 0], xi[..., 1] / SQRT2, xi[..., 2]
        a2 = (p * s - q * q) / s
        beta = q / np.sqrt(a2 * s)
        return np.stack([0.5 * np.log(a2), beta, 0.5 * np.log(s)], axis=-1)

    def node_jacobian(self, u):
        """|d xi / d u| for Lebesgue measure in orthonormal coordinates."""
        u = np.asarray(u, dtype=float)
        if self.kind == "orthant":
            return np.exp(np.sum(u, axis=-1))
        return 4.0 * SQRT2 * np.exp(3 * u[..., 0] + 3 * u[..., 2])

    def node_shift(self, theta, step):
        """Integer lattice shift s with h(theta)* nu(u) = nu(u + s*step), or None."""
        theta = np.asarray(theta, dtype=float)
        step = np.asarray(step, dtype=float)
        if self.kind == "orthant":
            u0 = theta
        else:
            # diagonal h moves (log a, log c) and fixes beta; a shear mixes beta with a/c
            if abs(theta[1]) > 1e-12:
                return None
            u0 = np.array([theta[0], 0.0, theta[2]])
        k = np.rint(u0 / step)
        if np.max(np.abs(k * step - u0)) > 1e-10 * max(1.0, np.max(np.abs(u0))):
            return None
        return k.astype(int)


@lru_cache(maxsize=None)
def _phi_e(kind, r):
    if kind == "orthant":
        one_d, _ = integrate.quad(lambda y: np.exp(-y), 0.0, np.inf, epsabs=1e-14, epsrel=1e-13)
        return float(one_d ** r)
    # y = [[p, q], [q, s]] > 0; the q-slice has length 2 sqrt(ps) and the
    # orthonormal off-diagonal coordinate contributes a factor sqrt2.
    val, _ = integrate.dblquad(
        lambda s, p: 2.0 * np.sqrt(p * s) * np.exp(-(p + s)),
        0.0, np.inf, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12,
    )
    return float(SQRT2 * val)


def parse_cone(spec: str) -> ConeModel:
    """Parse a cone selection string ("orthant:r=2", "spd2")."""
    s = spec.strip()
    if s == "spd2":
        return ConeModel("spd2", 2)
    m = re.fullmatch(r"orthant:r=(\d+)", s)
    if m:
        return ConeModel("orthant", int(m.group(1)))
    raise ConeError(f"bad cone string {spec!r}")


@dataclass(frozen=True)
class HElement:
    """An element of H, stored by its chart coordinates."""

    cone: ConeModel
    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).reshape(-1)
        if th.shape != (self.cone.n,):
            raise ConeError(f"chart coordinates must have length {self.cone.n}")
        object.__setattr__(self, "theta", th)

    @classmethod
    def identity(cls, cone):
        return cls(cone, cone.identity())

    def __matmul__(self, other: "HElement") -> "HElement":
        return HElement(self.cone, self.cone.compose(self.theta, other.theta))

    def inv(self) -> "HElement":
        return HElement(self.cone, self.cone.inverse(self.theta))

    def act(self, x):
        return self.cone.act(self.theta, x)

    def adjoint_act(self, x):
        return self.cone.adjoint_act(self.theta, x)

    @property
    def det(self) -> float:
        return float(self.cone.det_action(self.theta))


# Module-level spellings used by callers that prefer functions.
def contains(cone, x):
    return cone.contains(x)


def determinant(cone, x):
    return cone.determinant(x)


def characteristic(cone, x):
    return cone.characteristic(x)


def act(h: HElement, x):
    return h.act(x)


def adjoint_act(h: HElement, x):
    return h.adjoint_act(x)


def chart(cone, x) -> HElement:
    return HElement(cone, cone.chart(x))


def metric_distance(cone, x, y):
    return cone.metric_distance(x, y)


def haar_weight(cone, theta):
    return cone.haar_weight(theta)

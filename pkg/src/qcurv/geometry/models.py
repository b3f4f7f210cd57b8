"""Point geometry of the surface factors.

Each model stores points as rows of an array with ``dim`` columns and
provides vectorized distances. Constant-curvature models additionally
expose geodesic polar charts and the unit gradient of the distance
function, which is what the bubble quadrature needs.

Tangent directions are carried as ambient vectors. ``inner`` returns the
metric inner product of two unit directions at the same base point, so
for gradients of distance functions it is the cosine of their angle.
"""

import numpy as np

from ..errors import ConfigurationError


def _xcotx(x):
    # x*cot(x) with the removable singularity at 0
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = np.abs(x) > 1e-4
    out[big] = x[big] / np.tan(x[big])
    x2 = x[~big] ** 2
    out[~big] = 1.0 - x2 / 3.0 - x2 * x2 / 45.0
    return out


def _xcothx(x):
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = np.abs(x) > 1e-4
    out[big] = x[big] / np.tanh(x[big])
    x2 = x[~big] ** 2
    out[~big] = 1.0 + x2 / 3.0 - x2 * x2 / 45.0
    return out


class ConstantCurvatureModel:
    """Common interface of the sphere, flat torus and hyperbolic chart."""

    kappa = 0.0
    dim = 2
    local = True

    def sn(self, r):
        raise NotImplementedError

    def r_ct(self, r):
        """``r * sn'(r)/sn(r)``, i.e. ``r`` times the Laplacian of distance."""
        raise NotImplementedError

    def pairwise(self, P, Q):
        P = np.asarray(P, dtype=float)
        Q = np.asarray(Q, dtype=float)
        return self.distance(P[:, None, :], Q[None, :, :])

    def pairwise_fast(self, P, Q):
        """Pairwise distances via one matrix product (about 1e-8 absolute accuracy)."""
        return self.pairwise(P, Q)

    def inner(self, U, V):
        return np.sum(U * V, axis=-1)


class SphereModel(ConstantCurvatureModel):
    """Round sphere of radius ``radius``; points are unit vectors in R^3."""

    dim = 3

    def __init__(self, radius=1.0):
        self.radius = float(radius)
        self.kappa = 1.0 / self.radius**2
        self.injectivity_radius = np.pi * self.radius
        self.diameter = np.pi * self.radius

    def distance(self, P, Q):
        P = np.asarray(P, dtype=float)
        Q = np.asarray(Q, dtype=float)
        cross = np.linalg.norm(np.cross(P, Q), axis=-1)
        dot = np.sum(P * Q, axis=-1)
        return self.radius * np.arctan2(cross, dot)

    def pairwise_fast(self, P, Q):
        dot = np.asarray(P, dtype=float) @ np.asarray(Q, dtype=float).T
        return self.radius * np.arccos(np.clip(dot, -1.0, 1.0))

    def sn(self, r):
        return self.radius * np.sin(np.asarray(r) / self.radius)

    def r_ct(self, r):
        return _xcotx(np.asarray(r) / self.radius)

    def frame(self, P):
        P = np.asarray(P, dtype=float)
        helper = np.array([0.0, 0.0, 1.0]) if abs(P[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = helper - np.dot(helper, P) * P
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(P, e1)
        return e1, e2

    def exp_polar(self, P, r, theta):
        e1, e2 = self.frame(P)
        r = np.asarray(r, dtype=float)[..., None] / self.radius
        theta = np.asarray(theta, dtype=float)[..., None]
        out = np.cos(r) * P + np.sin(r) * (np.cos(theta) * e1 + np.sin(theta) * e2)
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def unit_grad_distance(self, Y, X):
        """Unit gradient at ``Y`` of ``dist(., X)``; zero where undefined."""
        Y = np.asarray(Y, dtype=float)
        X = np.asarray(X, dtype=float)
        dot = np.sum(X * Y, axis=-1, keepdims=True)
        T = -(X - dot * Y)
        n = np.linalg.norm(T, axis=-1, keepdims=True)
        return np.where(n > 1e-14, T / np.where(n > 1e-14, n, 1.0), 0.0)

    def random_points(self, rng, n):
        v = rng.standard_normal((n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)


class FlatTorusModel(ConstantCurvatureModel):
    """Flat torus R^2 / (L1 Z x L2 Z)."""

    dim = 2
    kappa = 0.0

    def __init__(self, L1, L2):
        self.L = np.array([float(L1), float(L2)])
        self.injectivity_radius = 0.5 * float(min(L1, L2))
        self.diameter = 0.5 * float(np.hypot(L1, L2))

    def _wrap(self, v):
        return v - self.L * np.round(v / self.L)

    def distance(self, P, Q):
        diff = self._wrap(np.asarray(Q, dtype=float) - np.asarray(P, dtype=float))
        return np.linalg.norm(diff, axis=-1)

    def sn(self, r):
        return np.asarray(r, dtype=float)

    def r_ct(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def exp_polar(self, P, r, theta):
        r = np.asarray(r, dtype=float)[..., None]
        theta = np.asarray(theta, dtype=float)[..., None]
        pts = np.asarray(P, dtype=float) + r * np.concatenate([np.cos(theta), np.sin(theta)], axis=-1)
        return np.mod(pts, self.L)

    def unit_grad_distance(self, Y, X):
        diff = self._wrap(np.asarray(Y, dtype=float) - np.asarray(X, dtype=float))
        n = np.linalg.norm(diff, axis=-1, keepdims=True)
        return np.where(n > 1e-14, diff / np.where(n > 1e-14, n, 1.0), 0.0)

    def random_points(self, rng, n):
        return rng.uniform(size=(n, 2)) * self.L


_MINK = np.array([-1.0, 1.0, 1.0])


class HyperbolicChartModel(ConstantCurvatureModel):
    """Geodesic disk of a hyperbolic surface with curvature ``kappa < 0``.

    Points live on the unit hyperboloid ``<X, X> = -1`` (Minkowski form
    ``-x0 y0 + x1 y1 + x2 y2``); lengths are scaled by ``1/sqrt(-kappa)``.
    Only the disk of radius ``chart_radius`` around ``(1, 0, 0)`` is used
    for sampling points, and the surface is assumed to have injectivity
    radius at least ``injectivity_radius`` there.
    """

    dim = 3

    def __init__(self, kappa, chart_radius, injectivity_radius, diameter=None):
        if kappa >= 0:
            raise ConfigurationError("hyperbolic chart needs kappa < 0")
        if not 0 < chart_radius < injectivity_radius:
            raise ConfigurationError("need 0 < chart_radius < injectivity_radius")
        self.kappa = float(kappa)
        self.scale = 1.0 / np.sqrt(-self.kappa)
        self.chart_radius = float(chart_radius)
        self.injectivity_radius = float(injectivity_radius)
        self.diameter = 2.0 * self.chart_radius if diameter is None else float(diameter)
        self.base = np.array([1.0, 0.0, 0.0])

    def inner(self, U, V):
        return np.sum(U * V * _MINK, axis=-1)

    def distance(self, P, Q):
        diff = np.asarray(Q, dtype=float) - np.asarray(P, dtype=float)
        n2 = np.maximum(np.sum(diff * diff * _MINK, axis=-1), 0.0)
        return 2.0 * self.scale * np.arcsinh(0.5 * np.sqrt(n2))

    def pairwise_fast(self, P, Q):
        dot = (np.asarray(P, dtype=float) * _MINK) @ np.asarray(Q, dtype=float).T
        return self.scale * np.arccosh(np.maximum(-dot, 1.0))

    def sn(self, r):
        return self.scale * np.sinh(np.asarray(r, dtype=float) / self.scale)

    def r_ct(self, r):
        return _xcothx(np.asarray(r, dtype=float) / self.scale)

    def frame(self, P):
        P = np.asarray(P, dtype=float)
        basis = []
        for helper in (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])):
            v = helper + self.inner(helper, P) * P
            for e in basis:
                v = v - self.inner(v, e) * e
            basis.append(v / np.sqrt(self.inner(v, v)))
        return basis[0], basis[1]

    def exp_polar(self, P, r, theta):
        e1, e2 = self.frame(P)
        r = np.asarray(r, dtype=float)[..., None] / self.scale
        theta = np.asarray(theta, dtype=float)[..., None]
        return np.cosh(r) * P + np.sinh(r) * (np.cos(theta) * e1 + np.sin(theta) * e2)

    def unit_grad_distance(self, Y, X):
        Y = np.asarray(Y, dtype=float)
        X = np.asarray(X, dtype=float)
        T = -X - self.inner(X, Y)[..., None] * Y
        n = np.sqrt(np.maximum(self.inner(T, T), 0.0))[..., None]
        return np.where(n > 1e-14, T / np.where(n > 1e-14, n, 1.0), 0.0)

    def random_points(self, rng, n):
        # area-uniform in the chart disk: CDF (cosh(r/a) - 1) / (cosh(R/a) - 1)
        a = self.scale
        u = rng.uniform(size=n)
        r = a * np.arccosh(1.0 + u * (np.cosh(self.chart_radius / a) - 1.0))
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        return self.exp_polar(self.base, r, theta)

    def polar_point(self, r, theta):
        return self.exp_polar(self.base, r, theta)


class MeshGraphModel:
    """Shortest edge-path metric on mesh vertices; points are vertex indices."""

    dim = 1
    local = False
    kappa = None

    def __init__(self, distance_matrix):
        self.D = np.asarray(distance_matrix, dtype=float)
        self.diameter = float(self.D.max())
        self.injectivity_radius = None

    def _idx(self, P):
        return np.rint(np.asarray(P, dtype=float)[..., 0]).astype(int)

    def distance(self, P, Q):
        return self.D[self._idx(P), self._idx(Q)]

    def pairwise(self, P, Q):
        return self.D[np.ix_(self._idx(P), self._idx(Q))]

    pairwise_fast = pairwise

    def random_points(self, rng, n):
        return rng.integers(0, self.D.shape[0], size=n).astype(float)[:, None]

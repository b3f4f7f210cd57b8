"""Formal barycenters, the bubble family and concentration diagnostics.

A bubble centred at a barycenter ``sigma = sum t_i delta_{x_i}`` is

    phi(y) = 1/4 log sum_i t_i (2 lam / (1 + lam^2 chi(d_i(y))^2))^4,

with ``chi`` a cutoff equal to ``t`` on ``[0, delta]`` and to ``2 delta``
beyond ``2 delta``. Outside the balls ``B_{2 delta}(x_i)`` the field equals
``log c`` with ``c = 2 lam / (1 + 4 lam^2 delta^2)``.

At the concentration scales of interest (``lam`` up to 10^4) a node grid
cannot resolve the bubble, so on constant-curvature factors the integrals
are computed with an adapted quadrature in geodesic polar coordinates
around each atom, using closed-form derivatives of ``phi``. On mesh
factors the field is sampled at the nodes instead (low accuracy at large
``lam``).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import ConfigurationError, NumericalError, SpectralOnlyError, ValidationError
from .functional import RawTerms, raw_terms
from .geometry.product import ScalarField
from .paneitz import q_constant

# ------------------------------------------------------------------ cutoff


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff ``chi_delta``: identity on ``[0, delta]``, ``2 delta`` past ``2 delta``.

    On ``[delta, 2 delta]`` it is ``delta (1 + H(s))`` with
    ``H(s) = -s^3 + s^2 + s``, ``s = (t - delta)/delta``: the cubic Hermite
    join with slopes 1 and 0, so ``chi`` is C^1 and non-decreasing.
    """

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError("cutoff delta must be positive")

    def derivatives(self, t):
        """``(chi, chi', chi'')`` at ``t``."""
        d = self.delta
        t = np.asarray(t, dtype=float)
        s = np.clip((t - d) / d, 0.0, 1.0)
        mid = (t > d) & (t < 2 * d)
        chi = np.where(t <= d, t, d * (1.0 + (-(s**3) + s**2 + s)))
        dchi = np.where(t <= d, 1.0, np.where(mid, -3 * s**2 + 2 * s + 1, 0.0))
        ddchi = np.where(mid, (-6 * s + 2) / d, 0.0)
        return chi, dchi, ddchi


def cutoff_chi(spec, t):
    """Evaluate ``chi_delta(t)`` for ``t >= 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("cutoff_chi needs t >= 0")
    return spec.derivatives(t)[0]


def default_delta(M, fraction=0.2):
    """``fraction`` times the smaller factor diameter."""
    return fraction * min(M.a.geometry.diameter, M.b.geometry.diameter)


# -------------------------------------------------------------- barycenter


def _check_points(geom, P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] != geom.dim:
        raise ValidationError(f"point coordinates have {P.shape[1]} columns, expected {geom.dim}")
    kind = type(geom).__name__
    if kind == "SphereModel" and np.abs(np.linalg.norm(P, axis=1) - 1).max() > 1e-9:
        raise ValidationError("sphere points must be unit vectors")
    if kind == "HyperbolicChartModel":
        if np.abs(geom.inner(P, P) + 1).max() > 1e-8 or np.any(P[:, 0] <= 0):
            raise ValidationError("hyperbolic points must lie on the upper hyperboloid")
        if np.any(geom.distance(P, geom.base[None, :]) > geom.chart_radius + 1e-9):
            raise ValidationError("hyperbolic points must lie in the chart disk")
    if kind == "MeshGraphModel":
        idx = P[:, 0]
        if np.any(idx != np.rint(idx)) or idx.min() < 0 or idx.max() >= geom.D.shape[0]:
            raise ValidationError("mesh points must be vertex indices")
    return P


@dataclass(frozen=True, eq=False)
class Barycenter:
    """Formal barycenter ``sum t_i delta_{x_i}`` with ``x_i = (xa_i, xb_i)``.

    Atoms are stored in a canonical order so that permuting the input
    gives an identical object.
    """

    weights: np.ndarray
    points_a: np.ndarray
    points_b: np.ndarray

    @classmethod
    def create(cls, M, weights, points_a, points_b, tol=1e-12):
        t = np.atleast_1d(np.asarray(weights, dtype=float))
        Pa = _check_points(M.a.geometry, points_a)
        Pb = _check_points(M.b.geometry, points_b)
        if not (len(t) == len(Pa) == len(Pb)) or len(t) == 0:
            raise ValidationError("barycenter needs matching, non-empty weight and point lists")
        if np.any(t < 0) or np.any(t > 1):
            raise ValidationError("barycenter weights must lie in [0, 1]")
        if abs(t.sum() - 1.0) > tol:
            raise ValidationError(f"barycenter weights sum to {t.sum():.15g}, not 1")
        keys = np.concatenate([Pa, Pb, t[:, None]], axis=1)
        order = np.lexsort(keys.T[::-1])
        return cls(t[order], Pa[order], Pb[order])

    @classmethod
    def single(cls, M, point_a, point_b):
        return cls.create(M, [1.0], [point_a], [point_b])

    @classmethod
    def random(cls, M, k, rng, on_nodes=None):
        """Dirichlet(1, ..., 1) weights; points uniform over nodes or chart disks."""
        t = rng.dirichlet(np.ones(k)) if k > 1 else np.ones(1)
        if on_nodes is None:
            on_nodes = M.mode == "full" and not (M.a.geometry.local and M.b.geometry.local)
        if on_nodes:
            M.require_full("node-based barycenters")
            Pa = M.a.nodes[rng.integers(0, len(M.a.nodes), size=k)]
            Pb = M.b.nodes[rng.integers(0, len(M.b.nodes), size=k)]
        else:
            Pa = M.a.geometry.random_points(rng, k)
            Pb = M.b.geometry.random_points(rng, k)
        t = t / t.sum()
        return cls.create(M, t, Pa, Pb, tol=1e-9)

    @property
    def k(self):
        return len(self.weights)

    def measure(self):
        return DiscreteMeasure(self.points_a, self.points_b, self.weights.copy())

    def as_dict(self):
        return {
            "weights": self.weights.tolist(),
            "points_a": self.points_a.tolist(),
            "points_b": self.points_b.tolist(),
        }


# --------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution of the local bubble quadrature.

    ``n_r`` Gauss-Legendre points per radial panel, panels on a geometric
    ladder reaching ``1/(ladder * lam)``; ``n_beta`` points for the angle
    splitting the radius between factors; ``n_theta`` trapezoid points per
    factor angle when other atoms are nearby (1 otherwise, by symmetry).
    """

    n_r: int = 8
    n_beta: int = 16
    n_theta: int = 16
    ladder: float = 8.0
    support: float = 1.25
    tail_panels: int = 2


MEASURE_QUAD = QuadratureSpec(n_r=4, n_beta=6, n_theta=6)


def _bump(x):
    """Smooth step from 1 (x <= 0) to 0 (x >= 1)."""
    x = np.clip(x, 0.0, 1.0)

    def f(z):
        return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    a, b = f(1.0 - x), f(x)
    return a / (a + b)


class BubbleField:
    """The test function ``phi_{lam, sigma}`` (optionally scaled by ``scale``).

    Parameters
    ----------
    M : ProductManifold4D
    sigma : Barycenter
    lam : float
    cutoff : CutoffSpec, optional
        Defaults to ``0.2 * min factor diameter``.
    quad : QuadratureSpec, optional
    scale : float
        Represents ``scale * phi``; see :meth:`scaled`.
    """

    def __init__(self, M, sigma, lam, cutoff=None, quad=None, scale=1.0, _shared=None):
        if not lam > 0:
            raise ValidationError("bubble scale lambda must be positive")
        self.manifold = M
        self.sigma = sigma
        self.lam = float(lam)
        self.cutoff = cutoff if cutoff is not None else CutoffSpec(default_delta(M))
        self.quad = quad if quad is not None else QuadratureSpec()
        self.scale = float(scale)
        keep = sigma.weights > 0
        self._t = sigma.weights[keep]
        self._xa = sigma.points_a[keep]
        self._xb = sigma.points_b[keep]
        ga, gb = M.a.geometry, M.b.geometry
        self.analytic = bool(ga.local and gb.local and M.constant_curvature)
        delta = self.cutoff.delta
        self.support_radius = 2 * delta * self.quad.support
        if self.analytic:
            inj = min(ga.injectivity_radius, gb.injectivity_radius)
            if self.support_radius >= inj:
                raise ConfigurationError(
                    f"cutoff delta={delta:.4g} too large: support {self.support_radius:.4g} "
                    f"reaches the injectivity radius {inj:.4g}"
                )
        else:
            M.require_full("bubble fields on non-constant-curvature factors")
        self.log_c = float(np.log(2 * self.lam) - np.log1p(4 * self.lam**2 * delta**2))
        self._shared = _shared if _shared is not None else {}

    def scaled(self, t):
        """``t * phi`` sharing the cached quadrature data."""
        return BubbleField(
            self.manifold, self.sigma, self.lam, self.cutoff, self.quad, scale=self.scale * t, _shared=self._shared
        )

    # ---------------------------------------------------------- pointwise
    def _profile(self, d):
        lam = self.lam
        chi, dchi, ddchi = self.cutoff.derivatives(d)
        q = 1.0 + lam**2 * chi**2
        G = np.log(2 * lam) - np.log(q)
        G1 = -2 * lam**2 * chi * dchi / q
        G2 = -2 * lam**2 * ((dchi**2 + chi * ddchi) * q - 2 * lam**2 * chi**2 * dchi**2) / q**2
        return G, G1, G2

    def _distances(self, Ya, Yb):
        ga, gb = self.manifold.a.geometry, self.manifold.b.geometry
        da = np.stack([ga.distance(Ya, x[None, :]) for x in self._xa])
        db = np.stack([gb.distance(Yb, x[None, :]) for x in self._xb])
        return da, db

    def _phi_from_distances(self, da, db):
        d = np.sqrt(da * da + db * db)
        G, _, _ = self._profile(d)
        return 0.25 * logsumexp(4 * G, b=self._t[:, None], axis=0)

    def values_at(self, Ya, Yb):
        """``scale * phi`` at product points given by factor coordinate rows."""
        da, db = self._distances(np.atleast_2d(Ya), np.atleast_2d(Yb))
        return self.scale * self._phi_from_distances(da, db)

    def _pointwise(self, Ya, Yb):
        """Base ``phi``, the Paneitz-form integrand of ``phi`` and atom distances."""
        M = self.manifold
        ga, gb = M.a.geometry, M.b.geometry
        da, db = self._distances(Ya, Yb)
        d = np.sqrt(da * da + db * db)
        G, G1, G2 = self._profile(d)
        a = 4 * G + np.log(self._t)[:, None]
        lse = logsumexp(a, axis=0)
        phi = 0.25 * lse
        w = np.exp(a - lse)
        safe = np.where(d > 0, d, 1.0)
        ca = np.where(d > 0, G1 * da / safe, 0.0)
        cb = np.where(d > 0, G1 * db / safe, 0.0)
        Va = 0.0
        Vb = 0.0
        for j in range(len(self._t)):
            Va = Va + (w[j] * ca[j])[:, None] * ga.unit_grad_distance(Ya, self._xa[j][None, :])
            Vb = Vb + (w[j] * cb[j])[:, None] * gb.unit_grad_distance(Yb, self._xb[j][None, :])
        grad_a2 = ga.inner(Va, Va) if np.ndim(Va) else np.zeros_like(phi)
        grad_b2 = gb.inner(Vb, Vb) if np.ndim(Vb) else np.zeros_like(phi)
        # Laplacian of distance in the product; G1 vanishes where d = 0
        lap_d = np.where(d > 0, (1.0 + ga.r_ct(da) + gb.r_ct(db)) / safe, 0.0)
        lap_g = G2 + G1 * lap_d
        lap_phi = np.sum(w * lap_g, axis=0) + 4 * (np.sum(w * G1**2, axis=0) - grad_a2 - grad_b2)
        ka, kb = ga.kappa, gb.kappa
        R = 2 * (ka + kb)
        pform = lap_phi**2 + (2.0 / 3.0) * R * (grad_a2 + grad_b2) - 2 * (ka * grad_a2 + kb * grad_b2)
        return phi, pform, d

    # ----------------------------------------------------- local quadrature
    def _radial_rule(self, quad):
        delta = self.cutoff.delta
        R = self.support_radius
        breaks = {0.0, delta, 2 * delta, R}
        r = delta
        while r > 1.0 / (quad.ladder * self.lam):
            r *= 0.5
            breaks.add(r)
        tail = np.linspace(2 * delta, R, quad.tail_panels + 1)
        breaks.update(tail.tolist())
        b = np.array(sorted(breaks))
        x, wx = np.polynomial.legendre.leggauss(quad.n_r)
        lo, hi = b[:-1, None], b[1:, None]
        nodes = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
        weights = 0.5 * (hi - lo) * wx[None, :]
        return nodes.ravel(), weights.ravel()

    def _neighbours(self):
        M = self.manifold
        n = len(self._t)
        D = np.zeros((n, n))
        for i in range(n):
            D[i] = M.distance(self._xa[i][None, :], self._xb[i][None, :], self._xa, self._xb)
        return D

    def _chart_points(self, i, quad, isolated):
        """Yield ``(Ya, Yb, weight)`` chunks covering ``B_R(x_i)``."""
        M = self.manifold
        ga, gb = M.a.geometry, M.b.geometry
        r, wr = self._radial_rule(quad)
        xb_, wb_ = np.polynomial.legendre.leggauss(quad.n_beta)
        beta = 0.25 * np.pi * (xb_ + 1.0)
        wbeta = 0.25 * np.pi * wb_
        rr = np.repeat(r, len(beta))
        bb = np.tile(beta, len(r))
        ra, rb = rr * np.cos(bb), rr * np.sin(bb)
        w = np.repeat(wr, len(beta)) * np.tile(wbeta, len(r)) * rr * ga.sn(ra) * gb.sn(rb)
        nt = 1 if isolated else quad.n_theta
        theta = 2 * np.pi * np.arange(nt) / nt
        wt = (2 * np.pi / nt) ** 2
        for ta in theta:
            Ya = ga.exp_polar(self._xa[i], ra, np.full_like(ra, ta))
            Ya = np.repeat(Ya, nt, axis=0)
            Yb = gb.exp_polar(self._xb[i], np.repeat(rb, nt), np.tile(theta, len(rb)))
            yield Ya, Yb, np.repeat(w, nt) * wt

    def _partition(self, i, d):
        # cutoff bumps weighted by (1 + lam^2 chi^2)^-2, so each concentrated
        # peak is integrated almost entirely by its own chart
        delta = self.cutoff.delta
        chi = self.cutoff.derivatives(d)[0]
        eta = _bump((d - 2 * delta) / (self.support_radius - 2 * delta)) / (1.0 + (self.lam * chi) ** 2) ** 2
        tot = eta.sum(axis=0)
        return np.where(tot > 0, eta[i] / np.where(tot > 0, tot, 1.0), 0.0)

    def _rule(self, quad, with_form, with_points):
        key = ("rule", quad, with_form, with_points)
        if key in self._shared:
            return self._shared[key]
        D = self._neighbours()
        n = len(self._t)
        out = {"w": [], "phi": [], "form": [], "Ya": [], "Yb": []}
        for i in range(n):
            isolated = not np.any((D[i] < 2 * self.support_radius) & (np.arange(n) != i))
            for Ya, Yb, w in self._chart_points(i, quad, isolated):
                if with_form:
                    phi, form, d = self._pointwise(Ya, Yb)
                    out["form"].append(form)
                else:
                    da, db = self._distances(Ya, Yb)
                    d = np.sqrt(da * da + db * db)
                    phi = self._phi_from_distances(da, db)
                psi = self._partition(i, d) if not isolated else np.ones_like(w)
                out["w"].append(w * psi)
                out["phi"].append(phi)
                if with_points:
                    out["Ya"].append(Ya)
                    out["Yb"].append(Yb)
        rule = {k: np.concatenate(v) if v else None for k, v in out.items()}
        covered = float(rule["w"].sum())
        rule["outside"] = self.manifold.volume - covered
        if rule["outside"] <= 0:
            raise NumericalError("bubble supports cover the manifold; reduce delta", covered=covered)
        self._shared[key] = rule
        return rule

    # ------------------------------------------------------------ energies
    def raw_terms(self):
        """``<P u,u>``, ``int Q u``, ``int u``, ``log int exp(4u)`` for ``u = scale * phi``."""
        M = self.manifold
        if not self.analytic:
            return raw_terms(M, self.to_field())
        t = self.scale
        rule = self._rule(self.quad, True, False)
        w, phi = rule["w"], rule["phi"]
        out = rule["outside"]
        quad = t * t * float(w @ rule["form"])
        integral = t * (float(w @ phi) + out * self.log_c)
        logZ = float(
            logsumexp(np.append(4 * t * phi, 4 * t * self.log_c), b=np.append(w, out))
        )
        return RawTerms(quadratic=quad, q_integral=q_constant(M) * integral, integral=integral, log_integral=logZ)

    # ---------------------------------------------------------- node views
    def node_values(self):
        M = self.manifold
        M.require_full("bubble node values")
        ga, gb = M.a.geometry, M.b.geometry
        Da = ga.pairwise(M.a.nodes, self._xa)  # (na, k)
        Db = gb.pairwise(M.b.nodes, self._xb)  # (nb, k)
        d = np.sqrt(Da.T[:, :, None] ** 2 + Db.T[:, None, :] ** 2)  # (k, na, nb)
        G, _, _ = self._profile(d)
        logt = np.log(self._t)[:, None, None]
        return self.scale * 0.25 * logsumexp(4 * G + logt, axis=0)

    def to_field(self):
        """Node-sampled :class:`ScalarField` (coefficients by quadrature analysis)."""
        key = "field"
        if key not in self._shared:
            self._shared[key] = ScalarField.from_values(self.manifold, self.node_values() / self.scale)
        base = self._shared[key]
        return ScalarField.from_values(self.manifold, self.scale * base.values)

    @property
    def values(self):
        return self.to_field().values

    @property
    def coeffs(self):
        return self.to_field().coeffs

    # ------------------------------------------------------------ measure
    def measure(self, quad=MEASURE_QUAD):
        """Normalized ``exp(4u) dV`` as a :class:`DiscreteMeasure`.

        Local quadrature points inside the supports, node points outside
        (their masses rescaled to the exact outside volume).
        """
        M = self.manifold
        if not self.analytic:
            return field_measure(M, self.to_field())
        M.require_full("bubble measures")
        rule = self._rule(quad, False, True)
        t = self.scale
        Pa, Pb = M.node_points()
        da, db = self._distances(Pa, Pb)
        outside = np.all(np.sqrt(da * da + db * db) > self.support_radius, axis=0)
        wn = M.weights.ravel()[outside]
        if wn.sum() > 0:
            wn = wn * (rule["outside"] / wn.sum())
        logm = np.concatenate(
            [np.log(rule["w"]) + 4 * t * rule["phi"], np.log(wn) + 4 * t * self.log_c]
        )
        logm -= logsumexp(logm)
        return DiscreteMeasure(
            np.concatenate([rule["Ya"], Pa[outside]]),
            np.concatenate([rule["Yb"], Pb[outside]]),
            np.exp(logm),
        )


def bubble_field(M, sigma, lam, spec=None, quad=None):
    """The bubble ``phi_{lam, sigma}``; see :class:`BubbleField`."""
    if M.mode == "spectral-only" and not (M.a.geometry.local and M.b.geometry.local):
        raise SpectralOnlyError("bubble fields need nodes or local chart geometry")
    return BubbleField(M, sigma, lam, spec, quad)


# ----------------------------------------------------------------- measures


@dataclass(eq=False)
class DiscreteMeasure:
    """Weighted atoms at product points ``(points_a[i], points_b[i])``."""

    points_a: np.ndarray
    points_b: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.points_a = np.atleast_2d(np.asarray(self.points_a, dtype=float))
        self.points_b = np.atleast_2d(np.asarray(self.points_b, dtype=float))
        self.masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if not (len(self.points_a) == len(self.points_b) == len(self.masses)):
            raise ValidationError("measure arrays have different lengths")
        if np.any(self.masses < 0):
            raise ValidationError("measure masses must be non-negative")

    @property
    def total(self):
        return float(self.masses.sum())

    def __len__(self):
        return len(self.masses)

    def subset(self, idx):
        return DiscreteMeasure(self.points_a[idx], self.points_b[idx], self.masses[idx])


def field_measure(M, u):
    """Normalized ``exp(4u) dV`` of a node field."""
    Pa, Pb = M.node_points()
    logm = 4 * u.values.ravel() + np.log(M.weights.ravel())
    logm -= logsumexp(logm)
    return DiscreteMeasure(Pa, Pb, np.exp(logm))


def to_measure(M, u):
    if isinstance(u, DiscreteMeasure):
        return u
    if isinstance(u, Barycenter):
        return u.measure()
    if isinstance(u, BubbleField):
        return u.measure()
    return field_measure(M, u)


def pairwise_distance(M, m1, m2, fast=False):
    """Product distances between the atoms of two measures."""
    ga, gb = M.a.geometry, M.b.geometry
    if fast:
        Da = ga.pairwise_fast(m1.points_a, m2.points_a)
        Db = gb.pairwise_fast(m1.points_b, m2.points_b)
    else:
        Da = ga.pairwise(m1.points_a, m2.points_a)
        Db = gb.pairwise(m1.points_b, m2.points_b)
    return np.sqrt(Da * Da + Db * Db)


def _compress(M, m, n_max):
    """Keep ``n_max`` atoms chosen by mass-weighted farthest-point sampling.

    Every other atom is moved to its nearest kept atom; returns the
    compressed measure and the moved mass times distance, which bounds the
    change in ``W_1``.
    """
    if len(m) <= n_max:
        return m, 0.0
    first = int(np.argmax(m.masses))
    keep = [first]
    near = pairwise_distance(M, m.subset([first]), m, fast=True)[0]
    owner = np.zeros(len(m), dtype=int)
    for j in range(1, n_max):
        score = m.masses * near
        nxt = int(np.argmax(score))
        if score[nxt] <= 0:
            break
        keep.append(nxt)
        d = pairwise_distance(M, m.subset([nxt]), m, fast=True)[0]
        closer = d < near
        near = np.where(closer, d, near)
        owner[closer] = j
    near[keep] = 0.0
    masses = np.bincount(owner, weights=m.masses, minlength=len(keep))
    kept = m.subset(np.array(keep))
    return DiscreteMeasure(kept.points_a, kept.points_b, masses), float(m.masses @ near)


@dataclass(frozen=True)
class TransportResult:
    """``W_1`` value and the error bound from support compression."""

    value: float
    compression_bound: float
    support_sizes: tuple


def measure_distance(M, m1, m2, n_max=300, max_vars=20_000, mass_tol=1e-9):
    """Kantorovich ``W_1`` distance with product geodesic costs.

    Solved exactly as a transport LP when the product of the support sizes
    is at most ``max_vars``. Otherwise supports larger than ``n_max`` are
    compressed first; the reported ``compression_bound`` bounds the error.
    """
    m1, m2 = to_measure(M, m1), to_measure(M, m2)
    if abs(m1.total - m2.total) > mass_tol:
        raise ValidationError(f"measures have different total mass ({m1.total:.12g} vs {m2.total:.12g})")
    b1 = b2 = 0.0
    if len(m1) * len(m2) > max_vars:
        m1, b1 = _compress(M, m1, n_max)
        m2, b2 = _compress(M, m2, n_max)
    C = pairwise_distance(M, m1, m2)
    n1, n2 = C.shape
    rows = sparse.vstack(
        [sparse.kron(sparse.eye(n1), np.ones((1, n2))), sparse.kron(np.ones((1, n1)), sparse.eye(n2))]
    ).tocsr()
    b = np.concatenate([m1.masses, m2.masses * (m1.total / m2.total)])
    res = linprog(C.ravel(), A_eq=rows, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError("transport LP failed", status=int(res.status), message=res.message)
    return TransportResult(float(res.fun), b1 + b2, (n1, n2))


# ----------------------------------------------------------- concentration


@dataclass
class ConcentrationReport:
    """Greedy mass-capturing balls of radius ``r``."""

    points_a: np.ndarray
    points_b: np.ndarray
    captured: np.ndarray
    residual: float
    eps: float
    r: float

    @property
    def passed(self):
        return self.residual < self.eps

    def as_dict(self):
        return {
            "points_a": self.points_a.tolist(),
            "points_b": self.points_b.tolist(),
            "captured": self.captured.tolist(),
            "residual": self.residual,
            "eps": self.eps,
            "r": self.r,
            "passed": bool(self.passed),
        }


def concentration_points(M, u, k, eps=0.05, r=0.3, n_candidates=400):
    """Pick up to ``k`` balls of radius ``r`` greedily by captured conformal mass.

    Each pick evaluates ball masses of the remaining mass at candidate
    atoms (heaviest and densest), then centres the ball at the densest atom
    inside the best ball. Returns the picks and the normalized mass left
    outside all balls.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    m = to_measure(M, u)
    masses = m.masses / m.total
    density = _density(M, u, m)
    remaining = masses.copy()
    alive = np.ones(len(m), dtype=bool)
    pa, pb, cap = [], [], []
    for _ in range(k):
        if remaining.sum() <= 0:
            break
        live = np.nonzero(alive)[0]
        by_mass = live[np.argsort(-remaining[live], kind="stable")[:n_candidates]]
        by_dens = live[np.argsort(-density[live], kind="stable")[:n_candidates]]
        cand = np.unique(np.concatenate([by_mass, by_dens]))
        D = pairwise_distance(M, m.subset(cand), m, fast=True)
        ball = (D <= r) @ remaining
        best = cand[int(np.argmax(ball))]
        near = np.nonzero((pairwise_distance(M, m.subset([best]), m, fast=True)[0] <= r) & alive)[0]
        centre = near[int(np.argmax(density[near]))]
        inside = pairwise_distance(M, m.subset([centre]), m, fast=True)[0] <= r
        cap.append(float(remaining[inside].sum()))
        remaining[inside] = 0.0
        alive &= ~inside
        pa.append(m.points_a[centre])
        pb.append(m.points_b[centre])
    return ConcentrationReport(
        points_a=np.array(pa),
        points_b=np.array(pb),
        captured=np.array(cap),
        residual=float(max(remaining.sum(), 0.0)),
        eps=float(eps),
        r=float(r),
    )


def _density(M, u, m):
    """Mass per unit volume of each atom, up to a common factor."""
    if isinstance(u, BubbleField) and u.analytic:
        return u.values_at(m.points_a, m.points_b)
    if isinstance(u, (BubbleField, ScalarField)):
        return u.values.ravel()
    return m.masses


def project_psi(M, u, k, r=0.3, eps=0.05):
    """Surrogate projection onto ``M_k``: captured masses, renormalized."""
    rep = concentration_points(M, u, k, eps=eps, r=r)
    cap = rep.captured
    keep = cap > 0
    if not np.any(keep):
        raise NumericalError("no mass captured; cannot form a barycenter")
    t = cap[keep] / cap[keep].sum()
    return Barycenter.create(M, t, rep.points_a[keep], rep.points_b[keep], tol=1e-9)


def barycenter_distance(M, s1, s2):
    """``W_1`` between the measures of two barycenters (exact LP)."""
    return measure_distance(M, s1.measure(), s2.measure()).value


def ball_fractions(M, u, centres_a, centres_b, radius):
    """Fractions of ``int exp(4u)`` inside ``B_radius(c_i)``."""
    m = to_measure(M, u)
    C = DiscreteMeasure(centres_a, centres_b, np.zeros(len(centres_a)))
    D = pairwise_distance(M, C, m, fast=True)
    return (D <= radius) @ (m.masses / m.total)

"""The Euler functional II and its rho-deformation.

    II_rho(u) = <P u, u> + 4 rho int Q u dV - rho k_P log int exp(4u) dV

Critical points satisfy ``P u + 2 rho Q = 2 rho k_P exp(4u) / int exp(4u)``.
At ``rho = 1`` this is the functional whose critical points give constant
Q-curvature metrics ``exp(2u) g``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .geometry.product import ScalarField
from .paneitz import paneitz_operator, q_constant, q_curvature, total_q


@dataclass(frozen=True)
class EnergyBreakdown:
    """Terms of ``II_rho(u)``; ``total = quadratic + linear - logTerm``."""

    quadratic: float
    linear: float
    logTerm: float
    rho: float
    log_integral: float
    k_P: float

    @property
    def total(self):
        return self.quadratic + self.linear - self.logTerm

    def as_dict(self):
        return {
            "quadratic": self.quadratic,
            "linear": self.linear,
            "logTerm": self.logTerm,
            "total": self.total,
            "rho": self.rho,
            "log_integral": self.log_integral,
            "k_P": self.k_P,
        }


@dataclass(frozen=True)
class RawTerms:
    """``<Pu,u>``, ``int Q u``, ``int u`` and ``log int exp(4u)`` of one field."""

    quadratic: float
    q_integral: float
    integral: float
    log_integral: float

    def breakdown(self, rho, k_P):
        return EnergyBreakdown(
            quadratic=self.quadratic,
            linear=4.0 * rho * self.q_integral,
            logTerm=rho * k_P * self.log_integral,
            rho=float(rho),
            log_integral=self.log_integral,
            k_P=k_P,
        )


def log_integral_exp4(M, values):
    """``log int exp(4u) dV`` with a max shift."""
    W = M.weights
    return float(logsumexp(4.0 * np.asarray(values), b=W))


def raw_terms(M, u):
    """Raw integrals of ``u``; bubble fields supply their own quadrature."""
    if hasattr(u, "raw_terms"):
        return u.raw_terms()
    if not isinstance(u, ScalarField):
        raise ValidationError("expected a ScalarField or a bubble field")
    if u.manifold is not M:
        raise ValidationError("field belongs to a different manifold")
    M.require_nodes("the functional")
    op = paneitz_operator(M)
    c = u.coeffs
    quad = float(c @ op.field_matvec(c))
    Q = q_curvature(M)
    q_int = float(Q.coeffs @ c)
    return RawTerms(
        quadratic=quad,
        q_integral=q_int,
        integral=u.mean() * M.volume,
        log_integral=log_integral_exp4(M, u.values),
    )


def ii_value(M, u, rho=1.0):
    """Evaluate ``II_rho(u)`` and return its terms."""
    return raw_terms(M, u).breakdown(rho, total_q(M))


def ii_gradient(M, u, rho=1.0):
    """Coefficient-space gradient of ``II_rho``.

    ``2 P u + 4 rho Q - 4 rho k_P exp(4u) / int exp(4u)``, projected onto the
    field basis. This is the exact gradient of the discrete functional.
    """
    if u.manifold is not M:
        raise ValidationError("field belongs to a different manifold")
    return ScalarField.from_coeffs(M, 2.0 * residual_coeffs(M, u, rho))


def residual_coeffs(M, u, rho=1.0):
    """Coefficients of ``F(u) = P u + 2 rho Q - 2 rho k_P exp(4u) / int exp(4u)``."""
    op = paneitz_operator(M)
    c = u.coeffs
    U = u.values
    shift = float(U.max())
    e = np.exp(4.0 * (U - shift))
    Z = M.integrate(e)
    Q = q_curvature(M)
    kP = total_q(M)
    return op.field_matvec(c) + 2.0 * rho * Q.coeffs - 2.0 * rho * kP * M.analyze(e) / Z


@dataclass(frozen=True)
class KernelRaySlope:
    """Asymptotic slope of ``t -> II(t v)`` along a kernel direction."""

    formula: float
    empirical: float
    t_values: tuple
    ii_values: tuple
    form_value: float

    @property
    def relative_gap(self):
        return abs(self.empirical - self.formula) / max(abs(self.formula), 1e-12)


def kernel_ray_slope(M, v, t_values=None, rel_tol=1e-8):
    """``4 (int Q v - k_P max v)`` and a least-squares slope of ``II(t v)``.

    Raises :class:`ValidationError` when ``v`` is not in the kernel of P.
    """
    M.require_nodes("kernel_ray_slope")
    op = paneitz_operator(M)
    c = v.coeffs
    form = float(c @ op.field_matvec(c))
    mu, _ = op.field_eigh()
    scale = rel_tol * float(np.abs(mu).max()) * float(c @ c)
    if form > scale:
        raise ValidationError(f"field is not in the kernel of P (<Pv,v> = {form:.3e})")
    kP = total_q(M)
    Q = q_curvature(M)
    formula = 4.0 * (float(Q.coeffs @ c) - kP * float(v.values.max()))
    if t_values is None:
        t_values = np.linspace(20.0, 40.0, 5)
    t_values = np.asarray(t_values, dtype=float)
    vals = np.array([ii_value(M, float(t) * v).total for t in t_values])
    slope = float(np.polyfit(t_values, vals, 1)[0])
    return KernelRaySlope(formula, slope, tuple(t_values.tolist()), tuple(vals.tolist()), form)


def constant_solution(M):
    """Mean-zero constant solution of the rho-problem on constant-Q models.

    When Q is constant, ``u = c`` solves ``2 rho Q = 2 rho k_P exp(4c)/(V exp(4c))``
    for every ``c`` and every ``rho``; the mean-zero representative is ``0``.
    Returns the field or ``None`` if Q is not constant.
    """
    if q_constant(M) is None:
        return None
    return ScalarField.constant(M, 0.0)

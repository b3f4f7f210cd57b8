"""Numerical probes of the Adams inequality and its improved form.

On a model with ``P >= 0`` and ``ker P = constants``

    log int exp(4 (u - mean u)) dV <= <P u, u> / (8 pi^2) + C.

If the conformal volume is spread over ``l + 1`` separated regions the
constant ``1/(8 pi^2)`` can be replaced by ``1/(8 (l + 1) pi^2)`` (up to
an arbitrarily small loss).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bubbles import ball_fractions
from .errors import PreconditionError, ValidationError
from .functional import raw_terms
from .paneitz import spectrum

EIGHT_PI2 = 8 * np.pi**2


@dataclass
class InequalityReport:
    """Per-member sides of the inequality, tail slope and calibrated constant.

    ``slope_bound`` is the sharp constant being probed. ``C`` is the
    calibrated additive constant (largest residual over the calibration
    set) and ``satisfied`` flags ``logTerm <= quadratic * slope_bound + C``.
    """

    family: str
    quadratic: np.ndarray
    logTerm: np.ndarray
    labels: list
    slope_bound: float
    tail_slope: float
    tail_count: int
    C: float
    satisfied: np.ndarray
    included: np.ndarray
    truncation: dict = field(default_factory=dict)
    fractions: Optional[np.ndarray] = None

    @property
    def slope_ratio(self):
        return self.tail_slope / self.slope_bound

    @property
    def all_satisfied(self):
        return bool(np.all(self.satisfied[self.included]))

    def rows(self):
        out = []
        for i, lab in enumerate(self.labels):
            row = {
                "label": lab,
                "quadratic": float(self.quadratic[i]),
                "logTerm": float(self.logTerm[i]),
                "residual": float(self.logTerm[i] - self.slope_bound * self.quadratic[i]),
                "included": bool(self.included[i]),
                "satisfied": bool(self.satisfied[i]),
            }
            if self.fractions is not None:
                row["fractions"] = [float(x) for x in self.fractions[i]]
            out.append(row)
        return out

    def as_dict(self):
        return {
            "family": self.family,
            "slope_bound": self.slope_bound,
            "tail_slope": self.tail_slope,
            "slope_ratio": self.slope_ratio,
            "tail_count": self.tail_count,
            "C": self.C,
            "all_satisfied": self.all_satisfied,
            "truncation": self.truncation,
            "rows": self.rows(),
        }


def _sides(M, u):
    r = raw_terms(M, u)
    mean = r.integral / M.volume
    return r.quadratic, r.log_integral - 4.0 * mean


def tail_slope(quadratic, logTerm, fraction=0.25):
    """Least-squares slope over the members in the top ``fraction`` of quadratic values."""
    q = np.asarray(quadratic, dtype=float)
    L = np.asarray(logTerm, dtype=float)
    if len(q) < 2:
        return np.nan, len(q)
    cut = np.quantile(q, 1.0 - fraction)
    sel = q >= cut
    if sel.sum() < 2:
        sel = np.argsort(q)[-2:]
        q_t, L_t = q[sel], L[sel]
    else:
        q_t, L_t = q[sel], L[sel]
    if np.ptp(q_t) == 0:
        return np.nan, len(q_t)
    return float(np.polyfit(q_t, L_t, 1)[0]), len(q_t)


def _require_positive(M):
    spec = spectrum(M)
    if spec.negative_count > 0:
        raise PreconditionError(
            f"the Adams inequality needs P >= 0; found {spec.negative_count} negative eigenvalues"
        )
    if spec.kernel_dim != 1:
        raise PreconditionError(f"the Adams inequality needs ker P = constants (kernel dim {spec.kernel_dim})")
    return spec


def _truncation(M):
    return {"s_max": M.s_max, "n_modes": int(M.n_modes), "node_shape": list(M.node_shape) if M.mode != "spectral-only" else None}


def adams_report(M, family, labels=None, C=None, tail_fraction=0.25, name="family", tol=1e-12):
    """Evaluate both sides of the Adams inequality on each member.

    Parameters
    ----------
    family : list of ScalarField or BubbleField
    C : float, optional
        Constant to test against. By default it is calibrated as the
        largest residual ``logTerm - quadratic / (8 pi^2)`` over the family.
    """
    _require_positive(M)
    sides = np.array([_sides(M, u) for u in family], dtype=float).reshape(-1, 2)
    q, L = sides[:, 0], sides[:, 1]
    bound = 1.0 / EIGHT_PI2
    resid = L - bound * q
    C_used = float(resid.max()) if C is None else float(C)
    slope, count = tail_slope(q, L, tail_fraction)
    return InequalityReport(
        family=name,
        quadratic=q,
        logTerm=L,
        labels=list(labels) if labels is not None else [str(i) for i in range(len(q))],
        slope_bound=bound,
        tail_slope=slope,
        tail_count=count,
        C=C_used,
        satisfied=resid <= C_used + tol,
        included=np.ones(len(q), dtype=bool),
        truncation=_truncation(M),
    )


def improved_adams_report(
    M, ell, gamma0, delta0, family, centres_a, centres_b, radius, labels=None, C=None, tail_fraction=0.25, name="family"
):
    """Adams probe restricted to members spreading mass over ``ell + 1`` balls.

    A member is kept when every ball ``B_radius(c_i)`` holds at least
    ``gamma0`` of the conformal volume. Balls must be at least ``delta0``
    apart. ``ell = 0`` reduces to :func:`adams_report`.
    """
    if ell == 0:
        return adams_report(M, family, labels=labels, C=C, tail_fraction=tail_fraction, name=name)
    if ell < 0:
        raise ValidationError("ell must be >= 0")
    ca = np.atleast_2d(np.asarray(centres_a, dtype=float))
    cb = np.atleast_2d(np.asarray(centres_b, dtype=float))
    if len(ca) != ell + 1 or len(cb) != ell + 1:
        raise ValidationError(f"need ell + 1 = {ell + 1} centres")
    if not 0 < gamma0 < 1.0 / (ell + 1):
        raise ValidationError("gamma0 must lie in (0, 1/(ell+1))")
    for i in range(ell + 1):
        for j in range(i + 1, ell + 1):
            gap = float(M.distance(ca[i], cb[i], ca[j], cb[j])) - 2 * radius
            if gap < delta0:
                raise ValidationError(f"regions {i} and {j} are {gap:.4g} apart, below delta0 = {delta0}")
    _require_positive(M)
    fr = np.array([ball_fractions(M, u, ca, cb, radius) for u in family])
    keep = np.all(fr >= gamma0, axis=1)
    sides = np.array([_sides(M, u) for u in family], dtype=float).reshape(-1, 2)
    q, L = sides[:, 0], sides[:, 1]
    bound = 1.0 / (EIGHT_PI2 * (ell + 1))
    resid = L - bound * q
    if C is None:
        C_used = float(resid[keep].max()) if keep.any() else np.nan
    else:
        C_used = float(C)
    slope, count = tail_slope(q[keep], L[keep], tail_fraction) if keep.sum() >= 2 else (np.nan, int(keep.sum()))
    return InequalityReport(
        family=name,
        quadratic=q,
        logTerm=L,
        labels=list(labels) if labels is not None else [str(i) for i in range(len(q))],
        slope_bound=bound,
        tail_slope=slope,
        tail_count=count,
        C=C_used,
        satisfied=resid <= C_used + 1e-12,
        included=keep,
        truncation=_truncation(M),
        fractions=fr,
    )

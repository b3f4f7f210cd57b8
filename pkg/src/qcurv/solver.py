"""Solvers for the constant Q-curvature equation and the min-max witness.

The rho-problem is ``P u + 2 rho Q = 2 rho k_P exp(4u) / int exp(4u)``;
``rho = 1`` gives ``P u + 2 Q = 2 Qbar exp(4u)`` with ``Qbar = k_P / int exp(4u)``,
i.e. ``exp(2u) g`` has constant Q-curvature ``Qbar``. All fields are
kept in the mean-zero gauge.
"""

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .bubbles import Barycenter, BubbleField, CutoffSpec, QuadratureSpec, bubble_field
from .errors import NumericalError, PreconditionError, ValidationError
from .functional import ii_value, residual_coeffs
from .geometry.product import ScalarField, random_field
from .paneitz import EIGHT_PI2, conformal_q, paneitz_operator, q_curvature, regime, spectrum, total_q


@dataclass(frozen=True)
class SolveOptions:
    """Solver settings.

    ``initializer`` is ``"zero"``, ``"random"``, ``"bubble"`` (uses
    ``bubble_sigma`` and ``bubble_lambda``) or a :class:`ScalarField`.
    """

    max_iters: int = 500
    armijo: float = 1e-4
    shrink: float = 0.5
    min_step: float = 1e-12
    grad_tol: float = 2e-10
    residual_tol: float = 1e-10
    rho_schedule: tuple = (0.9, 0.95, 1.0)
    initializer: Any = "zero"
    init_amplitude: float = 0.3
    bubble_sigma: Optional[Barycenter] = None
    bubble_lambda: float = 5.0
    seed: int = 0
    newton_max_iters: int = 25
    basin_factor: float = 1e-2
    bisect_floor: float = 1e-3
    polish: bool = True
    degenerate_tol: float = 1e-9

    def __post_init__(self):
        for name in ("grad_tol", "residual_tol", "armijo", "min_step", "bisect_floor", "basin_factor"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"SolveOptions.{name} must be positive")
        if not 0 < self.shrink < 1:
            raise ValidationError("SolveOptions.shrink must lie in (0, 1)")
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise ValidationError("iteration limits must be >= 1")
        if any(not 0.5 <= r <= 1.5 for r in self.rho_schedule):
            raise ValidationError("rho schedule must lie in [0.5, 1.5]")


@dataclass
class IterRecord:
    ii: float
    grad_norm: float
    residual_norm: float
    sup_norm: float
    step: float = 0.0


@dataclass
class SolveReport:
    """Outcome of a solve; ``u`` is mean-zero, ``u_normalized`` has ``int exp(4u) = 1``."""

    status: str
    method: str
    rho: float
    u: ScalarField
    u_normalized: ScalarField
    history: list
    residual_norm: float
    q_bar: float
    q_tilde_deviation: float
    kP_recomputed: float
    k_P: float
    regime: dict
    iterations: int
    residual_sequence: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self):
        return self.status == "converged"

    def as_dict(self, with_coeffs=False):
        out = {
            "status": self.status,
            "method": self.method,
            "rho": self.rho,
            "residual_norm": self.residual_norm,
            "q_bar": self.q_bar,
            "q_tilde_deviation": self.q_tilde_deviation,
            "k_P": self.k_P,
            "kP_recomputed": self.kP_recomputed,
            "regime": self.regime,
            "iterations": self.iterations,
            "sup_norm": float(np.abs(self.u.values).max()),
            "residual_sequence": [float(x) for x in self.residual_sequence],
            "message": self.message,
            "history": [vars(h) for h in self.history],
        }
        if with_coeffs:
            out["coeffs"] = self.u.coeffs.tolist()
        return out


# ------------------------------------------------------------------ helpers


def _check_model(M, opts, what):
    kP = total_q(M)
    ratio = kP / EIGHT_PI2
    k = round(ratio)
    if k >= 1 and abs(ratio - k) <= opts.degenerate_tol * max(1.0, ratio):
        raise PreconditionError(
            f"k_P = {kP:.12g} = 8*{k}*pi^2: existence needs k_P != 8 k pi^2 "
            "(compactness fails in this case); refusing to solve"
        )
    M.require_nodes(what)
    spec = spectrum(M)
    return kP, regime(kP, spec.negative_count)


def _mean_zero(M, c):
    c = np.array(c, dtype=float)
    c[0] = 0.0
    return ScalarField.from_coeffs(M, c)


def _initial_field(M, opts):
    init = opts.initializer
    if isinstance(init, ScalarField):
        return _mean_zero(M, init.coeffs)
    if init == "zero":
        return ScalarField.constant(M, 0.0)
    if init == "random":
        rng = np.random.default_rng(opts.seed)
        return random_field(M, rng, amplitude=opts.init_amplitude)
    if init == "bubble":
        if opts.bubble_sigma is None:
            raise ValidationError("bubble initializer needs bubble_sigma")
        B = bubble_field(M, opts.bubble_sigma, opts.bubble_lambda)
        return _mean_zero(M, B.to_field().coeffs)
    raise ValidationError(f"unknown initializer {init!r}")


def _preconditioner(M):
    """Symmetric positive operator ``2 |P| + 1`` on the field block, as a solve."""
    op = paneitz_operator(M)
    mu, U = op.field_eigh()
    d = 2.0 * np.abs(mu) + 1.0
    if U is None:
        return lambda g: g / d
    return lambda g: U @ ((U.T @ g) / d)


def _finalize(M, u, rho, kP, reg, status, method, history, iterations, rseq, message=""):
    u = _mean_zero(M, u.coeffs)
    F = residual_coeffs(M, u, rho)
    U = u.values
    logZ = float(np.log(M.integrate(np.exp(4.0 * (U - U.max())))) + 4.0 * U.max())
    q_bar = kP * np.exp(-logZ)
    cd = conformal_q(M, u, max_abs=max(8.0, float(np.abs(U).max()) + 1.0))
    # exp(-4u)(P u / 2 + rho Q) should equal rho * Qbar
    qt = cd.q_tilde + (rho - 1.0) * q_curvature(M).values * np.exp(-4.0 * U)
    target = rho * q_bar
    if abs(target) > 1e-12:
        dev = float(np.abs(qt - target).max() / abs(target))
    else:
        dev = float(np.abs(qt).max())
    un = u - 0.25 * logZ
    return SolveReport(
        status=status,
        method=method,
        rho=float(rho),
        u=u,
        u_normalized=un,
        history=history,
        residual_norm=float(np.linalg.norm(F)),
        q_bar=float(q_bar),
        q_tilde_deviation=dev,
        kP_recomputed=cd.total_q,
        k_P=kP,
        regime=reg,
        iterations=iterations,
        residual_sequence=rseq,
        message=message,
    )


# ------------------------------------------------------------------ descent


def minimize_ii(M, opts=None, rho=1.0, u0=None):
    """Preconditioned backtracking gradient descent on ``II_rho``.

    Descent directions are ``-(2|P| + 1)^{-1} grad``, an H^2-type metric
    that makes the step size independent of the truncation. Accepted
    steps never increase II. When ``opts.polish`` is set and the iterate
    ends inside the Newton basin, a Newton polish brings the residual to
    ``opts.residual_tol`` (plain descent stalls at roundoff in II first).
    """
    opts = opts or SolveOptions()
    kP, reg = _check_model(M, opts, "minimize_ii")
    u = _mean_zero(M, (u0 if u0 is not None else _initial_field(M, opts)).coeffs)
    prec = _preconditioner(M)
    c = u.coeffs.copy()
    val = ii_value(M, u, rho).total
    history = []
    status = "max-iterations"
    it = 0
    for it in range(1, opts.max_iters + 1):
        g = 2.0 * residual_coeffs(M, ScalarField.from_coeffs(M, c), rho)
        g[0] = 0.0
        gn = float(np.linalg.norm(g))
        history.append(IterRecord(val, gn, 0.5 * gn, float(np.abs(M.synthesize(c)).max())))
        if 0.5 * gn < opts.residual_tol or gn < opts.grad_tol:
            status = "converged"
            break
        d = -prec(g)
        d[0] = 0.0
        slope = float(g @ d)
        step = 1.0
        while step >= opts.min_step:
            trial = c + step * d
            tv = ii_value(M, ScalarField.from_coeffs(M, trial), rho).total
            if tv <= val + opts.armijo * step * slope:
                break
            step *= opts.shrink
        else:
            status = "line-search-stalled"
            break
        c, val = trial, tv
        history[-1].step = step
    u = ScalarField.from_coeffs(M, c)
    rseq = [h.residual_norm for h in history]
    method = "gradient-descent"
    msg = ""
    if opts.polish and status != "converged":
        try:
            nr = newton_refine(M, u, rho, opts)
        except (PreconditionError, NumericalError) as exc:
            msg = f"Newton polish skipped: {exc}"
        else:
            if nr.converged:
                u, status, method = nr.u, "converged", "gradient-descent+newton"
                rseq = rseq + nr.residual_sequence
                history = history + nr.history
    return _finalize(M, u, rho, kP, reg, status, method, history, it, rseq, msg)


# ------------------------------------------------------------------- Newton


def weighted_gram(M, H):
    """``sum_n H_n Phi_n Phi_n^T`` over product nodes, restricted to field modes.

    Uses the tensor structure of the basis: contract factor ``a`` first,
    then factor ``b`` in chunks of nodes.
    """
    Ea = M._Ea[:, : M._na]
    Eb = M._Eb
    fa, fb = M._fa, M._fb
    nx, na = Ea.shape
    EE = (Ea[:, :, None] * Ea[:, None, :]).reshape(nx, na * na)
    T = (EE.T @ H).reshape(na, na, -1)  # (na, na, ny)
    n = len(fa)
    out = np.zeros((n, n))
    ny = T.shape[2]
    chunk = max(1, int(4e6 // max(n * n, 1)))
    for y0 in range(0, ny, chunk):
        ys = slice(y0, min(ny, y0 + chunk))
        Tc = T[:, :, ys][fa][:, fa]  # (n, n, c)
        e = Eb[ys][:, fb].T  # (n, c)
        out += np.einsum("pqc,pc,qc->pq", Tc, e, e, optimize=True)
    return 0.5 * (out + out.T)


def jacobian(M, u, rho):
    """Linearization of the residual map in field coefficients."""
    op = paneitz_operator(M)
    kP = total_q(M)
    U = u.values
    e = np.exp(4.0 * (U - U.max()))
    W = M.weights * e
    Z = float(W.sum())
    v = M.analyze(e)
    G = weighted_gram(M, W)
    return op.field_block() - 2.0 * rho * kP * (4.0 * G / Z - 4.0 * np.outer(v, v) / Z**2)


def newton_refine(M, u0, rho=1.0, opts=None):
    """Newton iteration on ``F(u) = P u + 2 rho Q - 2 rho k_P exp(4u)/int exp(4u)``.

    Works in mean-zero coordinates (the constant mode is dropped). Raises
    :class:`PreconditionError` if the start is outside the basin
    ``|F| < basin_factor * max(|k_P|, 1) / V`` and :class:`NumericalError`
    if the linearization is singular.
    """
    opts = opts or SolveOptions()
    kP, reg = _check_model(M, opts, "newton_refine")
    u = _mean_zero(M, u0.coeffs)
    F = residual_coeffs(M, u, rho)
    r0 = float(np.linalg.norm(F))
    basin = opts.basin_factor * max(abs(kP), 1.0) / M.volume
    if r0 > basin:
        raise PreconditionError(f"start residual {r0:.3e} exceeds the Newton basin {basin:.3e}")
    c = u.coeffs.copy()
    rseq = [r0]
    history = [IterRecord(ii_value(M, u, rho).total, 2 * r0, r0, float(np.abs(u.values).max()))]
    status = "max-iterations"
    it = 0
    for it in range(1, opts.newton_max_iters + 1):
        if rseq[-1] < opts.residual_tol:
            status = "converged"
            break
        J = jacobian(M, ScalarField.from_coeffs(M, c), rho)[1:, 1:]
        lam, V = np.linalg.eigh(J)
        smin = float(np.abs(lam).min())
        if smin < 1e-10 * float(np.abs(lam).max()):
            raise NumericalError(
                f"singular linearization: smallest singular value {smin:.3e}", smallest_singular_value=smin
            )
        step = -(V @ ((V.T @ F[1:]) / lam))
        c[1:] += step
        uc = ScalarField.from_coeffs(M, c)
        F = residual_coeffs(M, uc, rho)
        r = float(np.linalg.norm(F))
        rseq.append(r)
        history.append(IterRecord(ii_value(M, uc, rho).total, 2 * r, r, float(np.abs(uc.values).max()), 1.0))
        if r > 10 * rseq[-2] and r > opts.residual_tol:
            status = "diverged"
            break
        if len(rseq) > 3 and r >= rseq[-2] and r < 1e3 * opts.residual_tol:
            # stagnation at roundoff
            status = "converged" if r < 1e2 * opts.residual_tol else "stagnated"
            break
    else:
        if rseq[-1] < opts.residual_tol:
            status = "converged"
    return _finalize(M, ScalarField.from_coeffs(M, c), rho, kP, reg, status, "newton", history, it, rseq)


# ------------------------------------------------------------ continuation


@dataclass
class ContinuationResult:
    reports: list
    status: str
    attempted: list
    sup_norms: list

    @property
    def bounded(self):
        s = np.asarray(self.sup_norms)
        return bool(len(s) == 0 or s.max() <= 2.0 * max(np.median(s), 1e-300)) if np.any(s > 0) else True

    def as_dict(self):
        return {
            "status": self.status,
            "attempted_rho": self.attempted,
            "sup_norms": self.sup_norms,
            "bounded": self.bounded,
            "reports": [r.as_dict() for r in self.reports],
        }


def continuation_rho(M, opts=None):
    """Track solutions of the rho-problem along ``opts.rho_schedule``.

    The first value is solved by :func:`minimize_ii` (with polish), later
    values by :func:`newton_refine` from the previous solution. A failing
    step is bisected down to ``opts.bisect_floor``; then the run aborts
    and the partial list is returned.
    """
    opts = opts or SolveOptions()
    kP, reg = _check_model(M, opts, "continuation_rho")
    if reg["negative_eigenvalues"] > 0:
        raise PreconditionError("continuation needs a model without negative Paneitz eigenvalues")
    sched = list(opts.rho_schedule)
    first = minimize_ii(M, opts, rho=sched[0])
    reports, attempted = [first], [sched[0]]
    if not first.converged:
        return ContinuationResult(reports, "failed-start", attempted, [_sup(first)])
    cur_rho, cur_u = sched[0], first.u
    for target in sched[1:]:
        while cur_rho != target:
            step = target - cur_rho
            while True:
                trial = target if step == target - cur_rho else cur_rho + step
                attempted.append(trial)
                rep = _try_newton(M, cur_u, trial, opts)
                if rep is not None:
                    break
                step *= 0.5
                if abs(step) < opts.bisect_floor:
                    return ContinuationResult(reports, "aborted", attempted, [_sup(r) for r in reports])
            cur_rho, cur_u = trial, rep.u
        reports.append(rep)
    return ContinuationResult(reports, "complete", attempted, [_sup(r) for r in reports])


def _try_newton(M, u, rho, opts):
    try:
        rep = newton_refine(M, u, rho, opts)
    except (PreconditionError, NumericalError):
        return None
    return rep if rep.converged else None


def _sup(rep):
    return float(np.abs(rep.u.values).max())


# ------------------------------------------------------------------ witness


@dataclass
class WitnessReport:
    """Sup over sampled ``(sigma, t)`` of ``II_rho(t phi_{lam, sigma})`` per rho."""

    k: int
    lambda_bar: float
    rho_values: list
    witness: list
    t_grid: list
    profiles: np.ndarray
    sigmas: list
    regime: dict
    terms: dict

    @property
    def witness_over_rho(self):
        return [w / r for w, r in zip(self.witness, self.rho_values)]

    @property
    def monotone(self):
        v = self.witness_over_rho
        return all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(v, v[1:]))

    def as_dict(self):
        return {
            "k": self.k,
            "lambda_bar": self.lambda_bar,
            "rho_values": self.rho_values,
            "witness": self.witness,
            "witness_over_rho": self.witness_over_rho,
            "monotone": self.monotone,
            "t_grid": self.t_grid,
            "profiles": self.profiles.tolist(),
            "sigmas": [s.as_dict() for s in self.sigmas],
            "regime": self.regime,
        }


def _structured_sigmas(M, k, rng):
    """One-atom barycenter plus ``k`` equal-weight atoms spread by farthest-point sampling."""
    ga, gb = M.a.geometry, M.b.geometry
    pool_a = ga.random_points(rng, 64)
    pool_b = gb.random_points(rng, 64)
    out = [Barycenter.create(M, [1.0], pool_a[:1], pool_b[:1])]
    if k >= 2:
        chosen = [0]
        D = np.hypot(ga.pairwise(pool_a, pool_a), gb.pairwise(pool_b, pool_b))
        for _ in range(k - 1):
            chosen.append(int(np.argmax(D[chosen].min(axis=0))))
        out.append(Barycenter.create(M, np.full(k, 1.0 / k), pool_a[chosen], pool_b[chosen], tol=1e-9))
    return out


def minmax_witness(
    M,
    k,
    lambda_bar,
    n_sigma,
    n_t,
    rho_values=(1.0,),
    seed=0,
    cutoff=None,
    quad=None,
):
    """Upper estimate of the min-max level from the map ``(t, sigma) -> t phi_{lam, sigma}``.

    Samples ``n_sigma`` random barycenters in ``M_k`` plus structured ones,
    and ``n_t`` values of ``t`` in ``[0, 1]``. The per-sample terms are
    computed once and recombined for each rho, so the ``witness/rho``
    comparison across rho uses one fixed sample set.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n_t < 2 or n_sigma < 0:
        raise ValidationError("need n_t >= 2 and n_sigma >= 0")
    rng = np.random.default_rng(seed)
    kP = total_q(M)
    spec = spectrum(M)
    reg = regime(kP, spec.negative_count)
    sigmas = _structured_sigmas(M, k, rng) + [Barycenter.random(M, k, rng) for _ in range(n_sigma)]
    t_grid = np.linspace(0.0, 1.0, n_t)
    quad_t = np.zeros((len(sigmas), n_t))
    lin_t = np.zeros_like(quad_t)
    log_t = np.zeros_like(quad_t)
    for i, s in enumerate(sigmas):
        B = BubbleField(M, s, lambda_bar, cutoff, quad)
        for j, t in enumerate(t_grid):
            r = B.scaled(t).raw_terms()
            quad_t[i, j], lin_t[i, j], log_t[i, j] = r.quadratic, r.q_integral, r.log_integral
    witness = []
    profiles = None
    for rho in rho_values:
        vals = quad_t + 4.0 * rho * lin_t - rho * kP * log_t
        witness.append(float(vals.max()))
        if profiles is None or rho == 1.0:
            profiles = vals
    return WitnessReport(
        k=int(k),
        lambda_bar=float(lambda_bar),
        rho_values=[float(r) for r in rho_values],
        witness=witness,
        t_grid=t_grid.tolist(),
        profiles=profiles,
        sigmas=sigmas,
        regime=reg,
        terms={"quadratic": quad_t, "q_integral": lin_t, "log_integral": log_t},
    )

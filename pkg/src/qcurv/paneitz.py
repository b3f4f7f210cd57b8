"""Q-curvature, the Paneitz operator and the invariants built on them.

Sign convention. ``Delta = div grad`` and factor eigenvalues ``alpha``,
``beta`` are those of ``-Delta``. The Paneitz operator is *defined* by
its quadratic form

    <P u, v> = int (Delta u Delta v + (2/3) R grad u . grad v
                    - 2 Ric(grad u, grad v)) dV,

which on the round 4-sphere gives the eigenvalues l(l+1)(l+2)(l+3).
On a product mode with constant factor curvatures this form equals

    mu(alpha, beta) = s^2 - (2/3)(k_a alpha + k_b beta) + (4/3)(k_b alpha + k_a beta),
    s = alpha + beta.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericalError, PreconditionError, SpectralOnlyError, ValidationError
from .geometry.product import ProductManifold4D, ScalarField, Sphere4Model

EIGHT_PI2 = 8 * np.pi**2
SIXTEEN_PI2 = 16 * np.pi**2


def _cache(M):
    c = getattr(M, "_qcache", None)
    if c is None:
        c = {}
        M._qcache = c
    return c


# --------------------------------------------------------------------- Q
def q_curvature(M):
    """Q-curvature ``-(1/12)(Delta R - R^2 + 3|Ric|^2)``.

    On products this is ``-(1/6)(Delta K_a + Delta K_b) + (-K_a^2 + 4 K_a K_b - K_b^2)/6``.
    Returns a :class:`ScalarField` when the model has nodes and a float for
    spectral-only constant-curvature models.
    """
    if isinstance(M, Sphere4Model):
        return M.Q
    cache = _cache(M)
    if "Q" in cache:
        return cache["Q"]
    if M.mode == "spectral-only":
        if not M.constant_curvature:
            raise SpectralOnlyError("Q of a spectral-only model needs constant factor curvature")
        ka, kb = M.a.kappa, M.b.kappa
        out = (-(ka**2) + 4 * ka * kb - kb**2) / 6.0
    else:
        Ka, Kb = M.Ka, M.Kb
        lapA, lapB = M.curvature_laplacians()
        values = -(lapA + lapB) / 6.0 + (-(Ka**2) + 4 * Ka * Kb - Kb**2) / 6.0
        out = ScalarField.from_values(M, values + np.zeros(M.node_shape))
    cache["Q"] = out
    return out


def q_constant(M):
    """The constant value of Q on a constant-curvature model, else ``None``."""
    if isinstance(M, Sphere4Model):
        return M.Q
    if not M.constant_curvature:
        return None
    ka, kb = M.a.kappa, M.b.kappa
    return (-(ka**2) + 4 * ka * kb - kb**2) / 6.0


def total_q(M):
    """Total Q-curvature ``k_P = int Q dV``."""
    if isinstance(M, Sphere4Model):
        return M.Q * M.volume
    cache = _cache(M)
    if "kP" not in cache:
        Q = q_curvature(M)
        if isinstance(Q, ScalarField):
            cache["kP"] = M.integrate(Q.values)
        else:
            cache["kP"] = Q * M.volume
    return cache["kP"]


def gauss_bonnet_defect(M):
    """``int (Q + |W|^2/8) dV - 4 pi^2 chi``; zero by the 4D Gauss-Bonnet formula."""
    if isinstance(M, Sphere4Model):
        return M.Q * M.volume - 4 * np.pi**2 * M.euler_char
    if M.mode == "spectral-only":
        ka, kb = M.a.kappa, M.b.kappa
        integrand = q_curvature(M) + (4.0 / 3.0) * (ka + kb) ** 2 / 8.0
        return integrand * M.volume - 4 * np.pi**2 * M.euler_char
    integrand = q_curvature(M).values + M.weyl_norm_sq() / 8.0
    return M.integrate(integrand) - 4 * np.pi**2 * M.euler_char


def regime(k_P, negative_count=0, tol=1e-9):
    """Classify ``k_P`` against the thresholds ``8 k pi^2``."""
    ratio = k_P / EIGHT_PI2
    k = int(np.floor(ratio + tol))
    if ratio > 0.5 and abs(ratio - round(ratio)) < tol:
        tag = "degenerate"
    elif ratio < 1:
        tag = "subcritical"
    else:
        tag = "supercritical"
    return {"tag": tag, "k": max(k, 0), "ratio": ratio, "negative_eigenvalues": int(negative_count)}


# -------------------------------------------------------------- operator
@dataclass
class SpectrumSummary:
    """Counts of negative and kernel eigenvalues plus the low end of the spectrum."""

    negative_count: int
    kernel_dim: int
    lowest: np.ndarray
    tol_zero: float
    n_modes: int

    def as_dict(self):
        return {
            "negative_count": self.negative_count,
            "kernel_dim": self.kernel_dim,
            "lowest": [float(x) for x in self.lowest],
            "tol_zero": self.tol_zero,
            "n_modes": self.n_modes,
        }


def mu_closed_form(alpha, beta, ka, kb):
    """Paneitz eigenvalue of the product mode (alpha, beta) for constant curvatures."""
    s = alpha + beta
    return s * s - (2.0 / 3.0) * (ka * alpha + kb * beta) + (4.0 / 3.0) * (kb * alpha + ka * beta)


@dataclass(eq=False)
class PaneitzOperator:
    """The Paneitz operator in the truncated product basis.

    ``representation`` is ``"diagonal"`` (closed form, constant-curvature
    factors) or ``"assembled"`` (dense matrix built by quadrature from the
    quadratic form).
    """

    manifold: object
    representation: str
    diag: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    _eig: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.diag) if self.diag is not None else self.matrix.shape[0]

    def dense(self):
        return np.diag(self.diag) if self.diag is not None else self.matrix

    def field_block(self):
        """Operator restricted to the modes usable by node fields."""
        M = self.manifold
        idx = M.field_modes
        if self.diag is not None:
            return np.diag(self.diag[idx])
        return self.matrix[np.ix_(idx, idx)]

    def field_matvec(self, c):
        M = self.manifold
        idx = M.field_modes
        if self.diag is not None:
            return self.diag[idx] * c
        return self.matrix[np.ix_(idx, idx)] @ c

    def field_eigh(self):
        """Eigen-decomposition of the field block (cached)."""
        if self._eig is None:
            M = self.manifold
            if self.diag is not None:
                mu = self.diag[M.field_modes]
                self._eig = (mu, None)
            else:
                self._eig = np.linalg.eigh(self.field_block())
        return self._eig

    def eigenvalues(self):
        if self.diag is not None:
            return np.sort(self.diag)
        return np.linalg.eigvalsh(self.matrix)


def _factor_mats(f):
    """``(grad gram, K grad gram, K mass)`` for a factor; closed form when spectral-only."""
    if f.has_nodes:
        return f.grad_gram, f.curv_grad_gram, f.curv_mass
    lam = f.eigenvalues
    return np.diag(lam), f.kappa * np.diag(lam), f.kappa * np.eye(len(lam))


def assemble_matrix(M):
    """Dense Paneitz matrix on all product modes, from factor quadrature matrices.

    For ``u = e_i f_j``, ``v = e_k f_l``:

        <Pu, v> = s^2 d_ik d_jl - (2/3)(KG_a[i,k] d_jl + d_ik KG_b[j,l])
                  + (4/3)(G_a[i,k] KM_b[j,l] + KM_a[i,k] G_b[j,l])
    """
    Ga, KGa, KMa = _factor_mats(M.a)
    Gb, KGb, KMb = _factor_mats(M.b)
    i, j = M.ia, M.ib
    I, K = i[:, None], i[None, :]
    J, L = j[:, None], j[None, :]
    dik = (I == K).astype(float)
    djl = (J == L).astype(float)
    A = -(2.0 / 3.0) * (KGa[I, K] * djl + dik * KGb[J, L])
    A += (4.0 / 3.0) * (Ga[I, K] * KMb[J, L] + KMa[I, K] * Gb[J, L])
    A[np.diag_indices_from(A)] += M.s**2
    return 0.5 * (A + A.T)


def paneitz_operator(M, representation="auto"):
    """Build (and cache) the Paneitz operator of ``M``."""
    if isinstance(M, Sphere4Model):
        s = M.eigenvalues
        return PaneitzOperator(M, "diagonal", diag=np.repeat(s * (s + 2), M.multiplicities))
    if representation == "auto":
        representation = "diagonal" if M.constant_curvature else "assembled"
    key = ("P", representation)
    cache = _cache(M)
    if key in cache:
        return cache[key]
    if representation == "diagonal":
        if not M.constant_curvature:
            raise ConfigurationError("diagonal representation needs constant-curvature factors")
        op = PaneitzOperator(M, "diagonal", diag=mu_closed_form(M.alpha, M.beta, M.a.kappa, M.b.kappa))
    elif representation == "assembled":
        op = PaneitzOperator(M, "assembled", matrix=assemble_matrix(M))
    else:
        raise ConfigurationError(f"unknown representation {representation!r}")
    cache[key] = op
    return op


def spectrum(M, nLow=10, representation="auto", rel_tol=1e-8):
    """Negative count, kernel dimension and lowest eigenvalues of P.

    ``tol_zero = rel_tol * max |eigenvalue|``.
    """
    op = paneitz_operator(M, representation)
    try:
        ev = op.eigenvalues()
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Paneitz eigensolver failed") from exc
    tol = rel_tol * float(np.abs(ev).max())
    return SpectrumSummary(
        negative_count=int(np.sum(ev < -tol)),
        kernel_dim=int(np.sum(np.abs(ev) <= tol)),
        lowest=ev[:nLow].copy(),
        tol_zero=tol,
        n_modes=len(ev),
    )


def _check_same(M, *fields):
    for f in fields:
        if f.manifold is not M:
            raise ValidationError("field belongs to a different manifold")


def paneitz_form(M, u, v):
    """``<P u, v>`` for band-limited fields (coefficient route)."""
    _check_same(M, u, v)
    op = paneitz_operator(M)
    return float(u.coeffs @ op.field_matvec(v.coeffs))


def paneitz_apply(M, u):
    """The field ``P u`` in the truncated basis."""
    _check_same(M, u)
    op = paneitz_operator(M)
    return ScalarField.from_coeffs(M, op.field_matvec(u.coeffs))


# ---------------------------------------------------------- conformal change
@dataclass
class ConformalData:
    """Conformal metric ``exp(2w) g`` described through the base model."""

    w: ScalarField
    q_tilde: np.ndarray
    volume_weights: np.ndarray
    total_q: float
    base_total_q: float

    @property
    def relative_drift(self):
        return abs(self.total_q - self.base_total_q) / max(abs(self.base_total_q), 1.0)


def conformal_q(M, w, max_abs=8.0):
    """Q of ``exp(2w) g`` from ``P w + 2 Q = 2 Q~ exp(4 w)``."""
    M.require_nodes("conformal_q")
    _check_same(M, w)
    W = w.values
    if np.abs(W).max() > max_abs:
        raise ValidationError(f"|w|_inf = {np.abs(W).max():.3g} exceeds the overflow guard {max_abs}")
    Pw = paneitz_apply(M, w).values
    Q = q_curvature(M).values
    e4w = np.exp(4 * W)
    q_tilde = (0.5 * Pw + Q) / e4w
    vol = M.weights * e4w
    return ConformalData(
        w=w,
        q_tilde=q_tilde,
        volume_weights=vol,
        total_q=float(np.sum(q_tilde * vol)),
        base_total_q=total_q(M),
    )


# ----------------------------------------------------------------- Green
@dataclass
class GreenData:
    """Green's function of P with pole ``x`` and its regular part."""

    pole: tuple
    coeffs: np.ndarray
    G_nodes: np.ndarray
    S_nodes: np.ndarray
    S_diag: float
    funct_value: Optional[float]
    gradient: Optional[np.ndarray]
    laplacian: Optional[float]
    h: float
    q_scale: float
    notes: dict

    def as_dict(self):
        return {
            "S_diag": self.S_diag,
            "funct_value": self.funct_value,
            "laplacian_S": self.laplacian,
            "grad_S": None if self.gradient is None else [float(x) for x in self.gradient],
            "h": self.h,
            "q_scale": self.q_scale,
            **self.notes,
        }


def _pinv_apply(op, b):
    """Apply the pseudo-inverse of the field block on the complement of constants."""
    mu, U = op.field_eigh()
    scale = np.abs(mu).max()
    if U is None:
        out = np.zeros_like(b)
        ok = np.abs(mu) > 1e-8 * scale
        out[ok] = b[ok] / mu[ok]
        return out
    ok = np.abs(mu) > 1e-8 * scale
    return U[:, ok] @ ((U[:, ok].T @ b) / mu[ok])


def _green_coeffs_at(M, op, phi_x, qprime):
    """Coefficients in the field basis of ``16 pi^2 K(x, .) - 2 h``."""
    return SIXTEEN_PI2 * _pinv_apply(op, phi_x) - 2.0 * _pinv_apply(op, qprime)


def _basis_at(M, Pa, Pb):
    """Field-basis functions at arbitrary product points, shape ``(n, n_field)``."""
    Ea = M.a.eval_eigenfunctions(Pa)
    Eb = M.b.eval_eigenfunctions(Pb)
    fa, fb = M.ia[M.field_modes], M.ib[M.field_modes]
    return Ea[..., fa] * Eb[..., fb]


def green_function(M, x, nModes=None, rescale=True, h=None, kP_tol=1e-9):
    """Green's function ``P G(x, .) + 2 Q' = 16 pi^2 delta_x`` by a spectral sum.

    Parameters
    ----------
    M : ProductManifold4D (full mode, ``ker P = const``, no negative eigenvalues)
    x : int
        Flat index of the pole among the product nodes.
    nModes : int, optional
        Use only the lowest ``nModes`` field modes.
    rescale : bool
        Use ``Q' = (8 pi^2 / k_P) Q`` so the equation is solvable for any
        ``k_P != 0``. With ``rescale=False`` the model must have ``k_P = 8 pi^2``.
        For ``k_P = 0`` the Q term is dropped and ``16 pi^2 (delta_x - 1/V)``
        is used.
    h : float, optional
        Stencil spacing for the diagonal extrapolation; defaults to the node
        spacing.

    Notes
    -----
    ``S(x, y) = G(x, y) + 2 log d(x, y)``. ``S(x, x)`` is Richardson
    extrapolated from ring averages at ``d = 2h, 4h, 8h``. The quantity
    ``Delta_y S + 4 |grad_y S|^2 - R/8`` at ``y = x`` comes from a quadratic
    least-squares fit of ``S(x, exp_x(v))`` in normal coordinates.
    """
    M.require_full("green_function")
    spec = spectrum(M)
    if spec.negative_count > 0 or spec.kernel_dim != 1:
        raise PreconditionError(
            f"green_function needs P >= 0 with ker P = const "
            f"(negative={spec.negative_count}, kernel={spec.kernel_dim})"
        )
    op = paneitz_operator(M)
    kP = total_q(M)
    Q = q_curvature(M)
    if abs(kP) <= kP_tol * M.volume:
        q_scale = 0.0
    elif rescale:
        q_scale = EIGHT_PI2 / kP
    elif abs(kP - EIGHT_PI2) <= kP_tol * EIGHT_PI2:
        q_scale = 1.0
    else:
        raise PreconditionError(
            f"P G + 2Q = 16 pi^2 delta needs k_P = 8 pi^2 (got {kP:.6g}); use rescale=True"
        )
    n = M.n_field_modes
    if nModes is not None:
        if nModes < 16:
            raise NumericalError("green_function: too few modes for a meaningful spectral sum", nModes=nModes)
        n = min(int(nModes), n)

    qprime = q_scale * Q.coeffs
    na, nb = M.node_shape
    ix, iy = divmod(int(x), nb)
    xa, xb = M.a.nodes[ix], M.b.nodes[iy]
    phi_x = np.zeros(M.n_field_modes)
    fa, fb = M.ia[M.field_modes], M.ib[M.field_modes]
    phi_x[:n] = M.a.eigvecs[ix, fa[:n]] * M.b.eigvecs[iy, fb[:n]]
    qp = qprime.copy()
    qp[n:] = 0.0
    hx = _pinv_apply(op, qp)
    coeffs = SIXTEEN_PI2 * _pinv_apply(op, phi_x) - 2.0 * hx
    hx_at_x = float(phi_x @ hx)
    # symmetric normalization: G(x,y) = 16pi^2 K(x,y) - 2 h(y) - 2 h(x)
    coeffs[0] += -2.0 * hx_at_x * np.sqrt(M.volume)
    G_nodes = M.synthesize(coeffs)

    Pa, Pb = M.node_points()
    d = M.distance(Pa, Pb, xa[None, :], xb[None, :]).reshape(na, nb)
    with np.errstate(divide="ignore"):
        S_nodes = G_nodes + 2.0 * np.log(d)
    S_nodes[ix, iy] = np.nan

    if h is None:
        h = max(np.sqrt(M.a.area / na), np.sqrt(M.b.area / nb))
    notes = {"n_modes_used": int(n), "k_P": kP}
    S_diag, fit = np.nan, None
    if M.a.evaluator is not None and M.b.evaluator is not None and M.a.geometry.local and M.b.geometry.local:
        S_of = _regular_part_sampler(M, coeffs, xa, xb)
        S_diag = _richardson_diag(S_of, h)
        fit = _quadratic_fit(S_of, h)
    funct = grad = lap = None
    if fit is not None:
        grad, lap = fit
        R_x = float(np.asarray(M.scalar_curvature())[ix, iy])
        funct = lap + 4.0 * float(grad @ grad) - R_x / 8.0
    return GreenData(
        pole=(int(ix), int(iy)),
        coeffs=coeffs,
        G_nodes=G_nodes,
        S_nodes=S_nodes,
        S_diag=float(S_diag),
        funct_value=funct,
        gradient=grad,
        laplacian=lap,
        h=float(h),
        q_scale=q_scale,
        notes=notes,
    )


def _stencil_directions():
    dirs = []
    eye = np.eye(4)
    for i in range(4):
        dirs += [eye[i], -eye[i]]
    for i in range(4):
        for j in range(i + 1, 4):
            for si in (1, -1):
                for sj in (1, -1):
                    dirs.append((si * eye[i] + sj * eye[j]) / np.sqrt(2))
    return np.array(dirs)


def _regular_part_sampler(M, coeffs, xa, xb):
    ga, gb = M.a.geometry, M.b.geometry

    def S_of(V):
        # V: (n, 4) normal-coordinate vectors at x; first two along factor a
        ra = np.hypot(V[:, 0], V[:, 1])
        rb = np.hypot(V[:, 2], V[:, 3])
        Ya = ga.exp_polar(xa, ra, np.arctan2(V[:, 1], V[:, 0]))
        Yb = gb.exp_polar(xb, rb, np.arctan2(V[:, 3], V[:, 2]))
        G = _basis_at(M, Ya, Yb) @ coeffs
        return G + 2.0 * np.log(np.hypot(ra, rb))

    return S_of


def _richardson_diag(S_of, h):
    D = _stencil_directions()
    ring = [float(np.mean(S_of(r * D))) for r in (2 * h, 4 * h, 8 * h)]
    # ring means are even in r: S(x,x) + c2 r^2 + c4 r^4 + ...
    r1 = (4 * ring[0] - ring[1]) / 3.0
    r2 = (4 * ring[1] - ring[2]) / 3.0
    return (16 * r1 - r2) / 15.0


def _quadratic_fit(S_of, h):
    D = _stencil_directions()
    V = np.concatenate([r * D for r in (h, 2 * h)])
    f = S_of(V)
    cols = [np.ones(len(V))] + [V[:, i] for i in range(4)]
    pairs = [(i, j) for i in range(4) for j in range(i, 4)]
    for i, j in pairs:
        cols.append(V[:, i] * V[:, j] * (0.5 if i == j else 1.0))
    X = np.stack(cols, axis=1)
    beta, *_ = np.linalg.lstsq(X, f, rcond=None)
    grad = beta[1:5]
    lap = sum(beta[5 + k] for k, (i, j) in enumerate(pairs) if i == j)
    return grad, float(lap)


def green_weak_residual(M, green, v):
    """``|<G, P v> + 2 int Q' v - 16 pi^2 v(x)| / ||v||`` for a band-limited test field."""
    op = paneitz_operator(M)
    Q = q_curvature(M)
    lhs = float(green.coeffs @ op.field_matvec(v.coeffs))
    lhs += 2.0 * green.q_scale * float(Q.coeffs @ v.coeffs)
    ix, iy = green.pole
    if green.q_scale == 0.0:
        lhs += SIXTEEN_PI2 * v.mean()
    lhs -= SIXTEEN_PI2 * float(v.values[ix, iy])
    return abs(lhs) / max(np.linalg.norm(v.coeffs), 1e-300)

"""Two-dimensional factors: spectra, quadrature, curvature and distance.

Sign convention: eigenvalues are those of ``-div grad`` (non-negative).
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from ..errors import ConfigurationError, NumericalError, SpectralOnlyError, ValidationError
from . import mesh as meshlib
from .models import FlatTorusModel, HyperbolicChartModel, MeshGraphModel, SphereModel
from .sphere import degree_order, gauss_grid, real_sph_harm, to_cartesian, to_spherical


@dataclass(frozen=True, eq=False)
class SurfaceFactor:
    """A closed surface discretized for spectral work.

    Attributes
    ----------
    kind : {"sphere", "flat-torus", "mesh", "synthetic"}
    area : float
    eigenvalues : ndarray (n_eig,)
        Ascending, first one zero.
    eigvecs : ndarray (n_nodes, n_eig) or None
        Eigenfunctions at the nodes, orthonormal under the node weights.
    nodes, weights : ndarray or None
        Quadrature points (rows, in the geometry's coordinates) and weights.
    curvature : ndarray (n_nodes,) or None
        Gauss curvature at the nodes.
    kappa : float or None
        The constant curvature, for constant-curvature factors.
    laplacian_curvature : ndarray or None
        ``div grad K`` at the nodes.
    euler_char : int
    geometry : point model (see :mod:`qcurv.geometry.models`)
    grad_gram, curv_grad_gram, curv_mass : ndarray or None
        Quadrature-assembled ``int grad e_i . grad e_j``,
        ``int K grad e_i . grad e_j`` and ``int K e_i e_j``.
    spectral_cap : float
        Every eigenvalue ``<= spectral_cap`` is present in ``eigenvalues``.
    """

    kind: str
    area: float
    eigenvalues: np.ndarray
    euler_char: int
    geometry: Any
    eigvecs: Optional[np.ndarray] = None
    nodes: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    curvature: Optional[np.ndarray] = None
    kappa: Optional[float] = None
    laplacian_curvature: Optional[np.ndarray] = None
    grad_gram: Optional[np.ndarray] = None
    curv_grad_gram: Optional[np.ndarray] = None
    curv_mass: Optional[np.ndarray] = None
    evaluator: Optional[Callable] = None
    spectral_cap: float = np.inf
    params: dict = field(default_factory=dict)

    @property
    def has_nodes(self):
        return self.nodes is not None

    @property
    def n_eig(self):
        return len(self.eigenvalues)

    @property
    def constant_curvature(self):
        return self.kappa is not None

    def require_nodes(self, what="this operation"):
        if not self.has_nodes:
            raise SpectralOnlyError(f"{what} needs node values; the {self.kind} factor is spectral-only")

    def integrate(self, values):
        self.require_nodes("quadrature")
        return self.weights @ values

    def distance(self, P, Q):
        return self.geometry.distance(P, Q)

    def eval_eigenfunctions(self, points):
        """Eigenfunctions at arbitrary points (sphere and torus only)."""
        if self.evaluator is None:
            raise SpectralOnlyError(f"pointwise evaluation is unavailable on a {self.kind} factor")
        return self.evaluator(points)

    def total_curvature(self):
        if self.has_nodes:
            return float(self.weights @ self.curvature)
        return float(self.kappa * self.area)

    def invariant_report(self):
        """Residuals of the factor invariants (area, Gram, Gauss-Bonnet, lambda_0)."""
        out = {
            "lambda0": float(self.eigenvalues[0]),
            "gauss_bonnet_residual": abs(self.total_curvature() - 2 * np.pi * self.euler_char),
        }
        if self.has_nodes:
            out["area_residual"] = abs(float(self.weights.sum()) - self.area)
            out["min_weight"] = float(self.weights.min())
            G = self.eigvecs.T @ (self.weights[:, None] * self.eigvecs)
            out["gram_residual"] = float(np.abs(G - np.eye(self.n_eig)).max())
        return out


def make_sphere_factor(lmax, nTheta=None):
    """Unit sphere with real spherical harmonics up to degree ``lmax``.

    ``nTheta`` is the number of longitudes; ``ceil(nTheta/2)`` Gauss-Legendre
    latitudes are used. ``nTheta >= 2*lmax + 2`` makes products of two
    harmonics integrate exactly. The default ``2*lmax + 4`` also integrates
    products of their gradients exactly.
    """
    if lmax < 2:
        raise ConfigurationError("make_sphere_factor: lmax must be >= 2")
    if nTheta is None:
        nTheta = 2 * lmax + 4
    if nTheta < 2 * lmax + 2:
        raise ConfigurationError(
            f"make_sphere_factor: nTheta={nTheta} below exactness bound 2*lmax+2={2 * lmax + 2}"
        )
    theta, phi, w = gauss_grid(nTheta)
    E, Et, Ep = real_sph_harm(lmax, theta, phi, gradient=True)
    ls, _ = degree_order(lmax)
    lam = (ls * (ls + 1)).astype(float)
    K = np.ones_like(w)
    wK = w * K
    grad_gram = Et.T @ (w[:, None] * Et) + Ep.T @ (w[:, None] * Ep)
    curv_grad_gram = Et.T @ (wK[:, None] * Et) + Ep.T @ (wK[:, None] * Ep)
    curv_mass = E.T @ (wK[:, None] * E)

    def evaluator(points):
        t, p = to_spherical(points)
        return real_sph_harm(lmax, t, p)

    return SurfaceFactor(
        kind="sphere",
        area=4 * np.pi,
        eigenvalues=lam,
        euler_char=2,
        geometry=SphereModel(1.0),
        eigvecs=E,
        nodes=to_cartesian(theta, phi),
        weights=w,
        curvature=K,
        kappa=1.0,
        laplacian_curvature=np.zeros_like(w),
        grad_gram=grad_gram,
        curv_grad_gram=curv_grad_gram,
        curv_mass=curv_mass,
        evaluator=evaluator,
        spectral_cap=float(lmax * (lmax + 1)),
        params={"lmax": int(lmax), "nTheta": int(nTheta)},
    )


def _torus_modes(L1, L2, kmax):
    modes = [(0, 0, 0)]
    for p in range(-kmax, kmax + 1):
        for q in range(-kmax, kmax + 1):
            if (p, q) > (0, 0):
                modes.append((p, q, 0))
                modes.append((p, q, 1))
    lam = [4 * np.pi**2 * (p * p / L1**2 + q * q / L2**2) for p, q, _ in modes]
    order = sorted(range(len(modes)), key=lambda i: (round(lam[i], 12), i))
    return [modes[i] for i in order], np.array([lam[i] for i in order])


def _torus_eval(modes, L1, L2, area, X, gradient=False):
    X = np.asarray(X, dtype=float)
    shape = X.shape[:-1]
    E = np.empty(shape + (len(modes),))
    G = np.empty(shape + (len(modes), 2)) if gradient else None
    amp = np.sqrt(2.0 / area)
    for k, (p, q, s) in enumerate(modes):
        if p == 0 and q == 0:
            E[..., k] = 1.0 / np.sqrt(area)
            if gradient:
                G[..., k, :] = 0.0
            continue
        kv = 2 * np.pi * np.array([p / L1, q / L2])
        arg = X @ kv
        if s == 0:
            E[..., k] = amp * np.cos(arg)
            if gradient:
                G[..., k, :] = -amp * np.sin(arg)[..., None] * kv
        else:
            E[..., k] = amp * np.sin(arg)
            if gradient:
                G[..., k, :] = amp * np.cos(arg)[..., None] * kv
    return (E, G) if gradient else E


def make_flat_torus_factor(L1, L2, kmax, n_grid=None):
    """Flat torus with real Fourier eigenpairs, ``|p|, |q| <= kmax``.

    ``n_grid`` points per side (default ``4*kmax + 4``); at least
    ``2*kmax + 1`` for exact pair products.
    """
    if L1 <= 0 or L2 <= 0:
        raise ConfigurationError("make_flat_torus_factor: side lengths must be positive")
    if kmax < 1:
        raise ConfigurationError("make_flat_torus_factor: kmax must be >= 1")
    if n_grid is None:
        n_grid = 4 * kmax + 4
    if n_grid < 2 * kmax + 1:
        raise ConfigurationError("make_flat_torus_factor: n_grid must be >= 2*kmax + 1")
    L1, L2 = float(L1), float(L2)
    area = L1 * L2
    modes, lam = _torus_modes(L1, L2, kmax)
    x = (np.arange(n_grid) + 0.5) * L1 / n_grid
    y = (np.arange(n_grid) + 0.5) * L2 / n_grid
    X = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1).reshape(-1, 2)
    w = np.full(len(X), area / len(X))
    E, G = _torus_eval(modes, L1, L2, area, X, gradient=True)
    grad_gram = np.einsum("nid,n,njd->ij", G, w, G)
    K = np.zeros(len(X))
    return SurfaceFactor(
        kind="flat-torus",
        area=area,
        eigenvalues=lam,
        euler_char=0,
        geometry=FlatTorusModel(L1, L2),
        eigvecs=E,
        nodes=X,
        weights=w,
        curvature=K,
        kappa=0.0,
        laplacian_curvature=np.zeros_like(w),
        grad_gram=grad_gram,
        curv_grad_gram=np.einsum("nid,n,njd->ij", G, w * K, G),
        curv_mass=E.T @ ((w * K)[:, None] * E),
        evaluator=lambda P: _torus_eval(modes, L1, L2, area, P),
        # smallest eigenvalue with |p| or |q| = kmax + 1, exclusive
        spectral_cap=float(np.nextafter(4 * np.pi**2 * (kmax + 1) ** 2 / max(L1, L2) ** 2, 0)),
        params={"L1": L1, "L2": L2, "kmax": int(kmax), "n_grid": int(n_grid)},
    )


def mesh_factor(vertices, faces, nEig, name="mesh"):
    """Cotangent-Laplacian factor from an in-memory closed triangle mesh."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    chi = meshlib.check_closed_manifold(vertices, faces)
    n = len(vertices)
    if not 2 <= nEig <= n:
        raise ConfigurationError(f"nEig={nEig} must lie in [2, {n}]")
    L = meshlib.cotan_stiffness(vertices, faces)
    m = meshlib.lumped_mass(vertices, faces)
    if m.min() <= 0:
        raise ConfigurationError("mesh has a vertex with zero lumped mass")
    area = float(meshlib.face_areas(vertices, faces).sum())
    n_comp, _ = csgraph.connected_components(meshlib.edge_graph(vertices, faces), directed=False)
    if n_comp != 1:
        raise ConfigurationError("mesh is disconnected")

    if n <= 2500:
        lam, E = linalg.eigh(L.toarray(), np.diag(m), subset_by_index=[0, nEig - 1])
    else:
        try:
            lam, E = eigsh(L, k=nEig, M=sparse.diags(m), sigma=-1e-3, which="LM", tol=1e-12)
        except ArpackNoConvergence as exc:
            res = [float(np.linalg.norm(L @ v - l * m * v)) for l, v in zip(exc.eigenvalues, exc.eigenvectors.T)]
            raise NumericalError("mesh eigensolver did not converge", residuals=res) from exc
        order = np.argsort(lam)
        lam, E = lam[order], E[:, order]
    # exact constant mode, then M-orthonormalize the rest against it
    E[:, 0] = 1.0 / np.sqrt(area)
    lam[0] = 0.0
    G = E.T @ (m[:, None] * E)
    C = np.linalg.cholesky(G)
    E = np.linalg.solve(C, E.T).T
    E[:, 0] = 1.0 / np.sqrt(area)
    resid = np.linalg.norm(L @ E - (m[:, None] * E) * lam, axis=0)
    if resid.max() > 1e-6 * max(1.0, lam.max()):
        raise NumericalError("mesh eigenpairs inaccurate", residuals=resid.tolist())

    defect = meshlib.angle_defects(vertices, faces)
    K = defect / m
    lapK = -(L @ K) / m
    K_face = K[faces].mean(axis=1)
    LK = meshlib.cotan_stiffness(vertices, faces, face_weight=K_face)
    D = csgraph.shortest_path(meshlib.edge_graph(vertices, faces), method="D", directed=False)
    return SurfaceFactor(
        kind="mesh",
        area=area,
        eigenvalues=lam,
        euler_char=int(chi),
        geometry=MeshGraphModel(D),
        eigvecs=E,
        nodes=np.arange(n, dtype=float)[:, None],
        weights=m,
        curvature=K,
        kappa=None,
        laplacian_curvature=lapK,
        grad_gram=E.T @ (L @ E),
        curv_grad_gram=E.T @ (LK @ E),
        curv_mass=E.T @ ((m * K)[:, None] * E),
        spectral_cap=float(lam[-1]),
        params={"mesh": name, "n_vertices": int(n), "nEig": int(nEig)},
    )


def load_mesh_factor(path, nEig):
    """Read an OFF mesh and build its cotangent-Laplacian factor."""
    V, F = meshlib.read_off(path)
    return mesh_factor(V, F, nEig, name=str(path))


def make_synthetic_factor(kappa, eigenvalues, area, chart_radius=None, injectivity_radius=None):
    """Spectral-only factor of constant curvature ``kappa``.

    The Euler characteristic follows from Gauss-Bonnet and must be an
    integer. Points for local (chart) computations are available through
    the geometry model: a hyperbolic geodesic disk for ``kappa < 0``, a
    round sphere for ``kappa > 0`` and a flat square torus for ``kappa == 0``.

    For ``kappa < 0`` the surface is assumed to have injectivity radius at
    least ``injectivity_radius`` (default: 0.8 times the radius of the
    hyperbolic disk of equal area, which well-distributed surfaces such as
    the Bolza or Klein quartic surfaces exceed). Random points are drawn
    from the disk of radius ``chart_radius`` (default half of that).
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if area <= 0:
        raise ValidationError("synthetic factor: area must be positive")
    if lam.ndim != 1 or len(lam) < 1:
        raise ValidationError("synthetic factor: need a non-empty eigenvalue list")
    if np.any(lam < 0):
        raise ValidationError("synthetic factor: negative eigenvalue in input")
    if abs(lam[0]) > 1e-12 or np.any(np.diff(lam) < 0):
        raise ValidationError("synthetic factor: eigenvalues must be sorted with first = 0")
    chi = kappa * area / (2 * np.pi)
    if abs(chi - round(chi)) > 1e-9:
        raise ValidationError(f"synthetic factor: kappa*area/(2pi) = {chi} is not an integer")
    if kappa < 0:
        a = 1.0 / np.sqrt(-kappa)
        # radius of the hyperbolic disk with the same area: an upper bound for
        # the injectivity radius and a lower bound for the diameter
        r_disk = a * np.arccosh(1.0 + area / (2 * np.pi * a * a))
        inj = 0.8 * r_disk if injectivity_radius is None else injectivity_radius
        chart = 0.5 * inj if chart_radius is None else chart_radius
        geom = HyperbolicChartModel(kappa, chart, inj, diameter=max(r_disk, 2 * chart))
    elif kappa > 0:
        geom = SphereModel(1.0 / np.sqrt(kappa))
    else:
        side = np.sqrt(area)
        geom = FlatTorusModel(side, side)
    return SurfaceFactor(
        kind="synthetic",
        area=float(area),
        eigenvalues=lam,
        euler_char=int(round(chi)),
        geometry=geom,
        kappa=float(kappa),
        spectral_cap=float(lam[-1]),
        params={"kappa": float(kappa), "area": float(area), "n_eig": int(len(lam))},
    )


def weyl_spectrum(area, lambda1, n):
    """A plausible synthetic spectrum: ``0``, then Weyl-law growth from ``lambda1``."""
    j = np.arange(1, n)
    return np.concatenate([[0.0], lambda1 + 4 * np.pi * (j - 1) / area])

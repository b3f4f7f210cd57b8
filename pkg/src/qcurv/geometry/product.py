"""Riemannian products of two surfaces, the round 4-sphere, and scalar fields.

For a product of surfaces with Gauss curvatures ``K_a``, ``K_b``:

* Ricci eigenvalues ``(K_a, K_a, K_b, K_b)``, ``R = 2 (K_a + K_b)``,
* ``|Ric|^2 = 2 K_a^2 + 2 K_b^2``, ``|Rm|^2 = 4 K_a^2 + 4 K_b^2``,
* ``|W|^2 = |Rm|^2 - 2 |Ric|^2 + R^2 / 3 = (4/3) (K_a + K_b)^2``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, SpectralOnlyError, ValidationError


class ProductManifold4D:
    """Product ``A x B`` of two surface factors with a truncated tensor basis.

    Parameters
    ----------
    a, b : SurfaceFactor
    s_max : float, optional
        Keep product modes with ``alpha + beta <= s_max``. Defaults to the
        largest value both factor spectra resolve completely.

    Notes
    -----
    ``mode`` is ``"full"`` when both factors carry nodes, ``"partial"`` when
    one is spectral-only (fields are then restricted to modes constant
    along that factor) and ``"spectral-only"`` otherwise.
    """

    def __init__(self, a, b, s_max=None):
        self.a, self.b = a, b
        cap = min(a.spectral_cap, b.spectral_cap)
        if s_max is None:
            s_max = cap
        if s_max > cap + 1e-9:
            raise ConfigurationError(
                f"s_max={s_max} exceeds the resolved factor spectra (max usable {cap})"
            )
        if s_max <= 0:
            raise ConfigurationError("s_max must be positive")
        self.s_max = float(s_max)
        ia, ib = np.nonzero(a.eigenvalues[:, None] + b.eigenvalues[None, :] <= self.s_max + 1e-9)
        s = a.eigenvalues[ia] + b.eigenvalues[ib]
        order = np.lexsort((ib, ia, np.round(s, 10)))
        self.ia, self.ib, self.s = ia[order], ib[order], s[order]
        self.alpha = a.eigenvalues[self.ia]
        self.beta = b.eigenvalues[self.ib]

        if a.has_nodes and b.has_nodes:
            self.mode = "full"
            allowed = np.ones(len(self.s), dtype=bool)
        elif a.has_nodes or b.has_nodes:
            self.mode = "partial"
            allowed = (self.ib == 0) if a.has_nodes else (self.ia == 0)
        else:
            self.mode = "spectral-only"
            allowed = np.zeros(len(self.s), dtype=bool)
        self.field_modes = np.nonzero(allowed)[0]

        self.volume = a.area * b.area
        self.euler_char = a.euler_char * b.euler_char
        self.constant_curvature = a.constant_curvature and b.constant_curvature

        if self.mode != "spectral-only":
            self._Ea, self._wa, self._Ka, self._lapKa = self._node_data(a)
            self._Eb, self._wb, self._Kb, self._lapKb = self._node_data(b)
            fi, fj = self.ia[self.field_modes], self.ib[self.field_modes]
            self._fa, self._fb = fi, fj
            self._na, self._nb = int(fi.max()) + 1, int(fj.max()) + 1

    @staticmethod
    def _node_data(f):
        if f.has_nodes:
            return f.eigvecs, f.weights, f.curvature, f.laplacian_curvature
        # one pseudo-node carrying the constant mode only
        return (
            np.array([[1.0 / np.sqrt(f.area)]]),
            np.array([f.area]),
            np.array([f.kappa]),
            np.array([0.0]),
        )

    # ------------------------------------------------------------------ nodes
    @property
    def n_modes(self):
        return len(self.s)

    @property
    def n_field_modes(self):
        return len(self.field_modes)

    @property
    def node_shape(self):
        self.require_nodes()
        return (len(self._wa), len(self._wb))

    @property
    def weights(self):
        self.require_nodes()
        return np.outer(self._wa, self._wb)

    def require_nodes(self, what="this operation"):
        if self.mode == "spectral-only":
            raise SpectralOnlyError(f"{what} needs node values; the product is spectral-only")

    def require_full(self, what="this operation"):
        if self.mode != "full":
            raise SpectralOnlyError(f"{what} needs both factors in full mode (mode={self.mode})")

    def integrate(self, values):
        self.require_nodes("quadrature")
        return float(self._wa @ np.asarray(values) @ self._wb)

    def synthesize(self, coeffs):
        """Node values of the field with the given field-basis coefficients."""
        self.require_nodes("synthesis")
        C = np.zeros((self._na, self._nb))
        C[self._fa, self._fb] = coeffs
        return (self._Ea[:, : self._na] @ C) @ self._Eb[:, : self._nb].T

    def analyze(self, values):
        """Quadrature projection of node values onto the field basis."""
        self.require_nodes("analysis")
        V = self._wa[:, None] * np.asarray(values) * self._wb[None, :]
        C = self._Ea[:, : self._na].T @ V @ self._Eb[:, : self._nb]
        return C[self._fa, self._fb]

    def analyze_dual(self, values):
        """Same as :meth:`analyze`; named for its use on gradients of integrals."""
        return self.analyze(values)

    def node_points(self):
        """Per-node factor coordinates, flattened in C order over ``node_shape``."""
        self.require_full("node coordinates")
        na, nb = self.node_shape
        Pa = np.repeat(self.a.nodes, nb, axis=0)
        Pb = np.tile(self.b.nodes, (na, 1))
        return Pa, Pb

    # -------------------------------------------------------------- curvature
    @property
    def Ka(self):
        return self._Ka[:, None] if self.mode != "spectral-only" else self.a.kappa

    @property
    def Kb(self):
        return self._Kb[None, :] if self.mode != "spectral-only" else self.b.kappa

    def scalar_curvature(self):
        return 2.0 * (self.Ka + self.Kb) + np.zeros(self._shape_or_scalar())

    def ricci_eigenvalues(self):
        return (self.Ka, self.Ka, self.Kb, self.Kb)

    def ricci_norm_sq(self):
        return 2.0 * self.Ka**2 + 2.0 * self.Kb**2 + np.zeros(self._shape_or_scalar())

    def weyl_norm_sq(self):
        return (4.0 / 3.0) * (self.Ka + self.Kb) ** 2 + np.zeros(self._shape_or_scalar())

    def _shape_or_scalar(self):
        return self.node_shape if self.mode != "spectral-only" else ()

    def curvature_laplacians(self):
        return self._lapKa[:, None], self._lapKb[None, :]

    # --------------------------------------------------------------- distance
    def distance(self, Pa, Pb, Qa, Qb):
        """Product geodesic distance ``sqrt(d_a^2 + d_b^2)``."""
        da = self.a.geometry.distance(Pa, Qa)
        db = self.b.geometry.distance(Pb, Qb)
        return np.sqrt(da * da + db * db)

    @property
    def diameter(self):
        return float(np.hypot(self.a.geometry.diameter, self.b.geometry.diameter))

    def describe(self):
        return {
            "factor_a": {"kind": self.a.kind, **self.a.params},
            "factor_b": {"kind": self.b.kind, **self.b.params},
            "mode": self.mode,
            "s_max": self.s_max,
            "n_modes": int(self.n_modes),
            "n_field_modes": int(self.n_field_modes),
            "volume": self.volume,
            "euler_char": int(self.euler_char),
        }


def make_product(a, b, s_max=None):
    """Riemannian product of two factors; see :class:`ProductManifold4D`."""
    return ProductManifold4D(a, b, s_max=s_max)


class Sphere4Model:
    """Spectral-only round unit 4-sphere."""

    kind = "sphere4"
    mode = "spectral-only"
    R = 12.0
    Q = 3.0
    volume = 8 * np.pi**2 / 3
    euler_char = 2
    constant_curvature = True

    def __init__(self, lmax=10):
        self.lmax = int(lmax)
        self.degrees = np.arange(self.lmax + 1)
        l = self.degrees
        self.eigenvalues = (l * (l + 3)).astype(float)
        self.multiplicities = (l + 1) * (l + 2) * (2 * l + 3) // 6

    def require_nodes(self, what="this operation"):
        raise SpectralOnlyError(f"{what} needs node values; the round S^4 model is spectral-only")

    def require_full(self, what="this operation"):
        self.require_nodes(what)

    def describe(self):
        return {"model": "round-S4", "lmax": self.lmax, "volume": self.volume, "mode": self.mode}


@dataclass(eq=False)
class ScalarField:
    """A function on a product manifold.

    Holds coefficients in the manifold's field basis and/or node values;
    whichever is missing is derived on first access (synthesis or
    quadrature analysis) and cached.
    """

    manifold: ProductManifold4D
    _coeffs: Optional[np.ndarray] = None
    _values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self._coeffs is None and self._values is None:
            raise ValidationError("ScalarField needs coefficients or node values")
        if self._coeffs is not None:
            self._coeffs = np.asarray(self._coeffs, dtype=float)
            if self._coeffs.shape != (self.manifold.n_field_modes,):
                raise ValidationError(
                    f"coefficient vector has shape {self._coeffs.shape}, "
                    f"expected ({self.manifold.n_field_modes},)"
                )
        if self._values is not None:
            self._values = np.asarray(self._values, dtype=float)
            if self._values.shape != self.manifold.node_shape:
                raise ValidationError("node value array does not match the node grid")

    @classmethod
    def from_coeffs(cls, M, coeffs):
        return cls(M, _coeffs=coeffs)

    @classmethod
    def from_values(cls, M, values):
        return cls(M, _values=values)

    @classmethod
    def constant(cls, M, c):
        coeffs = np.zeros(M.n_field_modes)
        coeffs[0] = c * np.sqrt(M.volume)
        return cls(M, _coeffs=coeffs)

    @property
    def has_coeffs(self):
        return self._coeffs is not None

    @property
    def has_values(self):
        return self._values is not None

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = self.manifold.analyze(self._values)
        return self._coeffs

    @property
    def values(self):
        if self._values is None:
            self._values = self.manifold.synthesize(self._coeffs)
        return self._values

    def mean(self):
        if self._coeffs is not None:
            return float(self._coeffs[0] / np.sqrt(self.manifold.volume))
        return self.manifold.integrate(self._values) / self.manifold.volume

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.manifold, _coeffs=self.coeffs + other.coeffs)
        return ScalarField(self.manifold, _coeffs=self.coeffs + _const_coeffs(self.manifold, other))

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return self + (-1.0) * other
        return self + (-other)

    def __rmul__(self, c):
        return ScalarField(self.manifold, _coeffs=float(c) * self.coeffs)

    __mul__ = __rmul__

    def __neg__(self):
        return (-1.0) * self


def _const_coeffs(M, c):
    out = np.zeros(M.n_field_modes)
    out[0] = float(c) * np.sqrt(M.volume)
    return out


def random_field(M, rng, amplitude=0.3, decay=1.0, mean=0.0):
    """Random band-limited field with coefficients ~ N(0, 1) / (1 + s)^decay.

    Scaled so the root-mean-square of the node values is about ``amplitude``.
    """
    s = M.s[M.field_modes]
    c = rng.standard_normal(M.n_field_modes) / (1.0 + s) ** decay
    c[0] = 0.0
    rms = np.linalg.norm(c) / np.sqrt(M.volume)
    if rms > 0:
        c *= amplitude / rms
    c[0] = mean * np.sqrt(M.volume)
    return ScalarField(M, _coeffs=c)

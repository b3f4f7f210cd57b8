"""Real spherical harmonics on the unit sphere and a Gaussian product grid.

Harmonics are ordered by degree ``l`` and, within a degree, by
``m = -l..l``; ``m < 0`` carries ``sin(|m| phi)``, ``m > 0`` carries
``cos(m phi)``. They are orthonormal for the surface measure.
"""

import numpy as np


def degree_order(lmax):
    """Return arrays ``(l, m)`` listing the harmonics up to ``lmax``."""
    ls, ms = [], []
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
    return np.array(ls), np.array(ms)


def _normalized_legendre(lmax, x):
    """Table ``p[l, m, ...]`` of sqrt((2l+1)/4pi (l-m)!/(l+m)!) P_l^m(x).

    No Condon-Shortley phase.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    p = np.zeros((lmax + 1, lmax + 1) + x.shape)
    p[0, 0] = 1.0 / np.sqrt(4 * np.pi)
    for m in range(1, lmax + 1):
        p[m, m] = np.sqrt((2 * m + 1) / (2.0 * m)) * s * p[m - 1, m - 1]
    for m in range(0, lmax):
        p[m + 1, m] = np.sqrt(2 * m + 3.0) * x * p[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            p[l, m] = a * (x * p[l - 1, m] - b * p[l - 2, m])
    return p


def real_sph_harm(lmax, theta, phi, gradient=False):
    """Evaluate real harmonics at colatitude ``theta`` and longitude ``phi``.

    Parameters
    ----------
    lmax : int
    theta, phi : array_like, same shape ``S``
    gradient : bool
        Also return the components of the surface gradient along the unit
        vectors ``e_theta`` and ``e_phi``. Undefined at the poles.

    Returns
    -------
    Y : ndarray, shape ``S + ((lmax+1)**2,)``
    dY_theta, dY_phi : ndarray, same shape, only if ``gradient``
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x = np.cos(theta)
    sin_t = np.sin(theta)
    p = _normalized_legendre(lmax, x)
    ls, ms = degree_order(lmax)
    n = len(ls)
    Y = np.empty(theta.shape + (n,))
    if gradient:
        Yt = np.empty_like(Y)
        Yp = np.empty_like(Y)
    for k, (l, m) in enumerate(zip(ls, ms)):
        am = abs(m)
        pl = p[l, am]
        if m == 0:
            trig, dtrig, fac = 1.0, 0.0, 1.0
        elif m > 0:
            trig, dtrig, fac = np.cos(am * phi), -am * np.sin(am * phi), np.sqrt(2.0)
        else:
            trig, dtrig, fac = np.sin(am * phi), am * np.cos(am * phi), np.sqrt(2.0)
        Y[..., k] = fac * pl * trig
        if gradient:
            prev = p[l - 1, am] if l > am else 0.0
            c = np.sqrt((2 * l + 1.0) * (l - am) * (l + am) / (2 * l - 1.0)) if l > 0 else 0.0
            dpl = (l * x * pl - c * prev) / sin_t
            Yt[..., k] = fac * dpl * trig
            Yp[..., k] = fac * pl * dtrig / sin_t
    if gradient:
        return Y, Yt, Yp
    return Y


def gauss_grid(n_lon):
    """Gauss-Legendre latitudes times uniform longitudes on the unit sphere.

    Uses ``ceil(n_lon / 2)`` latitude rings and ``n_lon`` longitudes, the
    usual Gaussian grid. Spherical polynomials of degree below ``n_lon``
    are integrated exactly.

    Returns
    -------
    theta, phi, weights : ndarray, flattened over the grid
    """
    n_lat = (n_lon + 1) // 2
    x, wx = np.polynomial.legendre.leggauss(n_lat)
    theta = np.arccos(x)
    phi = 2 * np.pi * np.arange(n_lon) / n_lon
    T, P = np.meshgrid(theta, phi, indexing="ij")
    W = np.outer(wx, np.full(n_lon, 2 * np.pi / n_lon))
    return T.ravel(), P.ravel(), W.ravel()


def to_cartesian(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def to_spherical(X):
    X = np.asarray(X, dtype=float)
    theta = np.arctan2(np.hypot(X[..., 0], X[..., 1]), X[..., 2])
    phi = np.mod(np.arctan2(X[..., 1], X[..., 0]), 2 * np.pi)
    return theta, phi

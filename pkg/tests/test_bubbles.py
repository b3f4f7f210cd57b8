import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from qcurv import bubbles, functional
from qcurv.errors import ConfigurationError, ValidationError
from qcurv.geometry import ScalarField, random_field

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = -NORTH


# ------------------------------------------------------------------ cutoff


def test_cutoff_shape():
    cut = bubbles.CutoffSpec(0.5)
    t = np.linspace(0, 2, 2001)
    chi, d1, d2 = cut.derivatives(t)
    assert_allclose(chi[t <= 0.5], t[t <= 0.5])
    assert_allclose(chi[t >= 1.0], 1.0)
    assert np.all(np.diff(chi) >= -1e-15)
    # C^1: derivative is continuous across both joins
    assert_allclose(np.gradient(chi, t)[1:-1], d1[1:-1], atol=5e-3)


def test_cutoff_rejects_negative():
    with pytest.raises(ValidationError):
        bubbles.cutoff_chi(bubbles.CutoffSpec(0.5), [-0.1])
    with pytest.raises(ValidationError):
        bubbles.CutoffSpec(0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.0, 5.0))
def test_cutoff_second_derivative(delta, t):
    cut = bubbles.CutoffSpec(delta)
    h = 1e-6 * delta
    if abs(t - delta) < 2 * h or abs(t - 2 * delta) < 2 * h:
        return
    _, d1p, _ = cut.derivatives(t + h)
    _, d1m, _ = cut.derivatives(max(t - h, 0.0))
    _, _, d2 = cut.derivatives(t)
    if t > h:
        assert abs((d1p - d1m) / (2 * h) - d2) < 1e-4 / delta


# -------------------------------------------------------------- barycenter


def test_barycenter_canonical_order(s2xs2_small):
    M = s2xs2_small
    a = bubbles.Barycenter.create(M, [0.3, 0.7], [NORTH, SOUTH], [SOUTH, NORTH])
    b = bubbles.Barycenter.create(M, [0.7, 0.3], [SOUTH, NORTH], [NORTH, SOUTH])
    assert a.as_dict() == b.as_dict()


@pytest.mark.parametrize(
    "w, pa",
    [([0.5, 0.6], [NORTH, SOUTH]), ([-0.1, 1.1], [NORTH, SOUTH]), ([1.0], [[0.0, 0.0, 2.0]])],
)
def test_barycenter_validation(s2xs2_small, w, pa):
    with pytest.raises(ValidationError):
        bubbles.Barycenter.create(s2xs2_small, w, pa, [NORTH] * len(pa))


# ----------------------------------------------------- radial oracle on T^4


def _radial_oracle(lam, delta, volume):
    """Flat bubble integrals by 1D adaptive quadrature of the radial profile."""
    cut = bubbles.CutoffSpec(delta)

    def parts(r):
        chi, d1, d2 = cut.derivatives(r)
        q = 1 + lam**2 * chi**2
        G = np.log(2 * lam) - np.log(q)
        G1 = -2 * lam**2 * chi * d1 / q
        G2 = -2 * lam**2 * ((d1**2 + chi * d2) * q - 2 * lam**2 * chi**2 * d1**2) / q**2
        return G, G1, G2

    logc = np.log(2 * lam) - np.log1p(4 * lam**2 * delta**2)
    kw = dict(points=[1 / lam, delta], limit=400, epsabs=0, epsrel=1e-12)
    S3 = 2 * np.pi**2
    lap2 = S3 * quad(lambda r: (parts(r)[2] + 3 * parts(r)[1] / r) ** 2 * r**3, 0, 2 * delta, **kw)[0]
    integ = S3 * quad(lambda r: (parts(r)[0] - logc) * r**3, 0, 2 * delta, **kw)[0] + volume * logc
    Z = S3 * quad(lambda r: (np.exp(4 * parts(r)[0]) - np.exp(4 * logc)) * r**3, 0, 2 * delta, **kw)[0]
    return lap2, integ, np.log(Z + volume * np.exp(4 * logc))


@pytest.mark.parametrize("lam", [3.0, 30.0, 3000.0])
def test_flat_bubble_matches_radial_oracle(t4, lam):
    sig = bubbles.Barycenter.single(t4, [1.0, 2.0], [0.5, 3.0])
    B = bubbles.bubble_field(t4, sig, lam)
    r = B.raw_terms()
    quadv, integ, logz = _radial_oracle(lam, B.cutoff.delta, t4.volume)
    assert_allclose(r.quadratic, quadv, rtol=1e-7)
    assert_allclose(r.integral, integ, rtol=1e-10)
    assert_allclose(r.log_integral, logz, rtol=1e-9)


def test_bubble_outside_support_is_log_c(s2xs2_small):
    M = s2xs2_small
    sig = bubbles.Barycenter.single(M, NORTH, NORTH)
    B = bubbles.bubble_field(M, sig, 20.0)
    v = B.values_at(SOUTH[None, :], SOUTH[None, :])
    assert_allclose(v, B.log_c, rtol=1e-14)
    assert_allclose(B.values_at(NORTH[None, :], NORTH[None, :]), np.log(40.0), rtol=1e-14)


def test_band_limited_bubble_agrees_at_low_lambda(s2xs2):
    M = s2xs2
    sig = bubbles.Barycenter.single(M, NORTH, NORTH)
    B = bubbles.bubble_field(M, sig, 1.5)
    r = B.raw_terms()
    f = B.to_field()
    # node sampling at lmax 6 limits the agreement
    assert_allclose(f.mean() * M.volume, r.integral, rtol=1e-3)
    assert_allclose(functional.raw_terms(M, f).log_integral, r.log_integral, rtol=1e-3)


def test_overlapping_atoms_quadrature_converges(s2xs2_small):
    M = s2xs2_small
    pa = np.array([[0.0, 0.0, 1.0], [np.sin(0.3), 0.0, np.cos(0.3)]])
    sig = bubbles.Barycenter.create(M, [0.4, 0.6], pa, [NORTH, NORTH])
    lo = bubbles.bubble_field(M, sig, 40.0, quad=bubbles.QuadratureSpec(n_r=6, n_beta=12, n_theta=12)).raw_terms()
    hi = bubbles.bubble_field(M, sig, 40.0, quad=bubbles.QuadratureSpec(n_r=10, n_beta=20, n_theta=24)).raw_terms()
    # blended charts of nearby atoms converge slowly in the form term
    assert_allclose(lo.quadratic, hi.quadratic, rtol=5e-3)
    assert_allclose(lo.log_integral, hi.log_integral, rtol=5e-4)


def test_scaled_bubble(s2xs2_small):
    M = s2xs2_small
    B = bubbles.bubble_field(M, bubbles.Barycenter.single(M, NORTH, SOUTH), 10.0)
    r1, r2 = B.raw_terms(), B.scaled(0.5).raw_terms()
    assert_allclose(r2.quadratic, 0.25 * r1.quadratic, rtol=1e-12)
    assert_allclose(r2.integral, 0.5 * r1.integral, rtol=1e-12)


def test_support_must_fit_injectivity(s2xs2_small):
    M = s2xs2_small
    with pytest.raises(ConfigurationError):
        bubbles.BubbleField(M, bubbles.Barycenter.single(M, NORTH, NORTH), 10.0, cutoff=bubbles.CutoffSpec(1.5))


# -------------------------------------------------------------- transport


def test_w1_between_diracs(s2xs2_small):
    M = s2xs2_small
    a = bubbles.Barycenter.single(M, NORTH, NORTH)
    b = bubbles.Barycenter.single(M, SOUTH, NORTH)
    assert_allclose(bubbles.barycenter_distance(M, a, b), np.pi, rtol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000))
def test_w1_matches_assignment_enumeration(s2xs2_small, seed):
    # equal-mass n-point measures: W1 is attained at a permutation
    M = s2xs2_small
    rng = np.random.default_rng(seed)
    n = 3
    ga = M.a.geometry
    m1 = bubbles.DiscreteMeasure(ga.random_points(rng, n), ga.random_points(rng, n), np.full(n, 1 / n))
    m2 = bubbles.DiscreteMeasure(ga.random_points(rng, n), ga.random_points(rng, n), np.full(n, 1 / n))
    C = bubbles.pairwise_distance(M, m1, m2)
    best = min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))
    assert_allclose(bubbles.measure_distance(M, m1, m2).value, best, rtol=1e-8)


def test_w1_rejects_unequal_mass(s2xs2_small):
    M = s2xs2_small
    m1 = bubbles.DiscreteMeasure(NORTH[None], NORTH[None], np.array([1.0]))
    m2 = bubbles.DiscreteMeasure(NORTH[None], NORTH[None], np.array([0.5]))
    with pytest.raises(ValidationError):
        bubbles.measure_distance(M, m1, m2)


def test_compression_bound_is_honest(s2xs2_small, rng):
    M = s2xs2_small
    u = random_field(M, rng, 0.4)
    m = bubbles.to_measure(M, u)
    target = bubbles.Barycenter.single(M, NORTH, NORTH).measure()
    exact = bubbles.measure_distance(M, m, target).value
    approx = bubbles.measure_distance(M, m, target, n_max=50, max_vars=10)
    assert abs(approx.value - exact) <= approx.compression_bound + 1e-9


# ---------------------------------------------------------- concentration


@pytest.fixture(scope="module")
def two_atom(s2xs2):
    M = s2xs2
    sig = bubbles.Barycenter.create(M, [0.35, 0.65], [NORTH, SOUTH], [NORTH, SOUTH])
    return M, sig, bubbles.bubble_field(M, sig, 80.0)


def test_bubble_measure_converges_to_sigma(two_atom):
    M, sig, B = two_atom
    tr = bubbles.measure_distance(M, B, sig)
    assert tr.value < 0.05 * M.diameter


def test_concentration_and_projection(two_atom):
    M, sig, B = two_atom
    rep = bubbles.concentration_points(M, B, 2)
    assert rep.passed
    psi = bubbles.project_psi(M, B, 2)
    assert_allclose(np.sort(psi.weights), [0.35, 0.65], atol=0.02)
    assert bubbles.barycenter_distance(M, psi, sig) < 0.01 * M.diameter


def test_ball_fractions(two_atom):
    M, _, B = two_atom
    fr = bubbles.ball_fractions(M, B, np.array([NORTH, SOUTH]), np.array([NORTH, SOUTH]), 1.0)
    assert_allclose(fr, [0.35, 0.65], atol=0.02)


def test_field_measure_mass(s2xs2_small, rng):
    M = s2xs2_small
    u = random_field(M, rng, 0.3)
    m = bubbles.to_measure(M, u)
    e = np.exp(4 * u.values).ravel() * M.weights.ravel()
    assert_allclose(m.total, 1.0, rtol=1e-12)
    assert_allclose(np.sort(m.masses), np.sort(e / e.sum()), rtol=1e-10)

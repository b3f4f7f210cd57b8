import numpy as np
import pytest
from numpy.testing import assert_allclose

from qcurv import adams, bubbles
from qcurv.errors import PreconditionError, ValidationError
from qcurv.geometry import ScalarField, make_product, make_sphere_factor, make_synthetic_factor, random_field, weyl_spectrum

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = -NORTH
EIGHT_PI2 = 8 * np.pi**2


def test_tail_slope_of_line():
    q = np.linspace(0, 10, 40)
    slope, n = adams.tail_slope(q, 0.3 * q + 2.0, fraction=0.25)
    assert_allclose(slope, 0.3, rtol=1e-12)
    assert n == 10


def test_tail_slope_degenerate():
    s, _ = adams.tail_slope([1.0], [2.0])
    assert np.isnan(s)


def test_random_family_satisfies_calibrated_inequality(s2xs2_small, rng):
    M = s2xs2_small
    fam = [ScalarField.constant(M, 0.0)] + [random_field(M, rng, a) for a in np.linspace(0.1, 1.0, 10)]
    rep = adams.adams_report(M, fam)
    assert rep.all_satisfied
    # the constant member sits at log V exactly
    assert_allclose(rep.logTerm[0], np.log(M.volume), rtol=1e-12)
    assert rep.C >= np.log(M.volume) - 1e-12


def test_fixed_constant_flags_violations(s2xs2_small, rng):
    M = s2xs2_small
    fam = [random_field(M, rng, 1.0) for _ in range(4)]
    rep = adams.adams_report(M, fam, C=-1e6)
    assert not rep.satisfied.any()


def test_single_bubble_slope_below_sharp(s2xs2_small):
    M = s2xs2_small
    sig = bubbles.Barycenter.single(M, NORTH, NORTH)
    fam = [bubbles.bubble_field(M, sig, lam) for lam in (100, 200, 400, 800)]
    rep = adams.adams_report(M, fam, tail_fraction=1.0)
    assert 0.9 < rep.slope_ratio <= 1.0


def test_requires_positive_operator():
    area = 4 * np.pi / 3
    M = make_product(make_sphere_factor(3), make_synthetic_factor(-3.0, weyl_spectrum(area, 2.0, 20), area))
    with pytest.raises(PreconditionError):
        adams.adams_report(M, [])


def test_improved_reduces_to_plain_for_ell_zero(s2xs2_small, rng):
    M = s2xs2_small
    fam = [random_field(M, rng, 0.5) for _ in range(3)]
    a = adams.adams_report(M, fam)
    b = adams.improved_adams_report(M, 0, 0.4, 0.5, fam, [NORTH], [NORTH], 1.0)
    assert_allclose(a.C, b.C)


def test_improved_validation(s2xs2_small):
    M = s2xs2_small
    with pytest.raises(ValidationError):
        adams.improved_adams_report(M, 1, 0.6, 0.5, [], [NORTH, SOUTH], [NORTH, SOUTH], 1.0)
    with pytest.raises(ValidationError):
        # centres too close for the requested separation
        adams.improved_adams_report(M, 1, 0.4, 0.5, [], [NORTH, NORTH], [NORTH, NORTH], 1.0)


def test_improved_filters_concentrated_members(s2xs2_small):
    M = s2xs2_small
    two = bubbles.Barycenter.create(M, [0.5, 0.5], [NORTH, SOUTH], [NORTH, SOUTH])
    one = bubbles.Barycenter.single(M, NORTH, NORTH)
    fam = [bubbles.bubble_field(M, two, 200.0), bubbles.bubble_field(M, one, 200.0)]
    rep = adams.improved_adams_report(M, 1, 0.4, 0.5, fam, [NORTH, SOUTH], [NORTH, SOUTH], 1.0)
    assert list(rep.included) == [True, False]
    assert_allclose(rep.slope_bound, 1 / (2 * EIGHT_PI2))

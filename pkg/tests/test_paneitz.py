import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from qcurv import paneitz
from qcurv.errors import NumericalError, SpectralOnlyError, ValidationError
from qcurv.geometry import Sphere4Model, make_product, make_sphere_factor, make_synthetic_factor, random_field, weyl_spectrum

PI2 = np.pi**2


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0, 50), st.floats(0, 50), st.floats(-3, 3), st.floats(-3, 3)
)
def test_mu_closed_form_matches_expanded_form(alpha, beta, ka, kb):
    s = alpha + beta
    expanded = s * s + (4.0 / 3.0) * (ka + kb) * s - 2.0 * (ka * alpha + kb * beta)
    assert paneitz.mu_closed_form(alpha, beta, ka, kb) == pytest.approx(expanded, rel=1e-12, abs=1e-9)


def test_sphere4_spectrum():
    S = Sphere4Model(6)
    assert_allclose(paneitz.total_q(S), 8 * PI2, rtol=1e-14)
    ev = np.unique(paneitz.paneitz_operator(S).eigenvalues())
    l = np.arange(7)
    assert_allclose(ev, l * (l + 1) * (l + 2) * (l + 3))
    assert paneitz.regime(paneitz.total_q(S))["tag"] == "degenerate"


def test_s2xs2_invariants(s2xs2):
    Q = paneitz.q_curvature(s2xs2)
    assert_allclose(Q.values, 1.0 / 3.0, atol=1e-12)
    assert_allclose(paneitz.total_q(s2xs2), 16 * PI2 / 3, rtol=1e-12)
    assert abs(paneitz.gauss_bonnet_defect(s2xs2)) < 1e-10
    spec = paneitz.spectrum(s2xs2)
    assert spec.negative_count == 0 and spec.kernel_dim == 1


def test_t4_is_flat(t4):
    assert_allclose(paneitz.total_q(t4), 0.0, atol=1e-12)
    op = paneitz.paneitz_operator(t4)
    assert_allclose(op.diag, t4.s**2)
    assert abs(paneitz.gauss_bonnet_defect(t4)) < 1e-10


def test_diagonal_matches_assembled(s2xs2_small):
    M = s2xs2_small
    D = paneitz.paneitz_operator(M, "diagonal").dense()
    A = paneitz.paneitz_operator(M, "assembled").dense()
    assert_allclose(A, D, atol=1e-10)


def test_form_and_apply_agree(s2xs2_small, rng):
    M = s2xs2_small
    u, v = random_field(M, rng), random_field(M, rng)
    Pu = paneitz.paneitz_apply(M, u)
    assert_allclose(paneitz.paneitz_form(M, u, v), M.integrate(Pu.values * v.values), rtol=1e-10)
    assert_allclose(paneitz.paneitz_form(M, u, v), paneitz.paneitz_form(M, v, u), rtol=1e-12)


@pytest.mark.parametrize("name", ["s2xs2_small", "t4"])
def test_conformal_invariance(name, request, rng):
    M = request.getfixturevalue(name)
    kP = paneitz.total_q(M)
    for _ in range(5):
        w = random_field(M, rng, amplitude=0.4)
        cd = paneitz.conformal_q(M, w)
        assert abs(cd.total_q - kP) < 1e-8 * max(abs(kP), 1.0)


def test_conformal_overflow_guard(s2xs2_small, rng):
    w = random_field(s2xs2_small, rng, amplitude=20.0)
    with pytest.raises(ValidationError):
        paneitz.conformal_q(s2xs2_small, w)


def test_negative_eigenvalue_mode():
    area = 4 * np.pi / 3
    hyp = make_synthetic_factor(-3.0, weyl_spectrum(area, 2.0, 30), area)
    M = make_product(make_sphere_factor(4), hyp)
    op = paneitz.paneitz_operator(M)
    i = np.flatnonzero((M.alpha == 2.0) & (M.beta == 0.0))
    assert len(i) == 3
    assert_allclose(op.diag[i], -16.0 / 3.0, atol=1e-12)
    spec = paneitz.spectrum(M)
    assert spec.negative_count == 3
    assert M.mode == "partial"
    assert_allclose(paneitz.total_q(M), 8 * PI2 * (-22.0 / 9.0), rtol=1e-12)


def test_regime_thresholds():
    assert paneitz.regime(4 * PI2)["tag"] == "subcritical"
    r = paneitz.regime(64 * PI2 / 3)
    assert r["tag"] == "supercritical" and r["k"] == 2
    assert paneitz.regime(16 * PI2)["tag"] == "degenerate"


def test_spectral_only_operations(genus3):
    assert_allclose(paneitz.q_curvature(genus3), 1.0 / 3.0)
    with pytest.raises(SpectralOnlyError):
        paneitz.conformal_q(genus3, None)
    assert_allclose(paneitz.total_q(genus3) / PI2, 64.0 / 3.0, rtol=1e-12)


@pytest.fixture(scope="module")
def greens(s2xs2):
    n0, n1 = s2xs2.node_shape
    poles = [0, 5 * n1 + 17, (n0 // 2) * n1 + 3]
    return [paneitz.green_function(s2xs2, x) for x in poles], poles


def test_green_weak_residual(s2xs2, greens):
    rng = np.random.default_rng(0)
    for g in greens[0]:
        v = random_field(s2xs2, rng, 1.0)
        assert paneitz.green_weak_residual(s2xs2, g, v) < 1e-8


def test_green_symmetry(s2xs2, greens):
    gs, poles = greens
    for i in range(len(gs)):
        for j in range(i + 1, len(gs)):
            a = gs[i].G_nodes.ravel()[poles[j]]
            b = gs[j].G_nodes.ravel()[poles[i]]
            assert abs(a - b) < 1e-10 * max(1.0, abs(a))


def test_green_regular_part_homogeneous(greens):
    gs, _ = greens
    diag = np.array([g.S_diag for g in gs])
    funct = np.array([g.funct_value for g in gs])
    assert np.ptp(diag) < 1e-8 * max(1.0, np.abs(diag).max())
    assert np.ptp(funct) < 1e-8 * max(1.0, np.abs(funct).max())


def test_green_needs_enough_modes(s2xs2_small):
    with pytest.raises(NumericalError):
        paneitz.green_function(s2xs2_small, 0, nModes=8)

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qcurv import solver
from qcurv.errors import PreconditionError, SpectralOnlyError, ValidationError
from qcurv.functional import residual_coeffs
from qcurv.geometry import ScalarField, Sphere4Model, random_field


@pytest.mark.parametrize(
    "kw",
    [{"grad_tol": 0.0}, {"shrink": 1.0}, {"max_iters": 0}, {"rho_schedule": (0.9, 1.6)}],
)
def test_options_validation(kw):
    with pytest.raises(ValidationError):
        solver.SolveOptions(**kw)


def test_jacobian_matches_finite_differences(s2xs2_small, rng):
    M = s2xs2_small
    u = random_field(M, rng, 0.4)
    v = random_field(M, rng, 1.0)
    J = solver.jacobian(M, u, 0.95)
    h = 1e-6
    Fp = residual_coeffs(M, ScalarField.from_coeffs(M, u.coeffs + h * v.coeffs), 0.95)
    Fm = residual_coeffs(M, ScalarField.from_coeffs(M, u.coeffs - h * v.coeffs), 0.95)
    fd = (Fp - Fm) / (2 * h)
    assert_allclose(J @ v.coeffs, fd, atol=1e-6 * np.abs(fd).max())


def test_weighted_gram_matches_dense(s2xs2_small, rng):
    M = s2xs2_small
    H = rng.uniform(0.5, 2.0, size=M.node_shape)
    Phi = np.stack([ScalarField.from_coeffs(M, e).values.ravel() for e in np.eye(M.n_field_modes)], axis=1)
    dense = Phi.T @ (H.ravel()[:, None] * Phi)
    assert_allclose(solver.weighted_gram(M, H), dense, atol=1e-10)


def test_subcritical_solve_from_random_start(s2xs2_small):
    M = s2xs2_small
    rep = solver.minimize_ii(M, solver.SolveOptions(initializer="random", init_amplitude=0.5, seed=3))
    assert rep.converged
    assert rep.residual_norm < 1e-8
    assert rep.q_tilde_deviation < 1e-6
    assert_allclose(rep.kP_recomputed, rep.k_P, rtol=1e-8)
    vals = [h.ii for h in rep.history if h.step > 0]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_flat_torus_solution_is_zero(t4):
    rep = solver.minimize_ii(t4, solver.SolveOptions(initializer="random", init_amplitude=0.1, seed=1))
    assert rep.converged
    assert np.abs(rep.u.values).max() < 1e-8


def test_newton_converges_quadratically(s2xs2_small):
    M = s2xs2_small
    rng = np.random.default_rng(5)
    u0 = random_field(M, rng, 0.2, decay=3.0)
    rep = solver.newton_refine(M, u0, 1.0, solver.SolveOptions(basin_factor=1e3))
    assert rep.converged
    r = np.array(rep.residual_sequence)
    big = r[:-1] > 1e-6
    # r_{k+1} <= C r_k^2 while above roundoff
    assert np.all(r[1:][big] <= 10.0 * r[:-1][big] ** 2 + 1e-12)


def test_newton_basin_guard(s2xs2_small, rng):
    u0 = random_field(s2xs2_small, rng, 1.0)
    with pytest.raises(PreconditionError):
        solver.newton_refine(s2xs2_small, u0, 1.0)


def test_degenerate_total_q_refused():
    with pytest.raises(PreconditionError, match="8 k pi"):
        solver.minimize_ii(Sphere4Model(4))


def test_spectral_only_refused(genus3):
    with pytest.raises(SpectralOnlyError):
        solver.minimize_ii(genus3)


def test_continuation_tracks_constants(s2xs2_small):
    M = s2xs2_small
    res = solver.continuation_rho(M, solver.SolveOptions(rho_schedule=(0.9, 0.95, 1.0), initializer="random", seed=4))
    assert res.status == "complete"
    assert [r.rho for r in res.reports] == [0.9, 0.95, 1.0]
    for r in res.reports:
        assert r.residual_norm < 1e-8
        assert np.abs(r.u.coeffs).max() < 1e-6
    assert res.bounded


def test_witness_monotone(s2xs2_small):
    rep = solver.minmax_witness(s2xs2_small, 1, 20.0, 3, 5, (0.9, 1.0, 1.1), seed=2)
    assert rep.monotone
    assert len(rep.witness) == 3
    assert rep.profiles.shape[1] == 5

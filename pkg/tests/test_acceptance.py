"""Acceptance criteria 1-14 at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line (also repeated in the
pytest terminal summary) before asserting.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from qcurv import adams, bubbles, functional, paneitz, solver
from qcurv.geometry import (
    ScalarField,
    Sphere4Model,
    make_flat_torus_factor,
    make_product,
    make_sphere_factor,
    make_synthetic_factor,
    random_field,
    weyl_spectrum,
)

PI2 = np.pi**2
NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = -NORTH


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def S22():
    f = make_sphere_factor(6)
    return make_product(f, f)


@pytest.fixture(scope="module")
def T4():
    f = make_flat_torus_factor(2 * np.pi, 2 * np.pi, 3)
    return make_product(f, f)


@pytest.fixture(scope="module")
def G33():
    area = 8 * np.pi
    f = make_synthetic_factor(-1.0, weyl_spectrum(area, 0.7, 60), area)
    return make_product(f, f)


def test_c01_round_s4():
    S = Sphere4Model(8)
    kerr = abs(paneitz.total_q(S) - 8 * PI2)
    op = paneitz.paneitz_operator(S)
    l = np.arange(6)
    expected = l * (l + 1) * (l + 2) * (l + 3)
    got = np.array([op.diag[np.repeat(S.degrees, S.multiplicities) == k] for k in l], dtype=object)
    everr = max(float(np.abs(g - e).max()) for g, e in zip(got, expected))
    report(1, kerr < 1e-10 and everr < 1e-8, f"|k_P - 8pi^2| = {kerr:.1e}, eigenvalue error {everr:.1e}")


def test_c02_s2xs2_invariants(S22):
    kerr = abs(paneitz.total_q(S22) - 16 * PI2 / 3)
    gb = abs(paneitz.gauss_bonnet_defect(S22))
    sp = paneitz.spectrum(S22)
    ok = kerr < 1e-8 and gb < 1e-6 and sp.negative_count == 0 and sp.kernel_dim == 1
    report(2, ok, f"k_P err {kerr:.1e}, GB defect {gb:.1e}, kbar {sp.negative_count}, kernel {sp.kernel_dim}")


def test_c03_conformal_invariance(S22, T4):
    rng = np.random.default_rng(3)
    worst = 0.0
    for M in (S22, T4):
        kP = paneitz.total_q(M)
        for _ in range(20):
            w = random_field(M, rng, amplitude=rng.uniform(0.1, 0.8))
            cd = paneitz.conformal_q(M, w)
            worst = max(worst, abs(cd.total_q - kP) / max(abs(kP), 1.0))
    report(3, worst < 1e-6, f"max relative drift {worst:.1e} over 40 fields")


def test_c04_gradient(S22):
    rng = np.random.default_rng(4)
    worst = 0.0
    h = 1e-5
    for _ in range(20):
        u, v = random_field(S22, rng, 0.5), random_field(S22, rng, 0.5)
        rho = rng.uniform(0.8, 1.2)
        exact = float(functional.ii_gradient(S22, u, rho).coeffs @ v.coeffs)
        f = lambda e: functional.ii_value(S22, ScalarField.from_coeffs(S22, u.coeffs + e * v.coeffs), rho).total
        fd = (f(h) - f(-h)) / (2 * h)
        worst = max(worst, abs(fd - exact) / abs(exact))
    report(4, worst < 1e-5, f"max relative FD error {worst:.1e} over 20 triples")


def test_c05_subcritical_solve(S22, T4):
    rep = solver.minimize_ii(S22, solver.SolveOptions(initializer="random", init_amplitude=0.5, seed=5))
    tor = solver.minimize_ii(T4, solver.SolveOptions(initializer="random", init_amplitude=0.3, seed=5))
    sup_t4 = float(np.abs(tor.u.values).max())
    ok = rep.converged and rep.residual_norm < 1e-8 and rep.q_tilde_deviation < 1e-6 and tor.converged and sup_t4 < 1e-8
    report(
        5,
        ok,
        f"S2xS2 residual {rep.residual_norm:.1e}, Q~ deviation {rep.q_tilde_deviation:.1e}; T4 sup|u| {sup_t4:.1e}",
    )


def test_c06_continuation(S22):
    opts = solver.SolveOptions(rho_schedule=(0.9, 0.925, 0.95, 0.975, 1.0), initializer="random", seed=6)
    res = solver.continuation_rho(S22, opts)
    closed = functional.constant_solution(S22)
    resid = max(r.residual_norm for r in res.reports)
    gap = max(float(np.abs(r.u.coeffs - closed.coeffs).max()) for r in res.reports)
    ok = res.status == "complete" and len(res.reports) == 5 and resid < 1e-8 and gap < 1e-6
    report(6, ok, f"{len(res.reports)} rho steps, max residual {resid:.1e}, max gap to closed form {gap:.1e}")


def test_c07_adams_sharpness(S22):
    sig = bubbles.Barycenter.single(S22, NORTH, NORTH)
    lams = [100 * 2**i for i in range(9)]
    single = [bubbles.bubble_field(S22, sig, lam) for lam in lams]
    rep = adams.adams_report(S22, single, [f"lambda={l}" for l in lams], name="single-bubble")
    ratio = rep.slope_ratio
    rng = np.random.default_rng(7)
    calib = [ScalarField.constant(S22, 0.0)] + [random_field(S22, rng, rng.uniform(0.05, 1.5)) for _ in range(20)]
    C = adams.adams_report(S22, calib + single).C
    fresh = [random_field(S22, rng, rng.uniform(0.05, 1.5)) for _ in range(100)]
    chk = adams.adams_report(S22, fresh, C=C)
    ok = 0.90 <= ratio <= 1.00 and chk.all_satisfied
    report(7, ok, f"tail slope {ratio:.8f} x 1/(8pi^2); C = {C:.3f}, {int(chk.satisfied.sum())}/100 satisfied")


def test_c08_improved_adams(S22):
    two = bubbles.Barycenter.create(S22, [0.5, 0.5], [NORTH, SOUTH], [NORTH, SOUTH])
    fam2 = [bubbles.bubble_field(S22, two, 200 * 2**i) for i in range(8)]
    rep2 = adams.improved_adams_report(S22, 1, 0.4, 0.5, fam2, [NORTH, SOUTH], [NORTH, SOUTH], 1.0)
    q2 = rep2.quadratic[rep2.included]
    tail = q2[q2 >= np.quantile(q2, 0.75)]
    # single bubbles whose energies fall in the two-bubble tail window
    one = bubbles.Barycenter.single(S22, NORTH, NORTH)
    fam1 = [bubbles.bubble_field(S22, one, 100 * 2.0**i) for i in range(25)]
    rep1 = adams.adams_report(S22, fam1)
    sel = (rep1.quadratic >= tail.min()) & (rep1.quadratic <= tail.max())
    s1 = float(np.polyfit(rep1.quadratic[sel], rep1.logTerm[sel], 1)[0])
    r_sharp = rep2.tail_slope * 16 * PI2
    r_single = rep2.tail_slope / s1
    ok = rep2.included.all() and r_sharp <= 1.10 and r_single <= 0.55
    report(
        8,
        ok,
        f"two-bubble slope {r_sharp:.8f} x 1/(16pi^2), {r_single:.4f} x single-bubble slope "
        f"({int(sel.sum())} matched members)",
    )


def _bubble_series(M, sig, lams):
    return np.array([functional.ii_value(M, bubbles.bubble_field(M, sig, lam)).total for lam in lams])


def test_c09_energy_collapse(G33, S22):
    lams = (10, 20, 40, 80)
    kP = paneitz.total_q(G33)
    rng = np.random.default_rng(9)
    worst = -np.inf
    for _ in range(10):
        sig = bubbles.Barycenter.random(G33, 2, rng)
        worst = max(worst, float(np.diff(_bubble_series(G33, sig, lams)).max()))
    rng = np.random.default_rng(90)
    incr = []
    for _ in range(10):
        sig = bubbles.Barycenter.random(S22, 2, rng)
        incr.append(float(np.diff(_bubble_series(S22, sig, lams))[-1]))
    ok = abs(kP - 64 * PI2 / 3) < 1e-9 and worst < 0 and min(incr) > 0
    report(
        9,
        ok,
        f"genus-3 k_P/pi^2 = {kP / PI2:.4f}, largest step {worst:.2f}; S2xS2 smallest final step {min(incr):.2f}",
    )


def test_c10_weak_convergence(S22):
    rng = np.random.default_rng(10)
    diam = S22.diameter
    w_worst = p_worst = 0.0
    for _ in range(20):
        sig = bubbles.Barycenter.random(S22, 2, rng)
        B = bubbles.bubble_field(S22, sig, 80.0)
        tr = bubbles.measure_distance(S22, B, sig)
        w_worst = max(w_worst, (tr.value + tr.compression_bound) / diam)
        psi = bubbles.project_psi(S22, B, 2)
        p_worst = max(p_worst, bubbles.barycenter_distance(S22, psi, sig) / diam)
    ok = w_worst < 0.05 and p_worst < 0.05
    report(10, ok, f"max W1/diam {w_worst:.4f} (incl. compression bound), max Psi distance/diam {p_worst:.1e}")


def test_c11_negative_regime():
    area = 4 * np.pi / 3
    M = make_product(make_sphere_factor(6), make_synthetic_factor(-3.0, weyl_spectrum(area, 2.0, 40), area))
    sp = paneitz.spectrum(M)
    op = paneitz.paneitz_operator(M)
    i = np.flatnonzero((M.alpha == 2.0) & (M.beta == 0.0))
    err = float(np.abs(op.diag[i] + 16.0 / 3.0).max())
    ok = sp.negative_count >= 1 and err < 1e-8
    report(11, ok, f"kbar = {sp.negative_count}, (2,0) eigenvalue error {err:.1e}")


def test_c12_witness_monotone(S22, G33):
    rhos = (0.9, 0.95, 1.0, 1.05, 1.1)
    out = []
    for M, k in ((S22, 1), (G33, 2)):
        assert paneitz.spectrum(M).negative_count == 0
        rep = solver.minmax_witness(M, k, 40.0, 6, 9, rhos, seed=12)
        v = np.array(rep.witness_over_rho)
        out.append((rep.monotone, float(np.diff(v).max())))
    ok = all(m for m, _ in out)
    report(12, ok, "largest increments of witness/rho: " + ", ".join(f"{d:.3e}" for _, d in out))


def test_c13_green(S22):
    n0, n1 = S22.node_shape
    poles = [0, 7 * n1 + 20, (n0 // 2) * n1 + 5, (n0 - 3) * n1 + 40]
    gs = [paneitz.green_function(S22, x) for x in poles]
    rng = np.random.default_rng(13)
    weak = max(paneitz.green_weak_residual(S22, g, random_field(S22, rng, 1.0)) for g in gs)
    sym = 0.0
    for i in range(len(gs)):
        for j in range(i + 1, len(gs)):
            a = gs[i].S_nodes.ravel()[poles[j]]
            b = gs[j].S_nodes.ravel()[poles[i]]
            sym = max(sym, abs(a - b) / max(1.0, abs(a)))
    f = np.array([g.funct_value for g in gs])
    spread = float(np.ptp(f) / max(np.abs(f).max(), 1e-300))
    ok = weak < 1e-3 and sym < 1e-3 and spread < 1e-2
    report(13, ok, f"weak residual {weak:.1e}, S asymmetry {sym:.1e}, funct relative spread {spread:.1e}")


def test_c14_determinism(tmp_path):
    cfg = {
        "model": {"kind": "product", "factor_a": {"kind": "sphere", "lmax": 4}, "factor_b": {"kind": "sphere", "lmax": 4}},
        "seed": 14,
        "solver": {"initializer": "random"},
        "bubble": {"lambdas": [20, 40]},
        "minmax": {"k": 2, "n_sigma": 3, "n_t": 5},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    same = True
    checked = 0
    for command in ("solve", "bubble", "minmax"):
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{command}-{run}"
            subprocess.run(
                [sys.executable, "-m", "qcurv.cli", command, "--config", str(path), "--out", str(out)],
                check=True,
                capture_output=True,
            )
            outs.append(out)
        for f in sorted(outs[0].iterdir()):
            same &= f.read_bytes() == (outs[1] / f.name).read_bytes()
            checked += 1
    report(14, same, f"{checked} output files byte-identical across two runs")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

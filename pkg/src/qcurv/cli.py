"""Command-line driver: ``qcurv <command> --config <path> [--out <dir>] [--seed <n>]``.

Every run validates the JSON config against the shipped schema, fills in
defaults, and writes ``report.json``, ``config.resolved.json`` and
command-specific CSV tables into the output directory.

Exit codes: 0 success, 2 invalid configuration or unsupported request
(no files written), 3 numerical or precondition failure.
"""

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import adams, bubbles, functional, paneitz, solver
from .errors import (
    ConfigurationError,
    MeshIngestionError,
    NumericalError,
    PreconditionError,
    SpectralOnlyError,
    ValidationError,
)
from .geometry import (
    ScalarField,
    Sphere4Model,
    load_mesh_factor,
    make_flat_torus_factor,
    make_product,
    make_sphere_factor,
    make_synthetic_factor,
    random_field,
    weyl_spectrum,
)

COMMANDS = (
    "invariants",
    "spectrum",
    "solve",
    "continuation",
    "adams",
    "improved-adams",
    "bubble",
    "project",
    "green",
    "minmax",
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ config


def load_schema():
    text = resources.files("qcurv").joinpath("data/config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _fill_defaults(schema, inst):
    if not isinstance(inst, dict) or schema.get("type") != "object":
        return inst
    props = schema.get("properties", {})
    for key, sub in props.items():
        if key not in inst and "default" in sub:
            inst[key] = copy.deepcopy(sub["default"])
        if key in inst:
            if "oneOf" in sub:
                for alt in sub["oneOf"]:
                    if _matches(alt, inst[key]):
                        _fill_defaults(alt, inst[key])
                        break
            else:
                _fill_defaults(sub, inst[key])
    return inst


def _matches(schema, inst):
    try:
        jsonschema.validate(inst, schema)
    except jsonschema.ValidationError:
        return False
    return True


def resolve_config(raw, seed=None):
    """Validate against the schema and fill defaults; raises ``ValidationError``."""
    schema = load_schema()
    try:
        jsonschema.validate(raw, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}") from exc
    cfg = _fill_defaults(schema, copy.deepcopy(raw))
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def build_factor(spec, base_dir):
    kind = spec["kind"]
    if kind == "sphere":
        return make_sphere_factor(spec["lmax"], spec.get("nTheta"))
    if kind == "flat-torus":
        return make_flat_torus_factor(spec["L1"], spec["L2"], spec["kmax"], spec.get("n_grid"))
    if kind == "mesh":
        path = Path(spec["path"])
        if not path.is_absolute():
            path = base_dir / path
        return load_mesh_factor(path, spec["nEig"])
    if "eigenvalues" in spec:
        lam = spec["eigenvalues"]
    elif "weyl" in spec:
        lam = weyl_spectrum(spec["area"], spec["weyl"]["lambda1"], spec["weyl"]["n"])
    else:
        raise ValidationError("synthetic factor needs 'eigenvalues' or 'weyl'")
    return make_synthetic_factor(
        spec["kappa"], lam, spec["area"], spec.get("chart_radius"), spec.get("injectivity_radius")
    )


def build_model(cfg, base_dir=Path(".")):
    m = cfg["model"]
    if m["kind"] == "sphere4":
        return Sphere4Model(m["lmax"])
    return make_product(build_factor(m["factor_a"], base_dir), build_factor(m["factor_b"], base_dir), m.get("s_max"))


def solve_options(M, cfg):
    s = dict(cfg["solver"])
    sig = s.pop("bubble_sigma", None)
    s.pop("rho", None)
    s["rho_schedule"] = tuple(s["rho_schedule"])
    s["seed"] = cfg["seed"]
    if sig is not None:
        s["bubble_sigma"] = bubbles.Barycenter.create(M, sig["weights"], sig["points_a"], sig["points_b"])
    return solver.SolveOptions(**s)


# ------------------------------------------------------------------ helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def model_summary(M):
    if isinstance(M, Sphere4Model):
        return {
            **M.describe(),
            "k_P": paneitz.total_q(M),
            "gauss_bonnet_defect": paneitz.gauss_bonnet_defect(M),
        }
    out = M.describe()
    out["k_P"] = paneitz.total_q(M)
    out["gauss_bonnet_defect"] = paneitz.gauss_bonnet_defect(M)
    out["factor_checks"] = {"a": M.a.invariant_report(), "b": M.b.invariant_report()}
    return out


def _sigma(M, cfg_block, rng, k):
    sig = cfg_block.get("sigma")
    if sig is not None:
        return bubbles.Barycenter.create(M, sig["weights"], sig["points_a"], sig["points_b"])
    return bubbles.Barycenter.random(M, k, rng)


def _quad(block):
    q = block.get("quadrature")
    return bubbles.QuadratureSpec(**q) if q else None


def _cutoff(block):
    d = block.get("delta")
    return bubbles.CutoffSpec(d) if d else None


def _centre(M, block, key_a="centre_a", key_b="centre_b"):
    if key_a in block and key_b in block:
        return np.asarray(block[key_a], float), np.asarray(block[key_b], float)
    return M.a.geometry.random_points(np.random.default_rng(0), 1)[0], M.b.geometry.random_points(
        np.random.default_rng(1), 1
    )[0]


# ---------------------------------------------------------------- commands


def cmd_invariants(M, cfg, rng):
    res = model_summary(M)
    if not isinstance(M, Sphere4Model):
        res["regime"] = paneitz.regime(res["k_P"], paneitz.spectrum(M).negative_count)
        Q = paneitz.q_curvature(M)
        if isinstance(Q, ScalarField):
            res["Q_min"], res["Q_max"] = float(Q.values.min()), float(Q.values.max())
        else:
            res["Q_min"] = res["Q_max"] = float(Q)
    else:
        res["regime"] = paneitz.regime(res["k_P"])
    tables = {}
    if not isinstance(M, Sphere4Model):
        rows = [("a", i, float(v)) for i, v in enumerate(M.a.eigenvalues)]
        rows += [("b", i, float(v)) for i, v in enumerate(M.b.eigenvalues)]
        tables["factor_spectra.csv"] = (["factor", "index", "eigenvalue"], rows)
    return res, tables


def cmd_spectrum(M, cfg, rng):
    sc = cfg["spectrum"]
    rep = sc["representation"]
    summ = paneitz.spectrum(M, sc["n_low"], rep, cfg["tolerances"]["tol_zero_rel"])
    ev = paneitz.paneitz_operator(M, rep).eigenvalues()
    res = {"summary": summ.as_dict(), "regime": paneitz.regime(paneitz.total_q(M), summ.negative_count)}
    return res, {"eigenvalues.csv": (["index", "eigenvalue"], [(i, float(v)) for i, v in enumerate(ev)])}


def _history_rows(rep):
    return [(i, h.ii, h.grad_norm, h.residual_norm, h.sup_norm, h.step) for i, h in enumerate(rep.history)]


HISTORY_COLS = ["iteration", "ii", "grad_norm", "residual_norm", "sup_norm", "step"]


def cmd_solve(M, cfg, rng):
    opts = solve_options(M, cfg)
    rep = solver.minimize_ii(M, opts, rho=cfg["solver"]["rho"])
    return {"solve": rep.as_dict(with_coeffs=True)}, {"history.csv": (HISTORY_COLS, _history_rows(rep))}


def cmd_continuation(M, cfg, rng):
    opts = solve_options(M, cfg)
    cont = solver.continuation_rho(M, opts)
    rows = [(r.rho, r.residual_norm, float(np.abs(r.u.values).max()), r.q_bar, r.status) for r in cont.reports]
    res = cont.as_dict()
    closed = functional.constant_solution(M)
    if closed is not None:
        res["closed_form_gap"] = [float(np.abs(r.u.coeffs - closed.coeffs).max()) for r in cont.reports]
    return res, {"continuation.csv": (["rho", "residual_norm", "sup_norm", "q_bar", "status"], rows)}


def _adams_rows(rep):
    return [(r["label"], r["quadratic"], r["logTerm"], r["residual"], r["included"], r["satisfied"]) for r in rep.rows()]


ADAMS_COLS = ["label", "quadratic", "logTerm", "residual", "included", "satisfied"]


def cmd_adams(M, cfg, rng):
    ac = cfg["adams"]
    xa, xb = _centre(M, ac)
    sig = bubbles.Barycenter.single(M, xa, xb)
    fam, labels = [], []
    for lam in ac["lambdas"]:
        fam.append(bubbles.bubble_field(M, sig, lam))
        labels.append(f"bubble:{lam:g}")
    bub = adams.adams_report(M, fam, labels, tail_fraction=ac["tail_fraction"], name="single-bubble")
    lo, hi = ac["amplitude_range"]
    rand, rlabels = [ScalarField.constant(M, 0.0)], ["constant"]
    for i in range(ac["n_random"]):
        rand.append(random_field(M, rng, amplitude=float(rng.uniform(lo, hi))))
        rlabels.append(f"random:{i}")
    calib = adams.adams_report(M, rand[:1] + fam, rlabels[:1] + labels, name="calibration")
    checked = adams.adams_report(M, rand, rlabels, C=calib.C, name="random")
    res = {"single_bubble": bub.as_dict(), "calibration_C": calib.C, "random": checked.as_dict()}
    return res, {"adams.csv": (["family"] + ADAMS_COLS, [("bubble",) + r for r in _adams_rows(bub)] + [("random",) + r for r in _adams_rows(checked)])}


def cmd_improved_adams(M, cfg, rng):
    ic = cfg["improved_adams"]
    ell = ic["ell"]
    if "centres_a" in ic and "centres_b" in ic:
        ca, cb = np.asarray(ic["centres_a"], float), np.asarray(ic["centres_b"], float)
    else:
        raise ValidationError("improved_adams needs centres_a and centres_b")
    n = len(ca)
    w = np.full(n, 1.0 / n)
    fam, labels = [], []
    spread = bubbles.Barycenter.create(M, w, ca, cb, tol=1e-9)
    single = bubbles.Barycenter.single(M, ca[0], cb[0])
    for lam in ic["lambdas"]:
        fam.append(bubbles.bubble_field(M, spread, lam))
        labels.append(f"spread:{lam:g}")
    for lam in ic["lambdas"]:
        fam.append(bubbles.bubble_field(M, single, lam))
        labels.append(f"single:{lam:g}")
    rep = adams.improved_adams_report(
        M, ell, ic["gamma0"], ic["delta0"], fam, ca, cb, ic["radius"], labels, tail_fraction=ic["tail_fraction"]
    )
    return {"improved": rep.as_dict()}, {"improved_adams.csv": (ADAMS_COLS, _adams_rows(rep))}


def cmd_bubble(M, cfg, rng):
    bc = cfg["bubble"]
    sig = _sigma(M, bc, rng, bc["k"])
    rows, out = [], []
    for lam in bc["lambdas"]:
        B = bubbles.BubbleField(M, sig, lam, _cutoff(bc), _quad(bc))
        e = functional.ii_value(M, B)
        entry = {"lambda": lam, **e.as_dict()}
        w1 = bound = None
        if M.mode == "full":
            tr = bubbles.measure_distance(M, B, sig, n_max=bc["n_max"])
            w1, bound = tr.value, tr.compression_bound
            conc = bubbles.concentration_points(M, B, sig.k, bc["eps"], bc["r"])
            entry.update({"w1": w1, "w1_bound": bound, "w1_over_diam": w1 / M.diameter, "concentration": conc.as_dict()})
        out.append(entry)
        rows.append((lam, e.quadratic, e.linear, e.logTerm, e.total, w1, bound))
    res = {"sigma": sig.as_dict(), "diameter": M.diameter, "delta": (_cutoff(bc) or bubbles.CutoffSpec(bubbles.default_delta(M))).delta, "series": out}
    return res, {"bubble.csv": (["lambda", "quadratic", "linear", "logTerm", "total", "w1", "w1_bound"], rows)}


def cmd_project(M, cfg, rng):
    pc = cfg["project"]
    rows, out = [], []
    for i in range(pc["n_sigma"]):
        sig = bubbles.Barycenter.random(M, pc["k"], rng)
        B = bubbles.bubble_field(M, sig, pc["lambda"])
        psi = bubbles.project_psi(M, B, pc["k"], r=pc["r"], eps=pc["eps"])
        d = bubbles.barycenter_distance(M, psi, sig)
        out.append({"sigma": sig.as_dict(), "psi": psi.as_dict(), "distance": d, "distance_over_diam": d / M.diameter})
        rows.append((i, d, d / M.diameter))
    return {"samples": out, "diameter": M.diameter}, {"project.csv": (["sample", "distance", "distance_over_diam"], rows)}


def cmd_green(M, cfg, rng):
    gc = cfg["green"]
    g = paneitz.green_function(M, gc["pole"], gc.get("n_modes"), gc["rescale"], gc.get("h"))
    test = random_field(M, rng, 1.0)
    res = g.as_dict()
    res["pole"] = list(g.pole)
    res["weak_residual"] = paneitz.green_weak_residual(M, g, test)
    Pa, Pb = M.node_points()
    ix, iy = g.pole
    xa, xb = M.a.nodes[ix], M.b.nodes[iy]
    d = M.distance(Pa, Pb, xa[None, :], xb[None, :])
    G, S = g.G_nodes.ravel(), g.S_nodes.ravel()
    rows = [(i, float(d[i]), float(G[i]), None if not np.isfinite(S[i]) else float(S[i])) for i in range(len(d))]
    return res, {"green.csv": (["node", "distance", "G", "S"], rows)}


def cmd_minmax(M, cfg, rng):
    mc = cfg["minmax"]
    cut = bubbles.CutoffSpec(mc["delta"]) if mc.get("delta") else None
    rep = solver.minmax_witness(
        M, mc["k"], mc["lambda_bar"], mc["n_sigma"], mc["n_t"], tuple(mc["rho_values"]), seed=cfg["seed"], cutoff=cut
    )
    wrows = [(r, w, w / r) for r, w in zip(rep.rho_values, rep.witness)]
    prows = [(i, t, float(rep.profiles[i, j])) for i in range(len(rep.sigmas)) for j, t in enumerate(rep.t_grid)]
    return rep.as_dict(), {
        "witness.csv": (["rho", "witness", "witness_over_rho"], wrows),
        "profiles.csv": (["sample", "t", "ii"], prows),
    }


HANDLERS = {
    "invariants": cmd_invariants,
    "spectrum": cmd_spectrum,
    "solve": cmd_solve,
    "continuation": cmd_continuation,
    "adams": cmd_adams,
    "improved-adams": cmd_improved_adams,
    "bubble": cmd_bubble,
    "project": cmd_project,
    "green": cmd_green,
    "minmax": cmd_minmax,
}


# ------------------------------------------------------------------ driver


def execute(command, raw_config, out_dir, seed=None, base_dir=Path(".")):
    """Run ``command``; returns the report dict. Raises :class:`CommandError` on failure."""
    if command not in HANDLERS:
        raise CommandError(f"unknown command {command!r}", EXIT_INVALID)
    try:
        cfg = resolve_config(raw_config, seed)
        M = build_model(cfg, base_dir)
        rng = np.random.default_rng(cfg["seed"])
        result, tables = HANDLERS[command](M, cfg, rng)
        summary = model_summary(M)
    except (ValidationError, ConfigurationError, SpectralOnlyError, MeshIngestionError) as exc:
        raise CommandError(f"{type(exc).__name__}: {exc}", EXIT_INVALID) from exc
    except (NumericalError, PreconditionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise CommandError(f"{type(exc).__name__}: {exc}", EXIT_NUMERIC) from exc
    report = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "model": summary,
        "result": result,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    _write_json(out / "config.resolved.json", cfg)
    for name, (cols, rows) in tables.items():
        with (out / name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return report


def _write_json(path, obj):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="qcurv", description="Q-curvature experiments on product 4-manifolds.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default="qcurv-out", help="output directory (default: qcurv-out)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"qcurv: cannot read config {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = execute(args.command, raw, args.out, args.seed, base_dir=path.parent)
    except CommandError as exc:
        print(f"qcurv: {exc}", file=sys.stderr)
        return exc.code
    print(f"qcurv {args.command}: wrote {Path(args.out) / 'report.json'} (config {report['config_hash'][:12]})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

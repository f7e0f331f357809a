"""Command-line front end.

Every command writes its outputs plus a ``manifest-<command>.json`` holding
the resolved arguments, input/output digests and library versions; ``replay``
re-runs a manifest into a scratch directory and compares digests.

Exit codes: 2 schema error, 3 numeric precondition failure, 4 I/O error.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import shutil
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__
from .circulant import ThetaField, load_theta
from .contrast import (PenaltySpec, default_rho2, fit_model, loss, periodogram, select_model,
                       bias_sequence)
from .exceptions import PreconditionError, SchemaError
from .field import (GmrfParams, covariance_lag, four_nn_theta, moran_covariance_limit,
                    moran_limit_elliptic, read_batch, sample, write_batch)
from .rng import substream_seed
from .torus import TorusGeometry, build_model_collection, dims_table

EXIT_SCHEMA, EXIT_PRECONDITION, EXIT_IO = 2, 3, 4


# --- output helpers ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import matplotlib
    return {"torusgmrf": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__}


# --- shared argument handling -------------------------------------------------------------

def _params_from_args(args, p=None):
    p = p if p is not None else args.p
    if getattr(args, "theta", None):
        theta = load_theta(args.theta)
        if p is not None and theta.p != p:
            raise SchemaError(f"theta file has p={theta.p} but --p {p} was given")
    elif getattr(args, "alpha", None) is not None:
        theta = four_nn_theta(TorusGeometry(p), args.alpha)
    else:
        theta = ThetaField.zeros(TorusGeometry(p))
    return GmrfParams(theta, args.sigma2)


def _models(coll, max_index):
    if max_index is None:
        return list(coll)
    return [coll.by_index(k) for k in range(1, min(max_index, len(coll)) + 1)]


def _parse_grid(text):
    try:
        a, b, k = text.split(":")
        return np.linspace(float(a), float(b), int(k))
    except ValueError:
        raise SchemaError(f"--grid must look like x0:x1:steps, got {text!r}") from None


# --- risk experiment ----------------------------------------------------------------------

@dataclass
class RiskTable:
    rows: list               # dicts: index, d, mc_risk, bias, penalty, selection_freq
    selected_risk: float
    selected_risk_se: float
    best_fixed_risk: float
    reps: int
    meta: dict = field(default_factory=dict)
    selected: list = field(default_factory=list, repr=False)


def risk_experiment(params, coll, n, reps, spec, seed, rho=None, models=None, isotropic=False,
                    threads=None):
    """Monte Carlo risk of every fixed-model estimator and of the selected one."""
    models = list(coll) if models is None else list(models)
    rho = spec.rho1 if rho is None else rho
    losses = np.zeros((reps, len(models)))
    sel_loss = np.zeros(reps)
    chosen = []
    pos = {m.index: k for k, m in enumerate(models)}
    for r in range(reps):
        batch = sample(params, n, substream_seed(seed, "risk", r), threads)
        pg = periodogram(batch)
        res = select_model(pg, coll, spec, rho, isotropic, models)
        for m in models:
            losses[r, pos[m.index]] = loss(res.fits[m.index].theta, params)
        chosen.append(res.chosen)
        sel_loss[r] = losses[r, pos[res.chosen]]
    bias = bias_sequence(params, coll, isotropic, models)
    freq = np.bincount([pos[c] for c in chosen], minlength=len(models)) / reps
    mc = losses.mean(axis=0)
    rows = [{"index": m.index, "d": m.dimension(isotropic), "mc_risk": float(mc[k]),
             "bias": float(bias[k]), "penalty": spec.penalty(m.dimension(isotropic)),
             "selection_freq": float(freq[k])} for k, m in enumerate(models)]
    se = float(sel_loss.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    return RiskTable(rows, float(sel_loss.mean()), se, float(mc.min()), reps,
                     {"n": n, "p": params.p, "seed": seed}, chosen)


# --- commands -------------------------------------------------------------------------------

def cmd_sample(args):
    params = _params_from_args(args)
    batch = sample(params, args.n, args.seed, args.threads)
    write_batch(batch, args.out)
    return [args.out]


def cmd_estimate(args):
    batch = read_batch(args.batch)
    coll = build_model_collection(batch.geometry)
    m = coll.by_index(args.model_index)
    fit = fit_model(periodogram(batch), m, args.rho, args.iso)
    out = os.path.join(args.out_dir, "estimate.json")
    obj = fit.to_json()
    obj["d"] = m.dimension(args.iso)
    write_json(out, obj)
    return [out]


def cmd_select(args):
    batch = read_batch(args.batch)
    pg = periodogram(batch)
    coll = build_model_collection(batch.geometry)
    spec = PenaltySpec(args.K, args.rho1, args.rho2, args.sigma2, batch.n, batch.p)
    res = select_model(pg, coll, spec, args.rho1, args.iso, _models(coll, args.max_index),
                       args.threads)
    js = os.path.join(args.out_dir, "select.json")
    cs = os.path.join(args.out_dir, "select.csv")
    write_json(js, {"chosen": res.chosen, "spec": spec.__dict__, "rows": res.rows,
                    "fit": res.chosen_fit.to_json()})
    header = ["index", "d", "contrast", "penalty", "criterion"]
    write_csv(cs, header, [[r[h] for h in header] for r in res.rows])
    outs = [js, cs]
    if args.plot:
        from .plots import line_plot
        svg = os.path.join(args.out_dir, "select.svg")
        d = [r["d"] for r in res.rows]
        line_plot(svg, d, {"contrast": [r["contrast"] for r in res.rows],
                           "criterion": [r["criterion"] for r in res.rows]},
                  xlabel="model dimension", ylabel="value")
        outs.append(svg)
    return outs


def cmd_risk(args):
    params = _params_from_args(args)
    coll = build_model_collection(params.geometry)
    rho2 = args.rho2 if args.rho2 is not None else default_rho2(params, args.rho1)
    spec = PenaltySpec(args.K, args.rho1, rho2, args.sigma2, args.n, args.p)
    table = risk_experiment(params, coll, args.n, args.reps, spec, args.seed,
                            models=_models(coll, args.max_index), threads=args.threads)
    cs = os.path.join(args.out_dir, "risk.csv")
    js = os.path.join(args.out_dir, "risk.json")
    header = ["index", "d", "mc_risk", "bias", "penalty", "selection_freq"]
    write_csv(cs, header, [[r[h] for h in header] for r in table.rows])
    write_json(js, {"selected_risk": table.selected_risk, "selected_risk_se": table.selected_risk_se,
                    "best_fixed_risk": table.best_fixed_risk,
                    "ratio": table.selected_risk / table.best_fixed_risk if table.best_fixed_risk > 0 else None,
                    "reps": table.reps, "spec": spec.__dict__, **table.meta})
    outs = [cs, js]
    if args.plot:
        from .plots import line_plot
        svg = os.path.join(args.out_dir, "risk.svg")
        d = [r["d"] for r in table.rows]
        line_plot(svg, d, {"MC risk": [r["mc_risk"] for r in table.rows],
                           "bias": [max(r["bias"], 1e-300) for r in table.rows],
                           "penalty": [r["penalty"] for r in table.rows]},
                  xlabel="model dimension", ylabel="risk", logy=True)
        outs.append(svg)
    return outs


def cmd_dims(args):
    coll = build_model_collection(TorusGeometry(args.p))
    rows = dims_table(coll)
    cs = os.path.join(args.out_dir, "dims.csv")
    write_csv(cs, ["index", "radius_sq", "d_m", "d_m_iso", "dm2_upper", "growth_ratio"], rows)
    outs = [cs]
    if args.plot:
        from .plots import line_plot
        svg = os.path.join(args.out_dir, "dims.svg")
        line_plot(svg, [r[0] for r in rows], {"d_m": [r[2] for r in rows],
                                              "d_m iso": [r[3] for r in rows],
                                              "N(m) orbits": [r[4] for r in rows]},
                  xlabel="model index", ylabel="dimension")
        outs.append(svg)
    return outs


def cmd_tails(args):
    from .chaos import load_family, tail_experiment
    fam = load_family(args.family)
    rep = tail_experiment(fam, args.nmc, _parse_grid(args.grid), args.seed, args.mode, args.block_size)
    js = os.path.join(args.out_dir, "tails.json")
    cs = os.path.join(args.out_dir, "tails.csv")
    write_json(js, rep.to_json())
    bound = rep.bound_curve()
    write_csv(cs, ["x", "empirical_tail", "std_err", "censored", "bound"],
              zip(rep.x_grid, rep.empirical_tail, rep.std_err, rep.censored, bound))
    outs = [js, cs]
    if args.plot:
        from .plots import line_plot
        svg = os.path.join(args.out_dir, "tails.svg")
        series = {"empirical": np.maximum(rep.empirical_tail, 1e-300)}
        if rep.fitted is not None:
            series["bound"] = bound
        line_plot(svg, rep.x_grid, series, xlabel="x", ylabel="P(T >= E[T] + x)", logy=True)
        outs.append(svg)
    return outs


def cmd_minimax(args):
    from .minimax import Hypercube, cube_max_kl, fano_radius, kl_bound_hypercube, minimax_lower_bound
    geom = TorusGeometry(args.p)
    center = load_theta(args.center) if args.center else ThetaField.zeros(geom)
    if center.p != args.p:
        raise SchemaError(f"center has p={center.p} but --p {args.p} was given")
    m = build_model_collection(geom).by_index(args.model_index)
    r_f = fano_radius(center, m, args.n, args.kappa, args.iso)
    r = args.radius if args.radius is not None else r_f
    cube = Hypercube(m, center, r, args.iso)
    lb = minimax_lower_bound(m, center, r, args.n, args.sigma2, args.kappa, args.iso)
    js = os.path.join(args.out_dir, "minimax.json")
    write_json(js, {"r_fano": r_f, "radius": r, "d": cube.dimension,
                    "kl_bound": kl_bound_hypercube(cube, args.n),
                    "kl_budget": args.kappa * cube.dimension / 8.0,
                    "exact_kl_max": cube_max_kl(cube, args.n),
                    "lower_bound": lb.value, "branch": lb.branch, "simplified": lb.simplified})
    return [js]


def cmd_moran(args):
    params = GmrfParams(four_nn_theta(TorusGeometry(args.p), args.alpha), args.sigma2)
    lattice = covariance_lag(params, 1, 0)
    quad = moran_covariance_limit(args.alpha, args.sigma2)
    js = os.path.join(args.out_dir, "moran.json")
    write_json(js, {"alpha": args.alpha, "p": args.p, "sigma2": args.sigma2, "lattice": lattice,
                    "quadrature": quad, "elliptic": moran_limit_elliptic(args.alpha, args.sigma2),
                    "rel_diff": abs(lattice - quad) / abs(quad) if quad else abs(lattice)})
    outs = [js]
    if args.sweep:
        alphas = _parse_grid(args.sweep)
        rows = []
        for a in alphas:
            q = moran_covariance_limit(a, args.sigma2)
            w = q * 4 * a / args.sigma2 + 1
            rows.append((a, q, w, w * (1 - 4 * a), w / math.log(8 / (1 - 4 * a)) * math.pi))
        cs = os.path.join(args.out_dir, "moran_sweep.csv")
        write_csv(cs, ["alpha", "cov_limit", "scaled", "scaled_times_gap", "scaled_over_log_asymptote"], rows)
        outs.append(cs)
        if args.plot:
            from .plots import line_plot
            svg = os.path.join(args.out_dir, "moran_sweep.svg")
            line_plot(svg, [r[0] for r in rows], {"(cov 4a + 1)(1 - 4a)": [r[3] for r in rows],
                                                  "ratio to log asymptote": [r[4] for r in rows]},
                      xlabel="alpha", ylabel="value")
            outs.append(svg)
    return outs


def cmd_replay(args):
    with open(args.manifest) as fh:
        try:
            man = json.load(fh)
        except ValueError as exc:  # bad JSON or bad encoding
            raise SchemaError(f"{args.manifest}: invalid JSON ({exc})") from None
    if "argv" not in man or "outputs" not in man:
        raise SchemaError("manifest needs 'argv' and 'outputs'")
    for path, digest in man.get("inputs", {}).items():
        if not os.path.exists(path) or file_digest(path) != digest:
            print(f"MISMATCH input {path}")
            return 1
    scratch = tempfile.mkdtemp(prefix="torusgmrf-replay-")
    try:
        argv = _redirect_outputs(man["argv"], man["outputs"], scratch)
        code = main(argv)
        if code != 0:
            return code
        mismatched = []
        for name, digest in man["outputs"].items():
            path = os.path.join(scratch, name)
            got = file_digest(path) if os.path.exists(path) else None
            status = "match" if got == digest else "MISMATCH"
            print(f"{status} {name}")
            if got != digest:
                mismatched.append(name)
        return 1 if mismatched else 0
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _redirect_outputs(argv, outputs, scratch):
    argv = list(argv)
    for flag in ("--out-dir", "--out"):
        if flag in argv:
            k = argv.index(flag)
            if flag == "--out":
                argv[k + 1] = os.path.join(scratch, os.path.basename(argv[k + 1]))
            else:
                argv[k + 1] = scratch
    if "--out-dir" not in argv and argv[0] != "sample":
        argv[1:1] = ["--out-dir", scratch]
    return argv


COMMANDS = {"sample": cmd_sample, "estimate": cmd_estimate, "select": cmd_select, "risk": cmd_risk,
            "dims": cmd_dims, "tails": cmd_tails, "minimax": cmd_minimax, "moran": cmd_moran,
            "replay": cmd_replay}


def build_parser():
    ap = argparse.ArgumentParser(prog="torusgmrf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_, out_dir=True):
        sp = sub.add_parser(name, help=help_)
        if out_dir:
            sp.add_argument("--out-dir", default=".", help="directory for outputs")
        sp.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
        sp.add_argument("--plot", action="store_true", help="also write SVG line charts")
        return sp

    def field_args(sp, p_required=True):
        sp.add_argument("--p", type=int, required=p_required)
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--theta", help="ThetaField JSON file")
        g.add_argument("--alpha", type=float, help="four-nearest-neighbour coefficient")
        sp.add_argument("--sigma2", type=float, default=1.0)

    sp = add("sample", "draw an exact sample batch", out_dir=False)
    field_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="batch file to write")

    sp = add("estimate", "fit one model by constrained least squares")
    sp.add_argument("--batch", required=True)
    sp.add_argument("--model-index", type=int, required=True)
    sp.add_argument("--rho", type=float, default=2.0)
    sp.add_argument("--iso", action="store_true")

    sp = add("select", "penalized model selection")
    sp.add_argument("--batch", required=True)
    sp.add_argument("--K", type=float, default=3.0)
    sp.add_argument("--rho1", type=float, default=2.0)
    sp.add_argument("--rho2", type=float, default=1.0)
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--iso", action="store_true")
    sp.add_argument("--max-index", type=int)

    sp = add("risk", "Monte Carlo risk of fixed and selected models")
    field_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--K", type=float, default=3.0)
    sp.add_argument("--rho1", type=float, default=2.0)
    sp.add_argument("--rho2", type=float, help="default: phi_max(Sigma) / (rho1^2 sigma^2)")
    sp.add_argument("--max-index", type=int)

    sp = add("dims", "model dimensions and growth ratios")
    sp.add_argument("--p", type=int, required=True)

    sp = add("tails", "chaos tail experiment")
    sp.add_argument("--family", required=True)
    sp.add_argument("--nmc", type=int, default=100_000)
    sp.add_argument("--grid", default="0.5:8:16")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=("gaussian", "rademacher"), default="gaussian")
    sp.add_argument("--block-size", type=int, default=1)

    sp = add("minimax", "hypercube lower bound")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--model-index", type=int, required=True)
    sp.add_argument("--center", help="ThetaField JSON file (default: zero field)")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--kappa", type=float, default=0.5)
    sp.add_argument("--radius", type=float, help="cube radius (default: Fano radius)")
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--iso", action="store_true")

    sp = add("moran", "four-nearest-neighbour lattice covariance against its limit")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--p", type=int, default=256)
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--sweep", help="alpha grid a0:a1:steps for the divergence table")

    sp = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    sp.add_argument("manifest")
    return ap


def _write_manifest(args, argv, outputs):
    base = os.path.dirname(outputs[0]) if outputs else "."
    inputs = {}
    for key in ("theta", "batch", "family", "center"):
        path = getattr(args, key, None)
        if path:
            inputs[path] = file_digest(path)
    man = {"command": args.command, "argv": argv,
           "config": {k: v for k, v in vars(args).items()},
           "inputs": inputs,
           "outputs": {os.path.basename(p): file_digest(p) for p in outputs},
           "versions": _versions()}
    path = os.path.join(base, f"manifest-{args.command}.json")
    write_json(path, man)
    return path


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "out_dir", None):
            os.makedirs(args.out_dir, exist_ok=True)
        outputs = COMMANDS[args.command](args)
        if args.command == "replay":
            return outputs
        _write_manifest(args, argv, outputs)
        for path in outputs:
            print(path)
        return 0
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

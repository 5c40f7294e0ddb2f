"""Command-line entry point: ``gaussdeconv <subcommand> --config run.yaml``.

Exit codes: 0 success / checks passed, 2 a validation check failed,
1 usage or configuration error.  Every run writes ``manifest.json`` (the
fully resolved config, artifact version and CSV schema versions) next to
its outputs; passing that manifest back as ``--config`` reruns the same
computation bit for bit.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_kernel, build_points, dumps, load_document, resolve, scan_radii

LOGGER = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
THREADS_ENV = "GAUSSDECONV_THREADS"

CSV_SCHEMAS = {
    "walk_c": (1, ["x{i}", "C", "tail_bound", "asymptotic", "difference"]),
    "solve": (1, ["x{i}", "C", "f", "H", "G", "err_est"]),
    "oracle": (1, ["x{i}", "H_oracle", "err_oracle", "H_solve", "err_solve", "agree"]),
    "asymptotics": (1, ["direction", "radius", "x{i}", "H", "G", "prefactor", "predicted"]),
    "prefactor_plot": (1, ["radius", "prefactor", "predicted"]),
    "srbm": (1, ["radius", "gamma_hat", "stderr", "phi_N_ref", "five_C_phi_ref"]),
}


def csv_header(name, d=None):
    """Pinned header of a CSV output; ``x{i}`` expands to ``x1..xd``."""
    cols = []
    for c in CSV_SCHEMAS[name][1]:
        if c == "x{i}":
            cols.extend(f"x{i}" for i in range(1, d + 1))
        else:
            cols.append(c)
    return cols


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="gaussdeconv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config or a manifest.json from an earlier run")
    common.add_argument("--out", default="gaussdeconv-out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int,
                        help=f"worker threads for linear algebra (env {THREADS_ENV})")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check-assumptions", parents=[common], help="verify the kernel hypotheses")
    wc = sub.add_parser("walk-c", parents=[common], help="Gaussian walk two-point function")
    wc.add_argument("--sigma", help="comma-separated diagonal of Sigma")
    wc.add_argument("--point", action="append", help="comma-separated point (repeatable)")
    wc.add_argument("--rel-tol", type=float)
    sv = sub.add_parser("solve", parents=[common], help="solve (delta - J) * G = g at points")
    sv.add_argument("--subcritical", action="store_true",
                    help="allow J_hat(0) < 1 (criticality check bypassed)")
    oc = sub.add_parser("oracle", parents=[common], help="independent oracle evaluation")
    oc.add_argument("--subcritical", action="store_true")
    sub.add_parser("validate-asymptotics", parents=[common],
                   help="compare H with the anisotropic asymptotic formula")
    sub.add_parser("srbm", parents=[common], help="self-repellent Brownian motion Monte Carlo")
    return p


def _read_config(args):
    """Return ``(doc, base_dir)``; a manifest yields its resolved config."""
    if args.config is None:
        return {}, Path(".")
    path = Path(args.config)
    doc = load_document(path)
    if "artifact" in doc and "config" in doc and "subcommand" in doc:
        if doc["subcommand"] != args.command:
            raise ConfigError(f"manifest is for '{doc['subcommand']}', not '{args.command}'")
        return doc["config"], path.parent
    return doc, path.parent


def _parse_vec(text, what):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers, got {text!r}") from None


class Run:
    """Output directory plus manifest bookkeeping for one invocation."""

    def __init__(self, args, cfg):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.args = args
        self.cfg = cfg
        self.outputs = []
        self.schemas = {}

    def csv(self, name, fname, rows, d=None):
        header = csv_header(name, d)
        write_csv(self.out / fname, header, rows)
        self.outputs.append(fname)
        self.schemas[fname] = {"schema": name, "version": CSV_SCHEMAS[name][0], "columns": header}

    def text(self, fname, body):
        (self.out / fname).write_text(body)
        self.outputs.append(fname)

    def manifest(self, status):
        doc = {
            "artifact": "gaussdeconv",
            "version": __version__,
            "subcommand": self.args.command,
            "config": self.cfg,
            "threads": self.args.threads,
            "csv_schemas": self.schemas,
            "outputs": self.outputs,
            "status": status,
            "python": platform.python_version(),
            "numpy": np.__version__,
        }
        (self.out / "manifest.json").write_text(dumps(doc) + "\n")


# ---------------------------------------------------------------- commands
def _report_lines(rep):
    pre = rep.name
    out = [f"{pre}.passed = {_fmt(rep.passed)}", f"{pre}.dimension = {rep.dimension}",
           f"{pre}.evenness = {_fmt(rep.evenness)}"]
    for m in rep.moments:
        out.append(f"{pre}.moment.order{m.order:g}.L{m.p:g} = {_fmt(m.value)}")
        out.append(f"{pre}.moment.order{m.order:g}.L{m.p:g}.passed = {_fmt(m.passed)}")
    out.append(f"{pre}.epsilon = {rep.epsilon if rep.epsilon is not None else 'none'}")
    out.append(f"{pre}.epsilon.value = {_fmt(rep.epsilon_value)}")
    out.append(f"{pre}.epsilon.passed = {_fmt(rep.epsilon_passed)}")
    if rep.high_moment_applicable:
        out.append(f"{pre}.high_moment.p = {rep.high_moment_p if rep.high_moment_p else 'none'}")
        out.append(f"{pre}.high_moment.p_star = {_fmt(rep.high_moment_p_star)}")
        out.append(f"{pre}.high_moment.value = {_fmt(rep.high_moment_value)}")
        out.append(f"{pre}.high_moment.passed = {_fmt(rep.high_moment_passed)}")
    if rep.criticality is not None:
        out.append(f"{pre}.criticality = {_fmt(rep.criticality)}")
        out.append(f"{pre}.criticality.passed = {_fmt(rep.criticality_passed)}")
    if rep.infrared_constant is not None:
        out.append(f"{pre}.infrared_constant = {_fmt(rep.infrared_constant)}")
        out.append(f"{pre}.infrared.passed = {_fmt(rep.infrared_passed)}")
        out.append(f"{pre}.infrared.at_boundary = {_fmt(rep.infrared_at_boundary)}")
    return out


def _assumption_config(section):
    from .assumptions import AssumptionConfig

    s = dict(section)
    s["epsilon_candidates"] = tuple(float(e) for e in s["epsilon_candidates"])
    return AssumptionConfig(**s)


def _kernels(cfg):
    J = build_kernel(cfg["J"], "J")
    g = build_kernel(cfg["g"], "g")
    if J.dimension != g.dimension:
        raise ConfigError(f"dimension mismatch: J.dimension = {J.dimension}, "
                          f"g.dimension = {g.dimension}")
    return J, g


def cmd_check_assumptions(args, cfg, run):
    from .assumptions import check_assumptions

    J, g = _kernels(cfg)
    rj, rg = check_assumptions(J, g, _assumption_config(cfg["assumptions"]))
    passed = rj.passed and rg.passed
    body = "\n".join(["# key = value"] + _report_lines(rj) + _report_lines(rg)
                     + [f"overall.passed = {_fmt(passed)}", "", "# summary",
                        rj.summary(), rg.summary()]) + "\n"
    run.text("assumptions_report.txt", body)
    print(body, end="")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_walk_c(args, cfg, run):
    from .gausswalk import WalkTwoPoint, walk_c_asymptotic
    from .kernel import DiagonalCovariance

    sigma = DiagonalCovariance(cfg["sigma"])
    x = build_points(cfg, sigma.dim)
    try:
        v, b, _ = WalkTwoPoint(sigma, cfg["rel_tol"], cfg["tail"]).evaluate(x)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for xi, vi, bi in zip(x, v, b):
        if np.any(xi != 0):
            asym = float(walk_c_asymptotic(sigma, xi))
        else:
            asym = float("nan")
        rows.append(list(xi) + [vi, bi, asym, vi - asym])
    run.csv("walk_c", "walk_c.csv", rows, sigma.dim)
    print(f"wrote {len(rows)} rows to {run.out / 'walk_c.csv'}")
    return EXIT_OK


def _problem(cfg, subcritical):
    from .deconv import DeconvProblem, GridSpec, RadialSpec

    J, g = _kernels(cfg)
    return DeconvProblem(J, g, grid=GridSpec(**cfg["grid"]), radial=RadialSpec(**cfg["radial"]),
                         engine=cfg["engine"], series_rel_tol=cfg["series_rel_tol"],
                         subcritical=subcritical, criticality_tol=cfg["criticality_tol"])


def cmd_solve(args, cfg, run):
    from .assumptions import check_assumptions
    from .deconv import solve

    sub = bool(cfg["subcritical"] or args.subcritical)
    cfg["subcritical"] = sub
    prob = _problem(cfg, sub)
    if cfg["check"]:
        rj, rg = check_assumptions(prob.J, prob.g, _assumption_config(cfg["assumptions"]))
        if sub:
            rj.criticality_passed = True
        if not (rj.passed and rg.passed):
            print(rj.summary())
            print(rg.summary())
            LOGGER.error("assumption checks failed; set 'check: false' to solve anyway")
            return EXIT_FAIL
    x = build_points(cfg, prob.d)
    res = solve(prob, x)
    run.csv("solve", "solve.csv", res.rows(), prob.d)
    print(f"engine={res.engine}; wrote {x.shape[0]} rows to {run.out / 'solve.csv'}")
    return EXIT_OK if np.all(res.converged) else EXIT_FAIL


def cmd_oracle(args, cfg, run):
    from .deconv import neumann_series_oracle, solve, solve_direct_quadrature

    sub = bool(cfg["subcritical"] or args.subcritical)
    cfg["subcritical"] = sub
    prob = _problem(cfg, sub)
    x = build_points(cfg, prob.d)
    if cfg["method"] == "quadrature":
        try:
            ov, oe = solve_direct_quadrature(prob, x, epsrel=cfg["epsrel"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif cfg["method"] == "neumann":
        try:
            o = neumann_series_oracle(prob.J, prob.g, x, subcritical=sub)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        ov, oe = o.values, o.errors
    else:
        raise ConfigError("'method' must be 'quadrature' or 'neumann'")
    res = solve(prob, x)
    agree = np.abs(res.H_values - ov) <= res.error + oe
    rows = [list(xi) + [a, b, c, e, ok] for xi, a, b, c, e, ok in
            zip(x, ov, oe, res.H_values, res.error, agree)]
    run.csv("oracle", "oracle.csv", rows, prob.d)
    print(f"{int(agree.sum())}/{agree.size} points agree within combined error estimates")
    return EXIT_OK if np.all(agree) else EXIT_FAIL


def cmd_validate(args, cfg, run):
    from .asymptotics import scan_report

    prob = _problem(cfg, False)
    radii = scan_radii(cfg["radii"], "radii")
    dirs = [np.asarray(e, dtype=float) for e in cfg["directions"]]
    for i, e in enumerate(dirs):
        if e.size != prob.d:
            raise ConfigError(f"'directions[{i}]' has {e.size} entries, dimension is {prob.d}")
    rep = scan_report(prob, dirs, radii, cfg["amplitude_tol"], cfg["spread_tol"])
    rows = []
    for i, f in enumerate(rep.fits):
        for r, h, gv, p in zip(f.radii, f.H, f.G, f.prefactors):
            rows.append([i, r] + list(r * f.direction) + [h, gv, p, f.predicted])
        run.csv("prefactor_plot", f"prefactor_dir{i}.dat",
                [[r, p, f.predicted] for r, p in zip(f.radii, f.prefactors)])
    run.csv("asymptotics", "asymptotics.csv", rows, prob.d)
    run.text("asymptotics_report.txt", rep.table() + "\n")
    print(rep.table())
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_srbm(args, cfg, run):
    from . import srbm

    if args.seed is not None:
        cfg["srbm"]["seed"] = args.seed
    try:
        scfg = srbm.SrbmConfig(**cfg["srbm"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'srbm': {exc}") from exc
    radii = scan_radii(cfg["probes"], "probes")
    dom = cfg["domination"]
    n_legs = max(scfg.legs, dom["n_max"] if dom else 0)
    ens = srbm.sample_paths(scfg, n_legs)
    est = srbm.sample_gamma(scfg, radii, cfg["half_width"], cfg["method"], ensemble=ens,
                            n=scfg.legs)
    lo = est.lower if cfg["method"] == "histogram" else np.maximum(radii - 1e-3, 0)
    hi = est.upper if cfg["method"] == "histogram" else radii + 1e-3
    five_c = 5 * srbm.c_phi_bin_average(scfg.dimension, lo, hi)
    rows = [[r, g, s, p, c] for r, g, s, p, c in
            zip(radii, est.density, est.stderr, est.phi_reference, five_c)]
    run.csv("srbm", "srbm.csv", rows)
    summary = [f"legs = {scfg.legs}", f"alpha = {scfg.alpha!r}", f"paths = {scfg.paths}",
               f"mean_weight = {est.mean_weight!r}", f"ess = {est.ess!r}"]
    ok = True
    if scfg.alpha == 0:
        z = np.abs(est.density - est.phi_reference) / np.where(est.stderr > 0, est.stderr, np.inf)
        exact = bool(np.all(z <= 3))
        summary.append(f"max_z_vs_phi_N = {float(z.max())!r}")
        summary.append(f"wiener_marginal_within_3se = {_fmt(exact)}")
        ok &= exact
    if dom:
        lam_c = srbm.estimate_lambda_c(scfg, dom["n_max"], ensemble=ens)
        lam = dom["lam"] if dom["lam"] is not None else dom["lambda_factor"] * lam_c.value
        rep = srbm.check_domination(scfg, lam, dom["n_max"], radii, cfg["half_width"], ensemble=ens)
        summary += [f"lambda_c = {lam_c.value!r}", f"lambda_c_ci = [{lam_c.ci_low!r}, {lam_c.ci_high!r}]",
                    f"lambda = {lam!r}", f"domination_passed = {_fmt(rep.passed)}",
                    f"domination_min_margin = {float(rep.margins.min())!r}",
                    f"domination_passed_strict = {_fmt(rep.passed_strict)}"]
        ok &= rep.passed
    body = "\n".join(summary) + "\n"
    run.text("srbm_summary.txt", body)
    print(body, end="")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "check-assumptions": cmd_check_assumptions,
    "walk-c": cmd_walk_c,
    "solve": cmd_solve,
    "oracle": cmd_oracle,
    "validate-asymptotics": cmd_validate,
    "srbm": cmd_srbm,
}


def _flag_overrides(args, doc):
    doc = dict(doc)
    if args.command == "walk-c":
        if args.sigma:
            doc["sigma"] = _parse_vec(args.sigma, "--sigma")
        if args.point:
            doc["points"] = [_parse_vec(p, "--point") for p in args.point]
            doc.pop("radial_scan", None)
        if args.rel_tol is not None:
            doc["rel_tol"] = args.rel_tol
    return doc


def _set_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None):
    """Parse ``argv`` and execute; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None and os.environ.get(THREADS_ENV):
        try:
            args.threads = int(os.environ[THREADS_ENV])
        except ValueError:
            print(f"error: {THREADS_ENV} must be an integer", file=sys.stderr)
            return EXIT_ERROR
    limiter = None
    try:
        limiter = _set_threads(args.threads)
        doc, base = _read_config(args)
        doc = _flag_overrides(args, doc)
        cfg = resolve(args.command, doc, base)
        if args.seed is not None and args.command == "srbm":
            cfg["srbm"]["seed"] = args.seed
        out = Run(args, cfg)
        code = COMMANDS[args.command](args, cfg, out)
        out.manifest({EXIT_OK: "pass", EXIT_FAIL: "fail"}.get(code, "error"))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line front end.

Every command writes its numeric output as CSV next to a ``.config.json``
sidecar holding the fully resolved configuration.  Plots are static SVG,
each with a CSV twin holding exactly the plotted series.  ``--json``
suppresses the plots and prints a machine-readable summary instead of a
table.

Exit codes: 0 on success, 2 for configuration or domain errors, 3 for data
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from shrinkchoice import __version__
from shrinkchoice.bounds import all_bounds, bound_thm1, bound_thm2, bound_thm3, bound_thm4
from shrinkchoice.pipeline import (
    EstimateVector,
    MicroDataset,
    dispersion_diagnostic,
    estimate_groups,
    group_covariates,
)
from shrinkchoice.errors import ConfigurationError, DataError, DomainError
from shrinkchoice.regret import ParameterSpace, SearchBudget, max_regret
from shrinkchoice.rules import (
    RuleKind,
    TreatmentProblem,
    build_rule,
    decide,
    solve_regression_shrinkage,
    solve_shrinkage_factors,
)
from shrinkchoice.special import eta, eta_envelope, eta_values
from shrinkchoice.svg import LINE_STYLES, Figure, HLine, Series, write_svg

logger = logging.getLogger("shrinkchoice")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
KAPPA_PRIME_RULES = {"equal": 1.0, "1.2k": 1.2, "0.8k": 0.8}
_RULE_NAMES = {RuleKind.SHRINK_MEAN: "shrinkage", RuleKind.CES: "ces", RuleKind.POOL: "pooling"}
_COLORS = {"shrinkage": "#000000", "ces": "#1f4e9c", "pooling": "#b22222"}


# -- parsing helpers -------------------------------------------------------


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive of ``stop``) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(t) for t in text.split(":"))
            if not step > 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return np.round(start + step * np.arange(n), 12)
        values = np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise ConfigurationError(f"malformed grid {text!r}; use start:stop:step or a,b,c") from None
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise ConfigurationError(f"malformed grid {text!r}")
    return values


def _floats(text: Optional[str]):
    if text is None:
        return None
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str):
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc


def _problem(args) -> TreatmentProblem:
    if getattr(args, "problem", None):
        return TreatmentProblem.from_dict(_load_json(args.problem))
    sigma, p = _floats(args.sigma), _floats(args.p)
    if sigma is None:
        raise ConfigurationError("give --problem or --sigma (and optionally --p)")
    if p is None:
        p = [1.0 / len(sigma)] * len(sigma)
    return TreatmentProblem(np.array(sigma), np.array(p))


# -- output helpers --------------------------------------------------------


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Output:
    """Writes CSV/SVG/JSON files into the output directory."""

    def __init__(self, args, config: dict):
        self.dir = Path(args.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.plots = not args.json
        self.config = {"version": __version__, "seed": args.seed, **config}
        self.written: list = []

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        path = self.dir / f"{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_num(v) for v in row])
        sidecar = self.dir / f"{name}.config.json"
        sidecar.write_text(_dumps(self.config) + "\n", encoding="utf-8")
        self.written += [path.name, sidecar.name]
        return path

    def svg(self, name: str, fig: Figure, header, rows) -> None:
        """Write the CSV twin, and the SVG unless plots are suppressed."""
        self.csv(name, header, rows)
        if self.plots:
            write_svg(fig, self.dir / f"{name}.svg")
            self.written.append(f"{name}.svg")

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / f"{name}.json"
        path.write_text(_dumps(payload) + "\n", encoding="utf-8")
        self.written.append(path.name)
        return path


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain)


def _emit(args, summary: dict, table_lines: Sequence[str] = ()) -> None:
    if args.json:
        print(_dumps(summary))
    else:
        for line in table_lines:
            print(line)


def _table(header, rows, fmt="{:>12}") -> list:
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt.format(f"{float(v):.6g}")
        return fmt.format(str(v))

    return [" ".join(cell(h) for h in header)] + [" ".join(cell(v) for v in r) for r in rows]


# -- commands --------------------------------------------------------------


def cmd_eta(args) -> int:
    if args.a is not None:
        ev = eta(args.a)
        print(json.dumps({"a": ev.a, "t_star": ev.t_star, "eta": ev.eta, "eta_prime": ev.eta_prime}))
        return EXIT_OK
    grid = parse_grid(args.grid)
    if np.any(grid < 0):
        raise DomainError("the eta grid must be nonnegative")
    t_star, val = eta_values(grid)
    deriv = np.array([eta(float(a)).eta_prime for a in grid])
    lower, upper = eta_envelope(grid)
    out = Output(args, {"command": "eta", "grid": args.grid})
    out.csv("eta", ["a", "eta", "t_star", "eta_prime"], zip(grid, val, t_star, deriv))
    fig = Figure(
        "eta(a)",
        "a",
        "eta",
        [
            Series("eta", grid, val, style="solid"),
            Series("lower envelope", grid, lower, style="dotted", color="#1f4e9c"),
            Series("upper envelope", grid, upper, style="dashed", color="#b22222"),
        ],
    )
    out.svg("eta_plot", fig, ["a", "eta", "lower_envelope", "upper_envelope"], zip(grid, val, lower, upper))
    _emit(
        args,
        {"rows": len(grid), "eta_at_start": float(val[0]), "files": out.written},
        [f"wrote {len(grid)} rows to {out.dir}"],
    )
    return EXIT_OK


def _nondecreasing_violations(kappas, w, tol=1e-9):
    bad = np.diff(w) < -tol
    return [float(k) for k in np.asarray(kappas)[1:][bad]]


def cmd_factors(args) -> int:
    kappas = parse_grid(args.kappa_grid)
    rows, series, violations = [], [], {}
    if args.problem:
        problem = _problem(args)
        w = np.array([solve_shrinkage_factors(problem, k).w_star for k in kappas])
        for j in range(problem.k_count):
            rows += [(k, problem.k_count, j, wk) for k, wk in zip(kappas, w[:, j])]
            series.append(Series(f"subgroup {j}", kappas, w[:, j]))
            v = _nondecreasing_violations(kappas, w[:, j])
            if v:
                violations[f"subgroup {j}"] = v
        config = {"command": "factors", "problem": problem.to_dict(), "kappa_grid": args.kappa_grid}
    else:
        ks = _ints(args.k)
        styles = ["solid", "dashed", "dotted"]
        for i, k in enumerate(ks):
            problem = TreatmentProblem.homoscedastic(k, args.sigma_value)
            w = np.array([solve_shrinkage_factors(problem, kap).w_star[0] for kap in kappas])
            rows += [(kap, k, 0, wk) for kap, wk in zip(kappas, w)]
            series.append(Series(f"K = {k}", kappas, w, style=styles[i % 3]))
            v = _nondecreasing_violations(kappas, w)
            if v:
                violations[f"K = {k}"] = v
        config = {"command": "factors", "k": ks, "sigma": args.sigma_value, "kappa_grid": args.kappa_grid}
    out = Output(args, config)
    out.svg(
        "factors",
        Figure("shrinkage factor against kappa", "kappa", "w*", series),
        ["kappa", "K", "subgroup", "w_star"],
        rows,
    )
    for name, ks_bad in violations.items():
        logger.warning("w* decreases along kappa for %s at %s", name, ks_bad)
    _emit(
        args,
        {"rows": len(rows), "monotonicity_violations": violations, "files": out.written},
        [f"wrote {len(rows)} rows to {out.dir}"]
        + [f"nonmonotone: {n} at kappa {v}" for n, v in violations.items()],
    )
    return EXIT_OK


def compare_rules(problem, kappas, factor, budget):
    """Max regret of shrinkage, CES and pooling along a kappa grid.

    Returns long-format rows ``(kappa, kappa', rule, max_regret, method,
    thm1, thm2, thm3, thm4)``.
    """
    rows = []
    for kappa in kappas:
        kappa = float(kappa)
        kp = factor * kappa
        space = ParameterSpace(kappa)
        bounds = all_bounds(problem, kappa, kp)
        w = solve_shrinkage_factors(problem, kp).w_star
        rules = [
            build_rule(problem, RuleKind.SHRINK_MEAN, w=w),
            build_rule(problem, RuleKind.CES),
            build_rule(problem, RuleKind.POOL),
        ]
        for rule in rules:
            rep = max_regret(problem, rule, space, budget)
            rows.append(
                (kappa, kp, _RULE_NAMES[rule.label], rep.max_regret, rep.method,
                 bounds["thm1"], bounds["thm2"], bounds["thm3"], bounds["thm4"])
            )
    return rows


def cmd_regret_compare(args) -> int:
    if args.kappa_prime_rule not in KAPPA_PRIME_RULES:
        raise ConfigurationError(
            f"kappa' rule must be one of {sorted(KAPPA_PRIME_RULES)}, got {args.kappa_prime_rule!r}"
        )
    problem = _problem(args)
    kappas = parse_grid(args.kappa_grid)
    if np.any(kappas < 0):
        raise DomainError("kappa must be nonnegative")
    budget = SearchBudget(starts=args.starts, refine=args.refine, seed=args.seed)
    rows = compare_rules(problem, kappas, KAPPA_PRIME_RULES[args.kappa_prime_rule], budget)
    header = ["kappa", "kappa_prime", "rule", "max_regret", "method", "thm1", "thm2", "thm3", "thm4"]
    out = Output(
        args,
        {
            "command": "regret-compare",
            "problem": problem.to_dict(),
            "kappa_grid": args.kappa_grid,
            "kappa_prime_rule": args.kappa_prime_rule,
            "budget": {"starts": budget.starts, "refine": budget.refine, "grid_points": budget.grid_points},
        },
    )
    out.csv("regret_compare", header, rows)
    series, plot_rows = [], []
    for name in ("shrinkage", "ces", "pooling"):
        sel = [r for r in rows if r[2] == name]
        series.append(
            Series(name, [r[0] for r in sel], [r[3] for r in sel], style=LINE_STYLES[name], color=_COLORS[name])
        )
        plot_rows += [(r[0], name, r[3]) for r in sel]
    out.svg(
        "regret_compare_plot",
        Figure("maximum regret", "kappa", "maximum regret", series),
        ["kappa", "rule", "max_regret"],
        plot_rows,
    )
    summary = {
        "rows": [dict(zip(header, r)) for r in rows],
        "files": out.written,
    }
    _emit(args, summary, _table(header, rows))
    return EXIT_OK


def _estimates_from_args(args) -> EstimateVector:
    if args.estimates:
        return EstimateVector.from_dict(_load_json(args.estimates))
    if not args.data:
        raise ConfigurationError("give --data (with --outcome, --treatment, --keys) or --estimates")
    keys = [k.strip() for k in args.keys.split(",") if k.strip()]
    data = MicroDataset.from_csv(args.data, args.outcome, args.treatment, keys)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = estimate_groups(data, keys, args.cost_offset)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return est


def _label(lab) -> str:
    return "/".join(str(x) for x in lab)


def cmd_estimate(args) -> int:
    est = _estimates_from_args(args)
    report = dispersion_diagnostic(est, draws=args.draws, seed=args.seed)
    out = Output(
        args,
        {
            "command": "estimate",
            "data": args.data,
            "outcome": args.outcome,
            "treatment": args.treatment,
            "keys": args.keys,
            "cost_offset": args.cost_offset,
            "draws": args.draws,
        },
    )
    payload = est.to_dict()
    payload["dispersion"] = report.to_dict()
    out.json("estimates", payload)
    header = ["group", "theta_hat", "sigma_hat", "p_hat", "n1", "n0"]
    rows = [
        (_label(lab), est.theta_hat[i], est.sigma_hat[i], est.p_hat[i], int(est.n1[i]), int(est.n0[i]))
        for i, lab in enumerate(est.labels)
    ]
    out.csv("estimates", header, rows)
    idx = np.arange(est.k_count)
    out.svg(
        "estimates_plot",
        Figure(
            "subgroup estimates with 95% intervals",
            "subgroup",
            "theta_hat",
            [Series("theta_hat", idx, est.theta_hat, kind="points", err=1.96 * est.sigma_hat)],
            [HLine(0.0, "zero", "#1f4e9c")],
        ),
        ["index", "group", "theta_hat", "half_width"],
        [(i, _label(est.labels[i]), est.theta_hat[i], 1.96 * est.sigma_hat[i]) for i in idx],
    )
    lines = _table(header, rows, "{:>22}")
    lines += [
        f"dropped groups: {[_label(d) for d in est.dropped]}; rows with missing values: {est.missing_rows}",
        f"range(theta_hat) = {report.observed_range:.6g}; null median = {report.null_median:.6g}; "
        f"below null median: {report.below_null_median}",
    ]
    _emit(args, {"estimates": payload, "files": out.written}, lines)
    return EXIT_OK


def decision_table(est: EstimateVector, kappa: float, variant: str):
    """Per-subgroup factors, shrinkage estimates and the three decisions."""
    if variant == "mean":
        problem = est.problem()
        sol = solve_shrinkage_factors(problem, kappa)
        shrink = build_rule(problem, RuleKind.SHRINK_MEAN, w=sol.w_star)
    elif variant == "regression":
        problem = est.problem(group_covariates(est) if est.covariates is None else est.covariates)
        sol = solve_regression_shrinkage(problem, kappa)
        shrink = build_rule(problem, RuleKind.SHRINK_REG, w=sol.w_star)
    else:
        raise ConfigurationError(f"variant must be 'mean' or 'regression', got {variant!r}")
    d_shrink = decide(shrink, est)
    d_ces = decide(build_rule(problem, RuleKind.CES), est)
    d_pool = decide(build_rule(problem, RuleKind.POOL), est)
    return {
        "w_star": sol.w_star,
        "shrinkage_estimate": d_shrink.statistic,
        "ces": d_ces.treat,
        "pooling": d_pool.treat,
        "shrinkage": d_shrink.treat,
    }


def cmd_decide(args) -> int:
    est = _estimates_from_args(args)
    if not np.isfinite(args.kappa) or args.kappa < 0:
        raise DomainError("kappa must be finite and >= 0")
    tab = decision_table(est, args.kappa, args.variant)
    header = [
        "group", "theta_hat", "sigma_hat", "w_star", "shrinkage_estimate",
        "ces_decision", "pooling_decision", "shrinkage_decision",
    ]
    rows = [
        (_label(lab), est.theta_hat[i], est.sigma_hat[i], tab["w_star"][i], tab["shrinkage_estimate"][i],
         tab["ces"][i], tab["pooling"][i], tab["shrinkage"][i])
        for i, lab in enumerate(est.labels)
    ]
    out = Output(
        args,
        {
            "command": "decide",
            "data": args.data,
            "estimates": args.estimates,
            "outcome": args.outcome,
            "treatment": args.treatment,
            "keys": args.keys,
            "cost_offset": args.cost_offset,
            "kappa": args.kappa,
            "variant": args.variant,
        },
    )
    out.csv("decide", header, rows)
    idx = np.arange(est.k_count)
    ave = float(est.theta_hat.mean())
    out.svg(
        "decide_estimates",
        Figure(
            f"shrinkage rule, kappa = {args.kappa:g}",
            "subgroup",
            "estimate",
            [
                Series("theta_hat", idx, est.theta_hat, kind="points"),
                Series("shrinkage estimate", idx, tab["shrinkage_estimate"], kind="hollow"),
            ],
            [HLine(0.0, "zero", "#1f4e9c"), HLine(ave, "average", "#b22222")],
        ),
        ["index", "theta_hat", "shrinkage_estimate", "zero", "average"],
        [(i, est.theta_hat[i], tab["shrinkage_estimate"][i], 0.0, ave) for i in idx],
    )
    out.svg(
        "decide_factors",
        Figure(
            f"shrinkage factor against standard error, kappa = {args.kappa:g}",
            "sigma_hat",
            "w*",
            [Series("w*", est.sigma_hat, tab["w_star"], kind="points")],
        ),
        ["sigma_hat", "w_star"],
        list(zip(est.sigma_hat, tab["w_star"])),
    )
    differ = int(np.sum(tab["ces"] != tab["shrinkage"]))
    summary = {
        "kappa": args.kappa,
        "variant": args.variant,
        "average_theta_hat": ave,
        "groups_where_shrinkage_differs_from_ces": differ,
        "rows": [dict(zip(header, r)) for r in rows],
        "files": out.written,
    }
    lines = _table(header, rows, "{:>20}") + [
        f"ave(theta_hat) = {ave:.6g}; shrinkage differs from CES in {differ} group(s)"
    ]
    _emit(args, summary, lines)
    return EXIT_OK


def cmd_bounds(args) -> int:
    problem = _problem(args)
    kappa = args.kappa
    kp = kappa if args.kappa_prime is None else args.kappa_prime
    result = {
        "kappa": kappa,
        "kappa_prime": kp,
        "thm1": bound_thm1(problem, kappa).to_dict(),
        "thm2": bound_thm2(problem, kappa).to_dict(),
        "thm3": bound_thm3(problem, kappa, kp).to_dict(),
        "thm4": bound_thm4(problem, kappa, kp).to_dict(),
    }
    out = Output(args, {"command": "bounds", "problem": problem.to_dict(), "kappa": kappa, "kappa_prime": kp})
    out.csv(
        "bounds",
        ["kappa", "kappa_prime", "thm1", "thm2", "thm3", "thm4"],
        [(kappa, kp, *(result[t]["ratio"] for t in ("thm1", "thm2", "thm3", "thm4")))],
    )
    lines = [f"{t}: {result[t]['ratio']:.6g}" for t in ("thm1", "thm2", "thm3", "thm4")]
    _emit(args, {**result, "files": out.written}, lines)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _common(defaults: bool) -> argparse.ArgumentParser:
    # Subparsers use SUPPRESS so a flag given before the command is kept.
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    common.add_argument("--out-dir", default=d("shrinkchoice-out"), help="output directory")
    common.add_argument("--json", action="store_true", default=d(False), help="print JSON, skip plots")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def _add_problem(p):
    p.add_argument("--problem", help="JSON file with sigma, p and optional covariates")
    p.add_argument("--sigma", help="comma-separated standard deviations")
    p.add_argument("--p", help="comma-separated shares (default uniform)")


def _add_data(p):
    p.add_argument("--data", help="micro-data CSV")
    p.add_argument("--estimates", help="EstimateVector JSON (instead of --data)")
    p.add_argument("--outcome", default="y")
    p.add_argument("--treatment", default="d")
    p.add_argument("--keys", default="group", help="comma-separated subgroup key columns")
    p.add_argument("--cost-offset", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shrinkchoice", description="Shrinkage treatment choice", parents=[_common(True)]
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(False)

    p = sub.add_parser("eta", parents=[common], help="evaluate eta")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--a", type=float, help="single argument; prints JSON")
    g.add_argument("--grid", help="start:stop:step grid; writes CSV and SVG")
    p.set_defaults(func=cmd_eta)

    p = sub.add_parser("factors", parents=[common], help="shrinkage factors along a kappa grid")
    p.add_argument("--kappa-grid", default="0:1:0.01")
    p.add_argument("--k", default="2,5,100", help="homoscedastic K values")
    p.add_argument("--sigma-value", type=float, default=1.0, help="common sigma for --k curves")
    p.add_argument("--problem", help="JSON problem instead of homoscedastic curves")
    p.set_defaults(func=cmd_factors)

    p = sub.add_parser("regret-compare", parents=[common], help="max regret of the three rules")
    _add_problem(p)
    p.add_argument("--kappa-grid", default="0.1:1.5:0.1")
    p.add_argument("--kappa-prime-rule", default="equal", help="equal, 1.2k or 0.8k")
    p.add_argument("--starts", type=int, default=64)
    p.add_argument("--refine", type=int, default=6)
    p.set_defaults(func=cmd_regret_compare)

    p = sub.add_parser("decide", parents=[common], help="subgroup decisions from data")
    _add_data(p)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--variant", choices=["mean", "regression"], default="mean")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("estimate", parents=[common], help="subgroup estimates from micro-data")
    _add_data(p)
    p.add_argument("--draws", type=int, default=100_000)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bounds", parents=[common], help="ratio bounds")
    _add_problem(p)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--kappa-prime", type=float)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

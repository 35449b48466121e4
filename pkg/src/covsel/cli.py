"""Command-line interface: ``covsel {simulate,select,validate,bench}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error
(bad flags, missing files, unknown columns). Data goes to stdout or the
``--out`` file; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import graph as G
from .bench import METHODS, BenchSpec, boxplot_data, estimates_csv, format_table, report_rows, run_bench
from .cmio import ALG1, ALG2, BIC, FAMILIES, NEAR_FULL, SCHEDULES, cmio_select, cmio_select_latent
from .sem import Dataset, ModelError, case_model, figure1_model, hide, parse_model, sample
from .stats import DEFAULT_ALPHA
from .subset import SolverConfig

DEFAULT_SEED = 20240101
BUILTINS = ("1", "2", "3", "figure1")
# scenarios of the simulation-study table: (case, n)
TABLE1 = ((1, 200), (1, 1000), (2, 200), (2, 1000), (3, 50))


class UsageError(Exception):
    pass


def _alpha(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def builtin_model(name: str):
    if name == "figure1":
        return hide(figure1_model(), ["Z2"])
    return case_model(int(name))


def _load_model(args):
    if args.case is not None:
        return builtin_model(args.case)
    try:
        return parse_model(_read_text(args.model))
    except (ModelError, G.GraphError) as exc:
        raise UsageError(f"{args.model}: {exc}") from None


def _solver(args) -> SolverConfig:
    return SolverConfig(restarts=args.restarts, max_iterations=args.max_iterations, seed=args.seed)


def cmd_simulate(args) -> int:
    m = _load_model(args)
    d = sample(m, args.n, args.seed)
    _emit(d.to_csv(), args.out)
    return 0


def cmd_select(args) -> int:
    try:
        d = Dataset.from_csv(io.StringIO(_read_text(args.data)), args.treatment, args.outcome)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.data}: {exc}") from None
    fn = cmio_select if args.algorithm == ALG1 else cmio_select_latent
    rep = fn(
        d,
        alpha=args.alpha,
        cfg=_solver(args),
        condition_on_treatment=not args.no_treatment_in_tests,
        bonferroni=args.bonferroni,
        family=args.family,
        schedule=args.schedule,
        selection_adjust=args.selection_adjust,
    )
    _emit(rep.to_json(), args.out)
    return 0


def _read_graph(path: str) -> G.Dag:
    text = _read_text(path)
    try:
        if any(line.lstrip().startswith("@") for line in text.splitlines()):
            return parse_model(text).graph
        return G.parse_edge_list(text)[0]
    except (ModelError, G.GraphError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_validate(args) -> int:
    g = _read_graph(args.graph)
    z = [s.strip() for s in args.set.split(",") if s.strip()] if args.set else []
    try:
        g.check(args.treatment, args.outcome, *z)
    except G.GraphError as exc:
        raise UsageError(str(exc)) from None
    if args.treatment in z or args.outcome in z:
        raise UsageError("the adjustment set cannot contain the treatment or the outcome")
    valid = G.is_valid_adjustment(g, args.treatment, args.outcome, z)
    out = {"treatment": args.treatment, "outcome": args.outcome, "set": G.sorted_nodes(z), "valid": valid}
    try:
        target = G.optimal_adjustment(g, args.treatment, args.outcome)
        out["optimal_set"] = G.sorted_nodes(target)
        out["set_difference"] = len(set(z) ^ target)
        out["contains_optimal"] = target <= set(z)
    except G.AssumptionError as exc:
        out["optimal_set"] = None
        out["note"] = str(exc)
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def _bench_specs(args) -> list[BenchSpec]:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    common = dict(
        replicates=args.replicates, methods=methods, alpha=args.alpha, seed=args.seed,
        restarts=args.restarts, subset_k=args.subset_k, workers=args.workers,
        family=args.family, schedule=args.schedule, selection_adjust=args.selection_adjust,
    )
    try:
        if args.table1:
            return [BenchSpec(case=c, n=n, **common) for c, n in TABLE1]
        if args.model is not None:
            _read_text(args.model)
            return [BenchSpec(case=None, model_path=args.model, n=args.n, **common)]
        if args.case not in ("1", "2", "3"):
            raise UsageError("bench needs --case 1|2|3, --model FILE or --table1")
        return [BenchSpec(case=int(args.case), n=args.n, **common)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_bench(args) -> int:
    specs = _bench_specs(args)
    rows, tables, boxes, estimates = [], [], [], []
    for spec in specs:
        rep = run_bench(spec)
        scen = f"{spec.label()}:n={spec.n}"
        rows.extend((scen, *r) for r in report_rows(rep))
        tables.append(format_table(rep))
        boxes.extend({"scenario": scen, **b} for b in boxplot_data(rep))
        estimates.append((scen, estimates_csv(rep)))
        print(f"finished {scen}", file=sys.stderr)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "method", "metric", "value"])
    w.writerows(rows)
    _emit(buf.getvalue(), args.out)
    table = "\n".join(tables)
    if args.table:
        _emit(table, args.table)
    elif args.out is not None:
        sys.stdout.write(table)
    if args.boxplot:
        bw = io.StringIO()
        fields = ["scenario", "method", "min", "q1", "median", "q3", "max", "mean", "true_effect"]
        dw = csv.DictWriter(bw, fields, lineterminator="\n")
        dw.writeheader()
        for b in boxes:
            dw.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in b.items()})
        _emit(bw.getvalue(), args.boxplot)
    if args.estimates:
        _emit("".join(f"# {scen}\n{text}" for scen, text in estimates), args.estimates)
    return 0


def _add_common(p: argparse.ArgumentParser, solver: bool = False) -> None:
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--out", help="output file (default stdout)")
    if solver:
        p.add_argument("--alpha", type=_alpha, default=DEFAULT_ALPHA, help="CI test level (default 0.05)")
        p.add_argument("--restarts", type=int, default=50, help="solver restarts per k (default 50)")
        p.add_argument("--max-iterations", type=_positive, default=1000)
        p.add_argument("--family", choices=FAMILIES, default=NEAR_FULL,
                       help=f"conditioning sets tested per step (default {NEAR_FULL})")
        p.add_argument("--schedule", choices=SCHEDULES, default=BIC,
                       help=f"CI level schedule; bic shrinks the level with n (default {BIC})")
        p.add_argument("--selection-adjust", action="store_true",
                       help="Sidak-correct the level for the number of candidates")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="covsel", description="Covariate selection for causal effect estimation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from a model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--case", choices=BUILTINS, help="built-in model")
    src.add_argument("--model", help="model file")
    p.add_argument("--n", type=_positive, required=True, help="number of samples")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", help="select an adjustment set from data")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--treatment", help="treatment column (default from the role line)")
    p.add_argument("--outcome", help="outcome column (default from the role line)")
    p.add_argument("--algorithm", choices=(ALG1, ALG2), default=ALG1, help="alg2 handles hidden variables")
    p.add_argument("--bonferroni", action="store_true", help="divide alpha by the number of tests per step")
    p.add_argument("--no-treatment-in-tests", action="store_true", help="leave the treatment out of conditioning sets")
    _add_common(p, solver=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("validate", help="check an adjustment set against a graph")
    p.add_argument("--graph", required=True, help="edge-list or model file")
    p.add_argument("--treatment", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--set", default="", help="comma-separated adjustment set")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="replicated simulation study")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--case", choices=BUILTINS[:3])
    src.add_argument("--model", help="model file with @treatment and @outcome")
    src.add_argument("--table1", action="store_true", help="all five simulation-study scenarios")
    p.add_argument("--n", type=_positive, default=1000)
    p.add_argument("--replicates", type=_positive, default=100)
    p.add_argument("--methods", default="cmio,target_oracle,full_z", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--subset-k", type=int, help="fixed k for t_xy_unconstrained (default: BIC)")
    p.add_argument("--workers", type=_positive, default=1, help="parallel worker processes")
    p.add_argument("--table", help="write the text table here instead of stdout")
    p.add_argument("--boxplot", help="write effect-estimate quartiles CSV here")
    p.add_argument("--estimates", help="write per-replicate estimates CSV here")
    _add_common(p, solver=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"covsel {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        print(f"covsel {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

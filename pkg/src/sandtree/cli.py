"""Command-line interface: ``sandtree <group> <command> [options]``.

Exit codes: 0 success, 1 report mismatch, 2 invalid arguments, 3 guard or
convergence failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import animals, experiments, ratio, sandpile, transfer
from . import tree as trees
from .errors import ConvergenceError, GuardError
from .experiments import ExperimentReport, fmt, to_csv
from .rng import RandomSource

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_GUARD = 0, 1, 2, 3
ENUM_HARD_LIMIT = 15


class UsageError(Exception):
    pass


# -- argument helpers -----------------------------------------------------------

def parse_number(text: str):
    """Rational when the text is an exact decimal or ``a/b``; float otherwise."""
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def parse_prob(text: str):
    p = parse_number(text)
    if not 0 <= p <= 1:
        raise UsageError(f"probability {text} outside [0, 1]")
    return p


def load_tree(text: str) -> trees.TreeTopology:
    """A JSON file path, inline JSON, or ``name[:arg]`` with name in point, cherry, full, chain, branch."""
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise UsageError(f"no such tree file: {text}")
        return trees.deserialize(path.read_bytes())
    if text.lstrip().startswith("{"):
        return trees.deserialize(text)
    name, _, arg = text.partition(":")
    makers = {
        "point": lambda: trees.point(),
        "cherry": lambda: trees.cherry(),
        "empty": lambda: trees.TreeTopology.empty(),
        "full": lambda: trees.full_tree(int(arg)),
        "chain": lambda: trees.chain(int(arg)),
        "branch": lambda: trees.single_branch(int(arg)),
    }
    if name not in makers:
        raise UsageError(f"unknown tree {text!r}")
    try:
        return makers[name]()
    except ValueError as exc:
        raise UsageError(f"bad tree argument in {text!r}: {exc}") from None


def load_measure(text: str, args) -> ratio.DiscreteMeasure:
    """``point:a``, ``fixed:p`` (the fixed point measure) or ``csv:path``."""
    kind, _, arg = text.partition(":")
    if kind == "point":
        return ratio.DiscreteMeasure.delta(float(parse_number(arg)))
    if kind == "fixed":
        return ratio.fixed_point_measure(float(parse_prob(arg)), support_cap=args.support_cap).measure
    if kind == "csv":
        return ratio.DiscreteMeasure.from_csv(Path(arg).read_text())
    raise UsageError(f"unknown distribution {text!r}")


def int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def number_list(text: str) -> list:
    return [parse_number(t) for t in text.replace(" ", "").split(",") if t]


# -- output ----------------------------------------------------------------------

def emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def emit_rows(args, header: list[str], rows, comment: str | None = None) -> None:
    if args.format == "json":
        doc = [{h: _json_value(r[h]) for h in header} for r in rows]
        emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        emit(args, (f"# {comment}\n" if comment else "") + to_csv(header, rows))


def _json_value(v):
    if isinstance(v, Fraction):
        return fmt(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


# -- commands ----------------------------------------------------------------------

def cmd_tree_sample(args):
    gen = RandomSource(args.seed).generator()
    sampler = trees.sample_binomial if args.kind == "binomial" else trees.sample_gw_binary
    t = sampler(float(parse_prob(args.p)), args.max_gen, gen)
    emit(args, trees.serialize(t).decode() + "\n")


def cmd_tree_build(args):
    kw = {"depth": args.n, "n": args.n, "tail": args.tail}
    if args.attachment:
        kw["attachment"] = load_tree(args.attachment)
    elif args.family in ("backbone", "perturbed_branch"):
        raise UsageError(f"{args.family} needs --attachment")
    emit(args, trees.serialize(trees.build_deterministic(args.family, **kw)).decode() + "\n")


def cmd_tree_shapes(args):
    shapes = trees.enumerate_rooted_shapes(args.max_vertices, guard=args.guard or trees.SHAPE_GUARD)
    rows = [{"vertices": t.n, "shape": trees.canonical_key(t)} for t in shapes]
    emit_rows(args, ["vertices", "shape"], rows)


def cmd_sandpile_stabilize(args):
    t = load_tree(args.tree)
    eta = sandpile.HeightConfig(t, tuple(int_list(args.heights)))
    out = sandpile.add(eta, args.add) if args.add is not None else sandpile.stabilize(eta)
    doc = {"final": list(out.final.heights), "topple_counts": list(out.topple_counts),
           "avalanche": sorted(out.avalanche)}
    emit(args, json.dumps(doc) + "\n")


def cmd_sandpile_recurrent(args):
    t = load_tree(args.tree)
    w, s = sandpile.weak_strong_counts(t)
    row = {"vertices": t.n, "recurrent": sandpile.recurrent_count(t), "weak": w, "strong": s,
           "det": sandpile.integer_det(sandpile.toppling_matrix(t)) if t.n else 1}
    # 3^n configurations are held in memory, so the override is capped
    guard = min(args.guard or sandpile.ENUM_GUARD, ENUM_HARD_LIMIT)
    if t.n <= guard:
        row["enumerated"] = sandpile.enumerate_recurrent(t, guard=guard).count
    else:
        row["enumerated"] = ""
    emit_rows(args, list(row), [row])


def cmd_sandpile_avalanche(args):
    t = load_tree(args.tree)
    origin = t.root if args.origin is None else args.origin
    if t.degree(origin) <= 2:
        law = sandpile.avalanche_size_law(t, origin)
    else:
        law = sandpile.exact_avalanche_law(t, origin, "enumerate", guard=args.guard or sandpile.ENUM_GUARD).sizes
    rows = [{"size": k, "probability": v, "edges": k - 1 if k else ""} for k, v in law.items()]
    emit_rows(args, ["size", "probability", "edges"], rows,
              comment=f"size = toppled vertices after one grain at vertex {origin}; edges = size - 1")


def cmd_ratio_exact(args):
    x = ratio.x_recursive(load_tree(args.tree), exact=not args.float)
    emit(args, fmt(x) + "\n")


def cmd_ratio_dist(args):
    res = ratio.fixed_point_measure(float(parse_prob(args.p)), args.support_cap, args.tol, args.max_iter)
    if args.format == "json":
        doc = {"diagnostics": res.diagnostics(), "mean": res.measure.mean(), "measure": res.measure.to_csv()}
        emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        emit(args, res.measure.to_csv())
        sys.stderr.write(json.dumps(res.diagnostics()) + "\n")


def cmd_ratio_direct(args):
    mu = ratio.sample_ratio_direct(float(parse_prob(args.p)), args.max_gen, args.samples,
                                   RandomSource(args.seed).generator())
    if args.format == "json":
        emit(args, json.dumps({"mean": mu.mean(), "measure": mu.to_csv()}, indent=2) + "\n")
    else:
        emit(args, mu.to_csv())


def cmd_transfer_eigen(args):
    xs = number_list(args.xs)
    m = transfer.product_log_scaled([float(x) for x in xs])
    e = transfer.eigen_2x2(m)
    row = {"n": len(xs), "log_lambda_plus": e.log_lambda_plus, "log_lambda_minus": e.log_lambda_minus,
           "lambda_plus": e.lambda_plus, "lambda_minus": e.lambda_minus, "log_trace": m.log_trace,
           "log_det": m.log_det, "trace_lower_bound_log": transfer.trace_lower_bound([float(x) for x in xs]),
           "clamped": e.clamped}
    emit_rows(args, list(row), [row])


LYAP_HEADER = ["n", "samples", "Yn_mean", "Yn_std", "Lplus", "Lminus", "det_check_err"]


def _lyap_row(r):
    return {"n": r["n"], "samples": r["samples"], "Yn_mean": r["Y_n_mean"], "Yn_std": r["Y_n_std"],
            "Lplus": r["L_plus"], "Lminus": r["L_minus"], "det_check_err": r["det_check_err"]}


def cmd_transfer_lyapunov(args):
    mu = load_measure(args.dist, args)
    r = transfer.lyapunov_estimate(mu, args.n, args.samples, RandomSource(args.seed).generator())
    emit_rows(args, LYAP_HEADER, [_lyap_row(r)])


def cmd_transfer_concentration(args):
    mu = load_measure(args.dist, args)
    rows = transfer.concentration_stats(mu, int_list(args.n_grid), args.samples, RandomSource(args.seed))
    emit_rows(args, LYAP_HEADER, [_lyap_row(r) for r in rows])


def cmd_animals_table(args):
    p = parse_prob(args.p)
    rec = animals.a_recursion(p, args.nmax)
    rows = []
    for k in range(args.nmax + 1):
        row = {"k": k, "a_recursion": rec[k], "a_exact_sum": animals.a_exact_sum(p, k),
               "hyper": animals.a_hypergeometric(p, k)}
        if k >= 2:
            row["largen_bound"] = animals.bounds(float(p), k - 1)["largen_bound"]
        else:
            row["largen_bound"] = ""
        rows.append(row)
    header = ["k", "a_recursion", "a_exact_sum", "hyper", "largen_bound"]
    if args.samples:
        gen = RandomSource(args.seed).generator()
        for row in rows:
            n_edges = row["k"] - 1
            if 0 <= n_edges <= animals.BRUTE_MAX_EDGES:
                row["brute_mean"], row["brute_stderr"] = animals.brute_expected(float(p), n_edges, args.samples, gen)
            else:
                row["brute_mean"] = row["brute_stderr"] = ""
        header += ["brute_mean", "brute_stderr"]
    emit_rows(args, header, rows,
              comment="a_k = expected clusters with k vertices at the root; k-1 edges; largen_bound with C=1")


def cmd_animals_threshold(args):
    p_star, p_bin = animals.threshold_solve()
    emit_rows(args, ["p_star", "p_binomial_star"], [{"p_star": p_star, "p_binomial_star": p_bin}])


def _run_experiment(name: str, params: dict) -> ExperimentReport:
    if name == "covariance":
        return experiments.run_covariance_experiment(**params)
    if name == "avalanche":
        return experiments.run_avalanche_experiment(**params)
    raise UsageError(f"unknown experiment {name!r}")


def cmd_experiment_cov(args):
    params = {"p": args.p, "n_max": args.n_max, "tree_budget": args.tree_budget, "seed": args.seed,
              "depth": args.depth, "shape_max": args.shape_max, "depth_margin": args.depth_margin,
              "support_cap": args.support_cap}
    emit(args, _run_experiment("covariance", params).to_json())


def cmd_experiment_avalanche(args):
    params = {"p": args.p, "size_max": args.size_max, "tree_budget": args.tree_budget, "seed": args.seed,
              "depth": args.depth, "max_gen": args.max_gen}
    emit(args, _run_experiment("avalanche", params).to_json())


def cmd_report(args):
    text = Path(args.input).read_text()
    old = ExperimentReport.from_json(text)
    new = _run_experiment(old.experiment, old.params).to_json()
    emit(args, new)
    if new != text:
        sys.stderr.write("report differs from its re-run\n")
        return EXIT_MISMATCH
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="write output to this file")
    common.add_argument("--format", choices=["csv", "json"], default=argparse.SUPPRESS)
    common.add_argument("--guard", type=int, default=argparse.SUPPRESS,
                        help="override enumeration guards (vertices)")

    ap = argparse.ArgumentParser(prog="sandtree", parents=[common],
                                 description="Sandpiles on binary trees: exact counts, ratios, transfer matrices.")
    ap.add_argument("--version", action="version", version=f"sandtree {__version__}")
    groups = ap.add_subparsers(dest="group", required=True)

    def command(group, name, func, **kw):
        p = group.add_parser(name, parents=[common], **kw)
        p.set_defaults(func=func)
        return p

    g = groups.add_parser("tree").add_subparsers(dest="cmd", required=True)
    p = command(g, "sample", cmd_tree_sample, help="sample a random tree")
    p.add_argument("--p", required=True)
    p.add_argument("--max-gen", type=int, required=True)
    p.add_argument("--kind", choices=["gw", "binomial"], default="gw")
    p = command(g, "build", cmd_tree_build, help="build a deterministic tree")
    p.add_argument("--family", required=True,
                   choices=["full", "single_branch", "backbone", "perturbed_branch", "chain"])
    p.add_argument("--n", type=int, required=True, help="depth, length or vertex count")
    p.add_argument("--attachment")
    p.add_argument("--tail", type=int, default=40)
    p = command(g, "shapes", cmd_tree_shapes, help="list rooted shapes")
    p.add_argument("--max-vertices", type=int, required=True)

    g = groups.add_parser("sandpile").add_subparsers(dest="cmd", required=True)
    p = command(g, "stabilize", cmd_sandpile_stabilize, help="stabilize a height configuration")
    p.add_argument("--tree", required=True)
    p.add_argument("--heights", required=True, help="comma-separated heights, one per vertex")
    p.add_argument("--add", type=int, help="drop a grain here first (configuration must be stable)")
    p = command(g, "recurrent", cmd_sandpile_recurrent, help="count recurrent configurations")
    p.add_argument("--tree", required=True)
    p = command(g, "avalanche", cmd_sandpile_avalanche, help="exact avalanche size law")
    p.add_argument("--tree", required=True)
    p.add_argument("--origin", type=int)

    g = groups.add_parser("ratio").add_subparsers(dest="cmd", required=True)
    p = command(g, "exact", cmd_ratio_exact, help="characteristic ratio of a tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--float", action="store_true")
    p = command(g, "dist", cmd_ratio_dist, help="fixed point measure")
    p.add_argument("--p", required=True)
    p.add_argument("--support-cap", type=int, default=2048)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=1000)
    p = command(g, "direct", cmd_ratio_direct, help="empirical ratio law over sampled trees")
    p.add_argument("--p", required=True)
    p.add_argument("--max-gen", type=int, default=12)
    p.add_argument("--samples", type=int, default=1000)

    g = groups.add_parser("transfer").add_subparsers(dest="cmd", required=True)
    p = command(g, "eigen", cmd_transfer_eigen, help="eigenvalues of a matrix product")
    p.add_argument("--xs", required=True, help="comma-separated ratios")
    for name, func in (("lyapunov", cmd_transfer_lyapunov), ("concentration", cmd_transfer_concentration)):
        p = command(g, name, func)
        p.add_argument("--dist", required=True, help="point:a, fixed:p or csv:path")
        p.add_argument("--samples", type=int, default=200)
        p.add_argument("--support-cap", type=int, default=2048)
        if name == "lyapunov":
            p.add_argument("--n", type=int, required=True)
        else:
            p.add_argument("--n-grid", default="32,64,128,256,512,1024")

    g = groups.add_parser("animals").add_subparsers(dest="cmd", required=True)
    p = command(g, "table", cmd_animals_table, help="expected cluster counts")
    p.add_argument("--p", required=True)
    p.add_argument("--nmax", type=int, required=True)
    p.add_argument("--samples", type=int, default=0, help="add Monte-Carlo columns")
    command(g, "threshold", cmd_animals_threshold, help="decay thresholds")

    g = groups.add_parser("experiment").add_subparsers(dest="cmd", required=True)
    p = command(g, "cov", cmd_experiment_cov, help="covariance experiment")
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--tree-budget", type=int, default=200)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--shape-max", type=int, default=9)
    p.add_argument("--depth-margin", type=int, default=5)
    p.add_argument("--support-cap", type=int, default=2048)
    p = command(g, "avalanche", cmd_experiment_avalanche, help="avalanche experiment")
    p.add_argument("--p", type=float, default=0.4)
    p.add_argument("--size-max", type=int, default=8)
    p.add_argument("--tree-budget", type=int, default=2000)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--max-gen", type=int, default=40)

    p = groups.add_parser("report", parents=[common], help="re-run a report from its header")
    p.add_argument("input")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("seed", 0), ("out", None), ("format", "csv"), ("guard", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        code = args.func(args)
    except (GuardError, ConvergenceError) as exc:
        sys.stderr.write(f"sandtree: {exc}\n")
        diag = getattr(exc, "diagnostics", None)
        if diag:
            sys.stderr.write(json.dumps(diag) + "\n")
        return EXIT_GUARD
    except (UsageError, ValueError, OSError) as exc:
        sys.stderr.write(f"sandtree: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())

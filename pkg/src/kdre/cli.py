"""Command-line front end.

    kdre fit        --gen 10,100,100,0.5 --sigma median --lambda rule --seed 7
    kdre loocv      --p-file p.csv --q-file q.csv
    kdre bench-cond --sigma 2 --n-grid 20,50,100 --runs 100
    kdre bench-iter --gen 10,500,500,0.5 --runs 20
    kdre check      --seed 1

Reports go to --out (default stdout) as CSV or JSON.  Every report carries
the resolved configuration, including the bandwidth picked by the median
heuristic and the lambda picked by the rule.  Numeric output never depends
on --threads, and fit/loocv/bench-cond/check reports contain no timings, so
repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import condlab, estimators, modelsel, optimizer
from .kernelcore import InputError, KernelSpec, as_point_set, cond, gram_blocks, median_heuristic


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def ingest_csv(path) -> np.ndarray:
    """Read one sample per row; a non-numeric first row is taken as a header."""
    text = Path(path).read_text()
    rows = [(i + 1, r) for i, r in enumerate(csv.reader(io.StringIO(text))) if any(c.strip() for c in r)]
    if rows and not all(_is_float(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0][1])
    data = []
    for line, row in rows:
        if len(row) != width:
            raise ParseError(f"expected {width} columns, found {len(row)}", line)
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise ParseError(f"non-numeric cell in {row!r}", line) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", line)
        data.append(vals)
    return as_point_set(np.array(data), str(path))


# ------------------------------------------------------------------ arguments


def _gen_spec(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("--gen expects d,n,m,mu")
    try:
        d, n, m = (int(p) for p in parts[:3])
        mu = float(parts[3])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --gen value {text!r}") from None
    if min(d, n, m) < 1:
        raise argparse.ArgumentTypeError("--gen sizes must be positive")
    return d, n, m, mu


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _sigma_arg(text: str):
    if text == "median":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--sigma expects a real or 'median'") from None


def _lambda_arg(text: str):
    if text == "rule":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--lambda expects a real or 'rule'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdre", description="Kernel density-ratio estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            src = p.add_mutually_exclusive_group()
            src.add_argument("--p-file", help="CSV sample from the denominator distribution P")
            src.add_argument("--gen", type=_gen_spec, help="synthetic normal data d,n,m,mu")
            p.add_argument("--q-file", help="CSV sample from the numerator distribution Q")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("fit", help="closed-form KuLSIF fit")
    common(p)
    p.add_argument("--sigma", type=_sigma_arg, default="median")
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="rule")
    p.add_argument("--eval-file", action="append", default=[], help="CSV of points to evaluate w_+ at")

    p = sub.add_parser("loocv", help="LOOCV grid search over sigma and lambda")
    common(p)
    p.add_argument("--sigma-grid", type=_float_list, help="bandwidths (default: median x 0.25..4)")
    p.add_argument("--lambda-grid", type=_float_list, default=[1e-3, 1e-2, 1e-1, 1.0])

    p = sub.add_parser("bench-cond", help="condition numbers of the Hessian kinds")
    common(p, data=False)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--n-grid", type=_int_list, default=[20, 50, 100, 200])
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--kinds", default=None, help="comma list, e.g. k11,rkulsif,kulsif,kmm,kl:0.5,rnd:2")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("bench-iter", help="BFGS iteration counts per formulation")
    common(p, data=False)
    p.add_argument("--gen", type=_gen_spec, default=(10, 500, 500, 0.5))
    p.add_argument("--sigma", type=_sigma_arg, default="median")
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="rule")
    p.add_argument("--runs", type=int, default=20, help="number of seeds")
    p.add_argument("--methods", default=",".join(condlab.BENCH_METHODS))
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("check", help="run the invariant suite")
    common(p, data=False)
    return parser


# ------------------------------------------------------------------- helpers


def _load_data(args):
    if args.p_file:
        if not args.q_file:
            raise InputError("--p-file needs --q-file")
        x, y = ingest_csv(args.p_file), ingest_csv(args.q_file)
        source = {"p_file": args.p_file, "q_file": args.q_file}
    else:
        if args.q_file:
            raise InputError("--q-file needs --p-file")
        d, n, m, mu = args.gen or (10, 100, 100, 0.5)
        x, y = condlab.gaussian_pair(np.random.default_rng(args.seed), d, n, m, mu)
        source = {"gen": {"d": d, "n": n, "m": m, "mu": mu}}
    if x.shape[1] != y.shape[1]:
        raise InputError(f"P sample has d={x.shape[1]}, Q sample has d={y.shape[1]}")
    return x, y, source


def _resolve(x, y, sigma, lam):
    sigma = median_heuristic(x) if sigma == "median" else float(sigma)
    lam = condlab.lambda_rule(x.shape[0], y.shape[0]) if lam == "rule" else float(lam)
    return sigma, lam


def _dump_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _csv_text(config: dict, header, rows) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def _emit(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands


def cmd_fit(args) -> int:
    x, y, source = _load_data(args)
    sigma, lam = _resolve(x, y, args.sigma, args.lam)
    model = estimators.fit_kulsif(x, y, KernelSpec(sigma), lam)
    config = {"command": "fit", "seed": args.seed, "sigma": sigma, "lambda": lam, **source}
    blocks = [("alpha", model.alpha), ("beta", model.beta)]
    for path in args.eval_file:
        pts = ingest_csv(path)
        blocks.append((f"w_plus:{path}", np.maximum(model.predict_many(pts), 0.0)))
    if args.format == "json":
        payload = {"config": config, **{name: [float(v) for v in vals] for name, vals in blocks}}
        _emit(args, _dump_json(payload))
    else:
        rows = [(name, i, repr(float(v))) for name, vals in blocks for i, v in enumerate(vals)]
        _emit(args, _csv_text(config, ["block", "index", "value"], rows))
    return 0


def cmd_loocv(args) -> int:
    x, y, source = _load_data(args)
    med = median_heuristic(x)
    sigma_grid = args.sigma_grid or [med * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)]
    sel = modelsel.grid_select(x, y, sigma_grid, args.lambda_grid)
    config = {
        "command": "loocv",
        "seed": args.seed,
        "median_sigma": med,
        "sigma_grid": sel.sigma_grid,
        "lambda_grid": sel.lambda_grid,
        **source,
    }
    best = {"sigma": sel.best[0], "lambda": sel.best[1]}
    cells = [
        (s, v, float(sel.scores[i, j])) for i, s in enumerate(sel.sigma_grid) for j, v in enumerate(sel.lambda_grid)
    ]
    if args.format == "json":
        payload = {
            "config": config,
            "best": best,
            "scores": [{"sigma": s, "lambda": v, "score": _num(sc)} for s, v, sc in cells],
        }
        _emit(args, _dump_json(payload))
    else:
        rows = [(repr(s), repr(v), _num(sc), int(sel.best == (s, v))) for s, v, sc in cells]
        _emit(args, _csv_text(config, ["sigma", "lambda", "score", "best"], rows))
    return 0


def cmd_bench_cond(args) -> int:
    kinds = condlab.TABLE1_KINDS
    if args.kinds:
        kinds = [condlab.parse_kind(k) for k in args.kinds.split(",")]
    cfg = condlab.CondExperimentConfig(
        n_grid=tuple(args.n_grid), sigma=args.sigma, runs=args.runs, seed=args.seed, dim=args.dim, threads=args.threads
    )
    rep = condlab.cond_table(cfg, kinds)
    if args.format == "json":
        _emit(args, rep.to_json())
    else:
        body = rep.to_csv()
        _emit(args, "# config: " + json.dumps(rep.config, sort_keys=True) + "\n" + body)
    return 0


def cmd_bench_iter(args) -> int:
    d, n, m, mu = args.gen
    if n != m:
        raise InputError("bench-iter needs n = m")
    cfg = condlab.BenchConfig(
        n=n,
        m=m,
        seeds=args.runs,
        seed=args.seed,
        dim=d,
        mu=mu,
        sigma=None if args.sigma == "median" else float(args.sigma),
        lam=None if args.lam == "rule" else float(args.lam),
        threads=args.threads,
    )
    methods = [s.strip() for s in args.methods.split(",") if s.strip()]
    rep = condlab.iteration_bench(cfg, methods)
    if args.format == "json":
        _emit(args, rep.to_json())
    else:
        _emit(args, "# config: " + json.dumps(rep.config, sort_keys=True) + "\n" + rep.to_csv())
    return 0


def run_checks(seed: int) -> list[tuple[str, bool, str]]:
    """Gradient checks, LOOCV oracle, kappa identities and ordering on small random instances."""
    rng = np.random.default_rng(seed)
    results = []
    kernel = KernelSpec(1.5)
    for k in range(5):
        d = 3
        n, m = int(rng.integers(5, 20)), int(rng.integers(5, 20))
        x, y = condlab.gaussian_pair(rng, d, n, m, 0.5)
        g = gram_blocks(kernel, x, y)
        lam = float(rng.choice([1e-2, 1e-1, 1.0]))
        pts = [rng.standard_normal(n) for _ in range(3)]
        for name, obj in (
            ("rkulsif", estimators.rkulsif_objective(g, lam)),
            ("kulsif", estimators.kulsif_objective(g, lam)),
            ("kmm_inductive", estimators.kmm_inductive_objective(g, lam)),
        ):
            err = optimizer.grad_check(obj, pts).max_rel_error
            results.append((f"grad[{name}] #{k}", err <= 1e-5, f"{err:.2e}"))
        kl_pts = condlab.kl_random_alphas(g, lam, 3, rng)
        kl = estimators.mest_objective(g, lam, estimators.KULLBACK_LEIBLER)
        err = optimizer.grad_check(kl, kl_pts).max_rel_error
        results.append((f"grad[mest_kl] #{k}", err <= 1e-5, f"{err:.2e}"))

        a = modelsel.loocv_analytic(g, lam).score
        b = modelsel.loocv_naive(x, y, kernel, lam).score
        rel = abs(a - b) / max(abs(b), 1e-300)
        results.append((f"loocv #{k}", rel <= 1e-8, f"{rel:.2e}"))

        ordering = condlab.ordering_check(g, lam)
        results.append((f"ordering #{k}", ordering.ok, str(ordering.flags)))
        kr = cond(g.k11 / n + lam * np.eye(n))
        rel = abs(ordering.kulsif - ordering.k11 * kr) / ordering.kulsif
        results.append((f"kappa identity #{k}", rel <= 1e-8, f"{rel:.2e}"))
    return results


def cmd_check(args) -> int:
    results = run_checks(args.seed)
    failed = sum(not ok for _, ok, _ in results)
    config = {"command": "check", "seed": args.seed}
    if args.format == "json":
        payload = {
            "config": config,
            "passed": len(results) - failed,
            "failed": failed,
            "checks": [{"name": n, "ok": ok, "detail": d} for n, ok, d in results],
        }
        _emit(args, _dump_json(payload))
    else:
        rows = [(n, "pass" if ok else "FAIL", d) for n, ok, d in results]
        _emit(args, _csv_text(config, ["check", "status", "detail"], rows))
    print(f"{len(results) - failed} passed, {failed} failed", file=sys.stderr)
    return 0 if failed == 0 else 1


COMMANDS = {
    "fit": cmd_fit,
    "loocv": cmd_loocv,
    "bench-cond": cmd_bench_cond,
    "bench-iter": cmd_bench_iter,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"kdre {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: ``occupancy model|scan|classify|simulate|audit``.

Exit codes: 0 success, 2 usage or model-spec error, 3 unwritable output,
4 audit failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Sequence

from . import __version__
from .criteria import CriterionConfig, classify, invariant_audit
from .export import to_csv, to_json, write_text
from .models import catalog
from .scan import AXES, Grid, ScanRequest, run_scan
from .simulator import simulate_fixed_n, simulate_poissonized
from .specfile import dump_json, load_model

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_AUDIT = 0, 2, 3, 4


class UsageError(Exception):
    """Bad input; reported on stderr with exit status 2."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _model(source: str):
    if source.startswith("catalog:"):
        name = source[len("catalog:") :]
        models = catalog()
        if name not in models:
            raise UsageError(f"model: unknown catalog entry {name!r}; try 'occupancy model list'")
        return models[name]
    try:
        return load_model(source)
    except OSError as err:
        raise UsageError(f"model: cannot read {source!r}: {err.strerror or err}") from None
    except ValueError as err:
        raise UsageError(f"model: {err}") from None


def _emit(text: str, out: str | None) -> None:
    try:
        write_text(text, out)
    except OSError as err:
        raise OSError(f"cannot write {out!r}: {err.strerror or err}") from None


# -- criterion flags ---------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("criterion settings (defaults shown are echoed into the report)")
    for f in dataclasses.fields(CriterionConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, tuple):
            lo, hi = f.default
            shown = f"{lo}:{'auto' if hi is None else hi}"
            g.add_argument(flag, dest=f.name, metavar="LO:HI", default=None, help=f"default {shown}")
        else:
            g.add_argument(flag, dest=f.name, type=type(f.default), default=None, help=f"default {f.default}")


def _config_from(args) -> CriterionConfig:
    kw = {}
    for f in dataclasses.fields(CriterionConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if isinstance(f.default, tuple):
            parts = v.split(":")
            if len(parts) != 2:
                raise UsageError(f"{f.name}: expected LO:HI, got {v!r}")
            conv = int if isinstance(f.default[0], int) else float
            try:
                lo = conv(parts[0])
                hi = None if parts[1] == "auto" else conv(parts[1])
            except ValueError:
                raise UsageError(f"{f.name}: cannot parse {v!r}") from None
            if hi is not None and not lo < hi:
                raise UsageError(f"{f.name}: needs LO < HI, got {v!r}")
            v = (lo, hi)
        kw[f.name] = v
    try:
        return CriterionConfig(**kw)
    except ValueError as err:
        raise UsageError(str(err)) from None


# -- subcommands ------------------------------------------------------------------------


def cmd_model(args) -> int:
    if args.action == "list":
        for name, m in catalog().items():
            print(f"{name}\t{m!r}")
        return EXIT_OK
    if not args.model:
        raise UsageError("model: --model is required for 'show'")
    m = _model(args.model)
    if args.json:
        _emit(dump_json(m) + "\n", args.out)
        return EXIT_OK
    size = "infinite" if m.infinite else str(m.support_size)
    lines = [repr(m), f"support: {size}", f"mass: {m.raw_mass:.17g}"]
    lines += [f"p_{j} = {m.freq(j):.17g}" for j in range(1, min(args.head, m.support_size or args.head) + 1)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_scan(args) -> int:
    m = _model(args.model)
    try:
        grid = Grid.parse(args.grid)
        req = ScanRequest(
            [q.strip() for q in args.quantities.split(",") if q.strip()],
            grid,
            r=args.r,
            k=args.k,
            eps=args.eps,
            threads=args.threads,
        )
        req.axis()
    except ValueError as err:
        raise UsageError(str(err)) from None
    res = run_scan(m, req)
    if args.format == "csv":
        text = to_csv(res.columns)
    else:
        text = to_json({"model": m.to_spec(), "grid": grid.to_dict(), "axis": res.axis, "columns": res.columns})
    _emit(text, args.out)
    print(f"scan: {res.rows} rows x {len(res.columns)} columns", file=sys.stderr)
    return EXIT_OK


def _describe(v: dict) -> str:
    kind = v["type"]
    if kind in ("ConvergesTo", "BoundedBy"):
        return f"{kind}({v['k']})"
    if kind == "Diverges":
        return f"Diverges (witness: {v['witness']})"
    cand = f", candidate {_describe(v['candidate'])}" if "candidate" in v else ""
    return f"Inconclusive ({v['reason']}{cand})"


def cmd_classify(args) -> int:
    m = _model(args.model)
    cfg = _config_from(args)
    try:
        res = classify(m, cfg)
    except ValueError as err:
        raise UsageError(str(err)) from None
    report = res.to_dict()
    report["model"] = m.to_spec()
    _emit(to_json(report), args.out)
    print(f"{m!r}: {_describe(report['verdict'])}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    m = _model(args.model)
    if (args.n is None) == (args.t is None):
        raise UsageError("simulate: give exactly one of --n or --t")
    try:
        if args.n is not None:
            s = simulate_fixed_n(m, args.n, args.replicates, args.seed, args.eps, args.threads, args.r_max)
        else:
            s = simulate_poissonized(m, args.t, args.replicates, args.seed, args.eps, args.threads, args.r_max)
    except ValueError as err:
        raise UsageError(str(err)) from None
    report = s.to_dict()
    report["model"] = m.to_spec()
    report["settings"] = {"eps": args.eps, "threads": args.threads, "r_max": args.r_max}
    _emit(to_json(report), args.out)
    print(
        f"{m!r}: mean_k = {s.mean_k:.6g} +- {s.se['mean_k']:.2g}, var_k = {s.var_k:.6g} +- {s.se['var_k']:.2g}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_audit(args) -> int:
    names = [args.model] if args.model else [f"catalog:{n}" for n in catalog()]
    cfg = _config_from(args)
    reports = []
    for name in names:
        reports.append(invariant_audit(_model(name), cfg))
    failed = [r for r in reports if not r.passed]
    body = [r.to_dict() for r in reports]
    _emit(to_json(body[0] if args.model else {"reports": body, "config": cfg.to_dict()}), args.out)
    for r in reports:
        bad = ", ".join(e.name for e in r.failures)
        print(f"{r.model.get('kind')}: {'pass' if r.passed else 'FAIL ' + bad}", file=sys.stderr)
    return EXIT_AUDIT if failed else EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occupancy", description="Occupancy moments, criteria and simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    model_help = "inline JSON/TOML spec, a file path, or catalog:NAME"

    m = sub.add_parser("model", help="show or list frequency models")
    m.add_argument("action", choices=["show", "list"])
    m.add_argument("--model", help=model_help)
    m.add_argument("--json", action="store_true", help="print the canonical spec")
    m.add_argument("--head", type=int, default=5, help="leading frequencies to print")
    m.add_argument("--out")
    m.set_defaults(func=cmd_model)

    s = sub.add_parser("scan", help="tabulate quantities over a grid")
    s.add_argument("--model", required=True, help=model_help)
    s.add_argument("--grid", required=True, help="KIND:LO:HI:N with KIND log or linear")
    s.add_argument("--quantities", required=True, help="comma list from: " + ", ".join(AXES))
    s.add_argument("--r", type=_int_list, default=[1, 2], help="orders for phi_r (default 1,2)")
    s.add_argument("--k", type=_int_list, default=[1, 2], help="lags for lag_ratios (default 1,2)")
    s.add_argument("--eps", type=float, default=1e-12, help="series truncation tolerance")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_scan)

    c = sub.add_parser("classify", help="decide convergence of the variance")
    c.add_argument("--model", required=True, help=model_help)
    c.add_argument("--out")
    _add_config_flags(c)
    c.set_defaults(func=cmd_classify)

    sim = sub.add_parser("simulate", help="Monte Carlo replicates of the occupancy count")
    sim.add_argument("--model", required=True, help=model_help)
    sim.add_argument("--n", type=int, help="fixed number of balls")
    sim.add_argument("--t", type=float, help="Poisson time")
    sim.add_argument("--replicates", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--eps", type=float, default=None, help="neglected tail mass (default adaptive)")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--r-max", type=int, default=5)
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    a = sub.add_parser("audit", help="check moment inequalities (exit 4 on violation)")
    a.add_argument("--model", help=model_help + " (default: whole catalog)")
    a.add_argument("--out")
    _add_config_flags(a)
    a.set_defaults(func=cmd_audit)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"occupancy {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"occupancy {args.command}: error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

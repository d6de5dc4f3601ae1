"""Command-line entry point: rsbeam {gen-channels,run,sweep,dof,dump-conic}."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import conic, dof, harness
from .channel import generate_channels
from .model import PowerBudget, SystemDims, ValidationError, dump_channels

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _dims_arg(text):
    try:
        return SystemDims.from_label(text)
    except (ValueError, ValidationError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _cmd_gen_channels(args) -> int:
    ch = generate_channels(args.dims, args.seed, args.noise_var)
    path = dump_channels(args.out, args.dims, ch)
    print(f"wrote {path}")
    return EXIT_OK


def _load(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def _progress(done, total):
    print(f"\r{done}/{total} cells", end="", file=sys.stderr, flush=True)
    if done == total:
        print(file=sys.stderr)


def _cmd_run(args, with_summary=False) -> int:
    cfg = _load(args)
    res = harness.run_experiment(cfg, args.out, progress=None if args.quiet else _progress)
    print(f"wrote {res.output_path} ({len(res.rows)} rows, {res.n_failures} failures)")
    if with_summary:
        summary_path = Path(res.output_path).with_suffix(".summary.csv")
        harness.write_summary(summary_path, res.summary)
        print(harness.format_summary(res.summary))
        print(f"wrote {summary_path}")
    return EXIT_PARTIAL if res.n_failures else EXIT_OK


def _cmd_dof(args) -> int:
    cfg = harness.load_config(args.config)
    dims = cfg.dims
    print(f"dims {dims.label}: classic DoF per subcarrier = {dof.dof_classic(dims)}")
    m_deg = args.m_degraded if args.m_degraded is not None else dims.n_groups - 1
    print(f"RS DoF with {m_deg} degraded group(s) = {dof.dof_rs(m_deg):.6g} "
          f"(beta = {dof.rs_power_exponent(m_deg):.6g})")
    results = args.results or cfg.output_path
    if Path(results).exists():
        rows = harness.read_rows(results)
        summary = harness.summarize(rows, dims.n_subcarriers, args.window_db)
        for algo, d in summary["dof"].items():
            print(f"empirical {algo:<10} {d['dof']:.4f}  window={d['window_db']}")
    elif args.results:
        print(f"results file {results} not found", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _cmd_dump_conic(args) -> int:
    ch = generate_channels(args.dims, args.seed)
    budget = PowerBudget.from_snr_db(args.snr_db)
    prob = conic.build_rs_subproblem(ch, args.dims, budget, mode=args.mode)
    text = prob.dump()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsbeam", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-channels", help="draw one channel realisation and dump it as CSV")
    g.add_argument("--dims", type=_dims_arg, required=True, help="N-Nt-M-K, e.g. 2-2-2-2")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--noise-var", type=float, default=1.0)
    g.set_defaults(func=_cmd_gen_channels)

    for name, helptext in (("run", "run a Monte-Carlo experiment"), ("sweep", "run, then print the summary")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", required=True)
        r.add_argument("--out", default=None)
        r.add_argument("--seed", type=int, default=None)
        r.add_argument("--workers", type=int, default=None)
        r.add_argument("--quiet", action="store_true")
        r.set_defaults(func=(lambda a: _cmd_run(a, True)) if name == "sweep" else _cmd_run)

    d = sub.add_parser("dof", help="analytic and empirical DoF")
    d.add_argument("--config", required=True)
    d.add_argument("--results", default=None)
    d.add_argument("--m-degraded", type=int, default=None)
    d.add_argument("--window-db", type=float, default=harness.DOF_WINDOW_DB)
    d.set_defaults(func=_cmd_dof)

    c = sub.add_parser("dump-conic", help="write the tagged RS subproblem, one constraint per line")
    c.add_argument("--dims", type=_dims_arg, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--snr-db", type=float, default=10.0)
    c.add_argument("--mode", choices=("rs", "no_rs"), default="rs")
    c.add_argument("--out", default=None)
    c.set_defaults(func=_cmd_dump_conic)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

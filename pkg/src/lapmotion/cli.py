"""Command line interface: ``lapmotion {prune,synth,eval,sweep,gradcheck,graph}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .core import (LapMotionError, load_correspondences, load_predictions,
                   save_correspondences, save_prune_result)
from .evaluation import VARY, score, sweep, write_gnuplot, write_sweep_csv
from .graph import build_graph
from .lmf import LmfConfig, lmf_prune, residual_histogram
from .synth import FIELD_KINDS, SceneSpec, generate_scene

log = logging.getLogger("lapmotion")


def _add_lmf_args(p: argparse.ArgumentParser) -> None:
    d = LmfConfig()
    p.add_argument("--k", type=int, default=d.k, help="neighbors per node (default %(default)s)")
    p.add_argument("--sigma", type=float, default=d.sigma, help="kernel bandwidth (default %(default)s)")
    p.add_argument("--eta", type=float, default=d.eta, help="smoothness strength (default %(default)s)")
    p.add_argument("--epsilon", type=float, default=d.epsilon,
                   help="inlier threshold on the residual norm (default %(default)s)")
    p.add_argument("--k-e", type=int, default=d.k_e, help="eigenpairs kept (default %(default)s)")
    p.add_argument("--laplacian", choices=("plain", "normalized"), default=d.laplacian_kind)
    p.add_argument("--symmetrize", choices=("union", "mutual"), default=d.symmetrize)


def _lmf_config(args) -> LmfConfig:
    return LmfConfig(k=args.k, sigma=args.sigma, eta=args.eta, epsilon=args.epsilon,
                     k_e=args.k_e, laplacian_kind=args.laplacian, symmetrize=args.symmetrize)


def _parse_values(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_seeds(text: str):
    if "-" in text and "," not in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_prune(args) -> int:
    cs = load_correspondences(args.input, args.format, check_range=not args.no_normalize_check)
    result = lmf_prune(cs, _lmf_config(args))
    for note in result.warnings:
        print(f"warning: {note}", file=sys.stderr)
    if args.out:
        save_prune_result(result, args.out, args.out_format)
    else:
        print("index,residual,inlier")
        for i, (r, ok) in enumerate(zip(result.residual_norms, result.inlier)):
            print(f"{i},{r!r},{int(ok)}")
    if args.histogram:
        for edge, count in residual_histogram(result, args.histogram):
            print(f"{edge:.6f}\t{count}", file=sys.stderr)
    if cs.labels is not None:
        rep = score(result.inlier, cs.labels)
        print(f"precision={rep.precision:.4f} recall={rep.recall:.4f} f1={rep.f1:.4f}",
              file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    spec = SceneSpec(n_points=args.n, outlier_ratio=args.outlier_ratio, field_kind=args.field,
                     noise_std=args.noise, seed=args.seed, regions=args.regions)
    save_correspondences(generate_scene(spec), args.out, args.format)
    return 0


def cmd_eval(args) -> int:
    pred = load_predictions(args.pred)
    truth = load_correspondences(args.truth, check_range=False).labels
    if truth is None:
        raise LapMotionError(f"{args.truth} has no label column")
    print(json.dumps(score(pred, truth).as_dict(), indent=2))
    return 0


def cmd_sweep(args) -> int:
    specs = [SceneSpec(n_points=args.n, outlier_ratio=args.outlier_ratio, field_kind=args.field,
                       noise_std=args.noise, seed=s, regions=args.regions)
             for s in _parse_seeds(args.seeds)]
    rows = sweep(specs, _lmf_config(args), args.vary, _parse_values(args.values))
    if args.out:
        write_sweep_csv(rows, args.out)
    else:
        print("value,precision,recall,f1")
        for r in rows:
            print(f"{r.value!r},{r.precision!r},{r.recall!r},{r.f1!r}")
    if args.gnuplot:
        write_gnuplot(rows, args.gnuplot, args.vary)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, run_gradchecks

    checks = run_gradchecks(args.instances, args.seed)
    print(format_table(checks))
    return 0 if all(c.passed for c in checks) else 1


def cmd_graph(args) -> int:
    cs = load_correspondences(args.input, check_range=not args.no_normalize_check)
    build_graph(cs, args.k, args.sigma, args.symmetrize).save_json(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lapmotion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="label correspondences in a file")
    p.add_argument("input")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--out", help="output file (default: CSV on stdout)")
    p.add_argument("--out-format", choices=("csv", "jsonl"))
    p.add_argument("--no-normalize-check", action="store_true",
                   help="accept coordinates outside [-1, 1]")
    p.add_argument("--histogram", type=int, metavar="BINS",
                   help="print a residual histogram to stderr")
    _add_lmf_args(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("synth", help="generate a labeled synthetic scene")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--outlier-ratio", type=float, default=0.5)
    p.add_argument("--field", choices=FIELD_KINDS, default="translation")
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("--pred", required=True, help="output of `prune`")
    p.add_argument("--truth", required=True, help="correspondence file with labels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="average metrics over seeded scenes per parameter value")
    p.add_argument("--vary", choices=VARY, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0-9", help="range 'a-b' or list 'a,b,c'")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--outlier-ratio", type=float, default=0.5)
    p.add_argument("--field", choices=FIELD_KINDS, default="translation")
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.add_argument("--gnuplot", help="also write a gnuplot data file")
    _add_lmf_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("graph", help="export the k-NN graph as JSON")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--symmetrize", choices=("union", "mutual"), default="union")
    p.add_argument("--no-normalize-check", action="store_true")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LapMotionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

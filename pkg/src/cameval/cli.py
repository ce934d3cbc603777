"""``cam-eval`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 fake-check failure.
"""

import argparse
import logging
import os
import sys

from . import cams, harness, metrics, nn
from . import io as tio
from .errors import ConfigError, ContractError, EmptyDatasetError, FormatError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FAKE = 0, 2, 3, 4


def _ids(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(","))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _eval_args(p):
    p.add_argument("--model", required=True, help="MCN1 model file")
    p.add_argument("--images", default="synth:8", help="PPM directory, @list of CTF1 files, or synth:N")
    p.add_argument("--classes", default="top1", help="top1 | fixed:K | @file")
    p.add_argument("--methods", type=_ids, default=cams.METHOD_IDS, help="comma-separated method ids")
    p.add_argument("--metrics", type=_ids, default=metrics.METRIC_IDS, help="comma-separated metric ids")
    p.add_argument("--steps", type=int, default=None, help="insertion/deletion steps (default min(P, 100))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=int(os.environ.get("CAM_EVAL_JOBS", "1")))
    p.add_argument("--json", dest="json_path")
    p.add_argument("--csv", dest="csv_path")
    p.add_argument("--svg-dir", dest="svg_dir")
    p.add_argument("--smooth-samples", type=int, default=16)
    p.add_argument("--smooth-sigma", type=float, default=0.15, help="noise std as a fraction of the input range")
    p.add_argument("--mean", type=_floats, default=tio.IMAGENET_MEAN)
    p.add_argument("--std", type=_floats, default=tio.IMAGENET_STD)
    p.add_argument("--dedupe-equivalent", action="store_true",
                   help="skip xgrad-cam where it coincides with grad-cam by construction")
    p.add_argument("--record-timing", action="store_true", help="add wall time to the JSON provenance")


def build_parser():
    parser = _Parser(prog="cam-eval", description="Evaluate class activation maps.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="evaluate methods x metrics over a dataset")
    _eval_args(run)

    fc = sub.add_parser("fake-check", help="check that Fake-CAM is ranked last by ADCC")
    _eval_args(fc)
    fc.add_argument("--threshold", type=float, default=5.0)

    gm = sub.add_parser("gen-model", help="write a seeded reference model")
    gm.add_argument("--arch", default="tinygap", choices=sorted(nn.ARCHITECTURES))
    gm.add_argument("--classes", type=int, default=10)
    gm.add_argument("--seed", type=int, default=0)
    gm.add_argument("--input-size", type=int, default=32)
    gm.add_argument("--out", required=True)
    return parser


def _config(args):
    keys = ("images", "classes", "methods", "metrics", "steps", "seed", "jobs", "json_path", "csv_path",
            "svg_dir", "smooth_samples", "mean", "std", "dedupe_equivalent", "record_timing")
    kw = {k: getattr(args, k) for k in keys}
    return harness.EvalConfig(model_path=args.model, smooth_sigma_fraction=args.smooth_sigma, **kw)


def _emit(report, cfg):
    harness.emit_report(report, cfg.json_path, cfg.csv_path)
    if cfg.svg_dir:
        harness.emit_curves_svg(report.curves, cfg.svg_dir, seed=cfg.seed)


def _run(args):
    cfg = _config(args)
    report = harness.run_eval(cfg)
    _emit(report, cfg)
    for w in report.warnings:
        logging.warning(w)
    print(harness.format_table(report.aggregate))
    return EXIT_OK


def _fake_check(args):
    cfg = _config(args)
    result = harness.fake_check(cfg, threshold=args.threshold)
    _emit(result.report, cfg)
    print(result.table)
    for f in result.failures:
        print(f"FAIL: {f}")
    print("fake-check:", "PASS" if result.passed else "FAIL")
    return EXIT_OK if result.passed else EXIT_FAKE


def _gen_model(args):
    model = nn.build_model(args.arch, args.classes, args.seed, (args.input_size, args.input_size))
    tio.write_model(args.out, model)
    print(f"wrote {args.arch} ({args.classes} classes, seed {args.seed}) to {args.out}")
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    handler = {"run": _run, "fake-check": _fake_check, "gen-model": _gen_model}[args.command]
    try:
        return handler(args)
    except (ConfigError, EmptyDatasetError, ContractError) as exc:
        print(f"cam-eval: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"cam-eval: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``stickyhdp {synth,fit,decode,eval,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigError,
    DecompositionError,
    DegenerateDistributionError,
    FormatError,
    InvalidParameterError,
    StickyHDPError,
)
from .metrics import frame_der, hamming_matched
from .pipeline import (
    RunConfig,
    decode_run,
    read_labels,
    read_mask,
    report_run,
    run_experiment,
    write_binary_features,
    write_labels,
    write_text_features,
)
from .synthetic import PRESETS, gen_hmm, preset

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2
OVERRIDES = {"seed": "seed", "chains": "chains", "sweeps": "sweeps", "sampler": "sampler",
             "L": "L", "Lprime": "Lprime", "frames_per_state": "frames_per_state",
             "block_width": "block_width", "output": "output"}


def _cmd_synth(args):
    spec = preset(args.preset, T=args.T, seed=args.seed)
    Y, z = gen_hmm(spec, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.binary:
        write_binary_features(out / "features.bin", Y)
    else:
        write_text_features(out / "features.txt", Y)
    write_labels(out / "truth.txt", z)
    (out / "scenario.json").write_text(json.dumps(
        {"preset": args.preset, "seed": args.seed, "T": len(z),
         "transition": spec.transition.tolist()}, indent=2))
    print(out)


def _cmd_fit(args):
    cfg = RunConfig.load(args.config)
    for attr, key in OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, key, value)
    metrics = run_experiment(cfg)
    print(json.dumps(metrics, indent=2))


def _cmd_decode(args):
    cfg = RunConfig.load(Path(args.run_dir) / "config.json")
    dec = decode_run(args.run_dir, cfg.burn_fraction, cfg.loglik_tolerance, cfg.z_every)
    out = Path(args.out) if args.out else Path(args.run_dir) / "decoded_labels.txt"
    write_labels(out, dec["labels"])
    print(json.dumps({"chain": dec["chain"], "kept": dec["kept"], "output": str(out)}))


def _cmd_eval(args):
    truth = read_labels(args.truth)
    est = read_labels(args.estimate)
    if truth.size != est.size:
        raise FormatError(f"{truth.size} reference labels but {est.size} estimated labels")
    mask = read_mask(args.mask, truth.size) if args.mask else None
    result = {"hamming": hamming_matched(truth, est), "der": frame_der(truth, est, mask)}
    print(json.dumps(result))


def _cmd_report(args):
    for name in report_run(args.run_dir):
        print(Path(args.run_dir) / "report" / name)


def build_parser():
    p = argparse.ArgumentParser(prog="stickyhdp", description="Sticky HDP-HMM toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="simulate a preset scenario")
    s.add_argument("preset", choices=PRESETS)
    s.add_argument("--out", default="synth")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--T", type=int)
    s.add_argument("--binary", action="store_true", help="write binary features")
    s.set_defaults(func=_cmd_synth)

    f = sub.add_parser("fit", help="run the chains described by a JSON config")
    f.add_argument("config")
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--sweeps", type=int)
    f.add_argument("--sampler")
    f.add_argument("--L", type=int)
    f.add_argument("--Lprime", type=int)
    f.add_argument("--frames-per-state", dest="frames_per_state", type=int)
    f.add_argument("--block-width", dest="block_width", type=int)
    f.add_argument("--output")
    f.set_defaults(func=_cmd_fit)

    d = sub.add_parser("decode", help="minimum expected Hamming decoding of a run")
    d.add_argument("run_dir")
    d.add_argument("--out")
    d.set_defaults(func=_cmd_decode)

    e = sub.add_parser("eval", help="Hamming distance and DER between label files")
    e.add_argument("truth")
    e.add_argument("estimate")
    e.add_argument("--mask")
    e.set_defaults(func=_cmd_eval)

    r = sub.add_parser("report", help="quantile tables and histograms for a run")
    r.add_argument("run_dir")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, FormatError, InvalidParameterError, FileNotFoundError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DecompositionError, DegenerateDistributionError, FloatingPointError,
            np.linalg.LinAlgError, StickyHDPError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

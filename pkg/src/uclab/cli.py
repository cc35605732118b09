"""Command-line interface.

Subcommands: simulate, encode, decode, experiment, vc-bounds, fit.
Configuration comes from JSON files; most fields can be overridden by flags.
Exit status is 0 on success and 2 on any diagnosed error.
"""

import argparse
import json
import sys

import numpy as np

from .codec import (
    FirstStageCodebook,
    codec_config_from_dict,
    decode,
    default_vc_dim,
    encode,
    pack_descriptions,
    parse_description,
    prior_from_dict,
    unpack_descriptions,
)
from .harness import (
    ExperimentConfig,
    candidates_from_dict,
    emit_csv,
    emit_summary,
    envelope_from_prior,
    fit_rate_envelope,
    parse_csv,
    run_experiment,
)
from .rng import stream
from .sources import format_model_spec, parse_model_spec


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _codec_bundle(config_path: str):
    data = _load_json(config_path)
    config = codec_config_from_dict(data)
    reference = parse_model_spec(data["reference_model"]) if "reference_model" in data else None
    if reference is None:
        reference = config.prior.draw(stream(0, "reference"))
    candidates = candidates_from_dict(data.get("grid"), reference)
    return config, candidates


def cmd_simulate(args) -> int:
    model = parse_model_spec(args.model)
    values = model.sample_path(args.length, stream(args.seed, "path"))
    text = "\n".join(repr(float(v)) for v in values)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_encode(args) -> int:
    config, candidates = _codec_bundle(args.config)
    needed = config.memory_length + config.n
    if args.input:
        values = np.loadtxt(args.input, dtype=np.float64, ndmin=1)
        if values.shape[0] != needed:
            raise ValueError(
                f"input must hold memory+block = {needed} values, got {values.shape[0]}"
            )
    else:
        model = parse_model_spec(args.simulate)
        values = model.sample_path(needed, stream(args.seed, "path"))
    memory, block = values[: config.memory_length], values[config.memory_length :]
    cb = FirstStageCodebook(config.codebook_seed, config.prior)
    desc = encode(block, memory, cb, candidates, config, {})
    data = pack_descriptions([desc], config)
    with open(args.out, "wb") as handle:
        handle.write(data)
    print(f"wrote {len(data)} bytes ({desc.bit_length()} description bits) to {args.out}")
    return 0


def cmd_decode(args) -> int:
    config, _ = _codec_bundle(args.config)
    with open(args.infile, "rb") as handle:
        data = handle.read()
    cb = FirstStageCodebook(config.codebook_seed, config.prior)
    cache = {}
    for bits in unpack_descriptions(data, config):
        desc, consumed = parse_description(bits, cb, config, cache)
        if consumed != len(bits):
            raise ValueError("description has trailing bits")
        theta_hat, xhat = decode(desc, cb, config, cache)
        print(format_model_spec(theta_hat))
        print(" ".join(repr(float(v)) for v in xhat))
    return 0


def cmd_experiment(args) -> int:
    data = _load_json(args.config)
    if args.trials is not None:
        data["trials"] = args.trials
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_list is not None:
        data["n_list"] = [int(v) for v in args.n_list.split(",")]
    config = ExperimentConfig.from_dict(data)
    records = run_experiment(config)
    if args.out:
        emit_csv(records, args.out)
        print(f"wrote {len(records)} records to {args.out}")
    print(emit_summary(records), end="")
    return 0


def cmd_vc_bounds(args) -> int:
    prior = prior_from_dict({
        "family": args.family,
        **({"order": args.order} if args.order else {}),
        **({"states": args.states} if args.states else {}),
    })
    value = default_vc_dim(prior, args.n)
    print(f"family={args.family} n={args.n} vc_bound={value:.4f}")
    return 0


def cmd_fit(args) -> int:
    records = parse_csv(args.csv)
    prior = prior_from_dict({
        "family": records[0].family,
        **({"order": args.order} if args.order else {}),
        **({"states": args.states} if args.states else {}),
    })
    result = fit_rate_envelope(records, envelope_from_prior(prior), metric=args.metric)
    print(f"slope={result.slope:.6f} intercept={result.intercept:.6f}")
    for (n, median), residual in zip(result.medians, result.residuals):
        print(f"n={n} median={median:.6f} residual={residual:+.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uclab",
        description="joint universal lossy coding and source identification lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a stationary path from a model spec")
    p.add_argument("--model", required=True, help='e.g. "gaussian_iid mean=0 sigma=1"')
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output text file (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("encode", help="encode one block given its memory window")
    p.add_argument("--config", required=True, help="codec config JSON")
    p.add_argument("--input", help="text file with memory+block values, one per line")
    p.add_argument("--simulate", help="model spec to simulate input from")
    p.add_argument("--seed", type=int, default=0, help="seed for --simulate")
    p.add_argument("--out", required=True, help="output container file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a container file")
    p.add_argument("--config", required=True, help="codec config JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("experiment", help="run a redundancy/identification sweep")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-list", help="comma-separated block lengths")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("vc-bounds", help="print the decision-region VC bound")
    p.add_argument("--family", required=True,
                   choices=("gaussian_iid", "gaussian_ar", "hmm"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--order", type=int, help="AR order")
    p.add_argument("--states", type=int, help="HMM state count")
    p.set_defaults(func=cmd_vc_bounds)

    p = sub.add_parser("fit", help="fit the convergence envelope to a record CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--metric", default="d_n",
                   choices=("d_n", "redundancy", "lagrangian", "rate"))
    p.add_argument("--order", type=int)
    p.add_argument("--states", type=int)
    p.set_defaults(func=cmd_fit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"uclab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

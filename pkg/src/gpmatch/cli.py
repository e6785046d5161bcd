"""Command-line interface.

Subcommands: match, eval, toy, embed-bench, metrics, features.  All
randomness derives from --seed through named substreams, so every
subcommand is bit-deterministic in its file outputs.  Configuration
precedence is built-in defaults < config file (plain "key = value" lines)
< explicit flags.  Exit codes: 0 success, 1 runtime or numerical failure,
2 usage or configuration error.
"""

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench, decode, metrics
from .embedding import sample_basis
from .exceptions import ConfigError, EstimationFailure, FormatError, NumericalFailure
from .features import extract_dense_descriptors, load_feature_file, load_image, save_feature_file
from .geometry import clip_to_grid, load_warp_file, make_grid, save_warp_file
from .pipeline import PipelineConfig, match_feature_maps, match_pair

PIPELINE_FLAGS = {
    "regressor": str,
    "embedding": str,
    "dim": int,
    "inverse_length": float,
    "tau": float,
    "epsilon": float,
    "jitter": float,
    "strides": "intlist",
    "refine_strides": "intlist",
    "refine_window": int,
    "decode_height": int,
    "decode_width": int,
    "nms_radius_cells": float,
    "max_modes": int,
    "softargmax_window": int,
    "temperature": float,
    "coherence_radius": int,
    "coherence_flow_scale": float,
    "seed": int,
}


def _parse_value(kind, text):
    if kind == "intlist":
        return tuple(int(t) for t in str(text).split(",") if t != "")
    return kind(text)


def _add_pipeline_flags(parser):
    for name, kind in PIPELINE_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if kind == "intlist":
            parser.add_argument(flag, type=str, default=None, help="comma-separated list")
        else:
            parser.add_argument(flag, type=kind, default=None)
    parser.add_argument("--config", type=str, default=None, help="key = value config file")


def _read_config_file(path):
    values = {}
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values

def _build_pipeline_config(args):
    settings = {}
    if getattr(args, "config", None):
        for key, value in _read_config_file(args.config).items():
            if key not in PIPELINE_FLAGS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                settings[key] = _parse_value(PIPELINE_FLAGS[key], value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    for key, kind in PIPELINE_FLAGS.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            settings[key] = _parse_value(kind, flag_val) if kind == "intlist" else flag_val
    try:
        return PipelineConfig(**settings)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_pair_input(path):
    if path.endswith(".dkfm"):
        return ("features", load_feature_file(path))
    return ("image", load_image(path))


def cmd_match(args):
    cfg = _build_pipeline_config(args)
    qkind, query = _load_pair_input(args.query)
    skind, support = _load_pair_input(args.support)
    if qkind != skind:
        raise ConfigError("query and support must both be images or both be feature maps")
    if qkind == "features":
        if query.channels != support.channels:
            raise ConfigError(
                f"feature channel mismatch: query {query.channels}, support {support.channels}"
            )
        warp, scales, _ = match_feature_maps([(query, support)], cfg)
        result_warp = warp
    else:
        result_warp = match_pair(query, support, cfg).warp

    if args.clip:
        result_warp = clip_to_grid(result_warp)
    save_warp_file(result_warp, args.out)
    if args.matches:
        rows = decode.sparsify_topk(result_warp, args.topk)
        decode.save_matches(rows, args.matches)
    conf = result_warp.confidence
    print(f"warp {result_warp.height}x{result_warp.width} -> {args.out}")
    print(f"mean_confidence = {conf.mean():.6f}")
    print(f"high_confidence_fraction = {(conf > 0.5).mean():.6f}")
    return 0


def cmd_toy(args):
    cfg = bench.ToyConfig(n=args.n, seed=args.seed)
    samples = bench.toy_sample(cfg)
    result = bench.toy_run(samples, cfg=cfg)
    bench.toy_csv(result, samples, args.out)
    gp_w = bench.transition_width(result["x"], result["gp_mean"])
    at_w = bench.transition_width(result["x"], result["attn"])
    print(f"toy curves -> {args.out}")
    print(f"gp_transition_width = {gp_w:.9g}")
    print(f"attention_transition_width = {at_w:.9g}")
    return 0


def cmd_embed_bench(args):
    dims = [int(t) for t in args.dims.split(",")]
    pairs_rng = np.random.default_rng(args.seed)
    X = pairs_rng.uniform(-1.0, 1.0, (args.pairs, 2))
    Y = pairs_rng.uniform(-1.0, 1.0, (args.pairs, 2))
    target = np.exp(-args.inverse_length**2 * ((X - Y) ** 2).sum(-1) / 2.0)
    rows = []
    for dim in dims:
        devs = []
        for s in range(args.seeds):
            basis = sample_basis(args.basis, dim, args.inverse_length, args.seed + s)
            bx, by = basis.transform(X), basis.transform(Y)
            k = basis.kernel_factor_ * np.einsum("ij,ij->i", bx, by)
            devs.append(np.abs(k - target).mean())
        rows.append((dim, float(np.mean(devs))))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dim", "mean_abs_deviation"])
        for dim, dev in rows:
            writer.writerow([dim, f"{dev:.9g}"])
    for dim, dev in rows:
        print(f"D={dim}: mean_abs_deviation = {dev:.9g}")
    return 0


def cmd_eval(args):
    cfg = _build_pipeline_config(args)
    bcfg = bench.BenchmarkConfig(
        n_pairs=args.pairs,
        size=args.size,
        threads=args.threads,
        seed=args.seed if args.seed is not None else 0,
    )
    report = bench.run_benchmark(None, bcfg, cfg)
    os.makedirs(args.out, exist_ok=True)
    bench.report_csv(report, os.path.join(args.out, "pairs.csv"))
    text = bench.report_text(report)
    with open(os.path.join(args.out, "aggregates.txt"), "w") as f:
        f.write(text)
    print(text, end="")
    return 0


def cmd_metrics(args):
    pred = load_warp_file(args.pred)
    ref = load_warp_file(args.ref)
    pred = clip_to_grid(pred)
    mask = ref.confidence > 0.5
    support_shape = None
    if args.support_size:
        h, w = (int(t) for t in args.support_size.split(","))
        support_shape = (h, w)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    errs = metrics.pixel_errors(pred, ref, support_shape)[mask]
    for tau in thresholds:
        print(f"pck@{tau:g}px = {metrics.pck(pred, ref, mask, tau, support_shape):.9g}")
    print(f"aepe = {metrics.aepe(pred, ref, mask, support_shape):.9g}")
    if args.curve:
        ts = np.linspace(0.0, max(thresholds), args.curve_points)[1:]
        prec = metrics.precision_curve(errs, ts)
        with open(args.curve, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold_px", "precision"])
            for t, p in zip(ts, prec):
                writer.writerow([f"{t:.9g}", f"{p:.9g}"])
    return 0


def cmd_features(args):
    if args.action == "export":
        img = load_image(args.input)
        fm = extract_dense_descriptors(img, args.stride)
        save_feature_file(fm, args.out)
        print(f"{fm.height_cells}x{fm.width_cells}x{fm.channels} stride {fm.stride} -> {args.out}")
        return 0
    fm = load_feature_file(args.input)
    print(f"height_cells = {fm.height_cells}")
    print(f"width_cells = {fm.width_cells}")
    print(f"channels = {fm.channels}")
    print(f"stride = {fm.stride}")
    print(f"normalized = {int(fm.normalized)}")
    norms = np.linalg.norm(fm.matrix(), axis=1)
    print(f"unit_norm_fraction = {((np.abs(norms - 1.0) < 1e-5) | (norms == 0)).mean():.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gpmatch", description=__doc__)
    default_threads = int(os.environ.get("DKM_THREADS", "1"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="match a query/support pair into a DKWF warp")
    p.add_argument("query")
    p.add_argument("support")
    p.add_argument("--out", required=True, help="output DKWF path")
    p.add_argument("--matches", default=None, help="optional sparse match list path")
    p.add_argument("--topk", type=int, default=2000)
    p.add_argument("--clip", action="store_true", help="clip flow to the image grid")
    p.add_argument("--threads", type=int, default=default_threads)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("toy", help="run the 1-D toy regression comparison")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("embed-bench", help="empirical kernel deviation vs dimension")
    p.add_argument("--basis", choices=["fourier", "se", "cossq"], default="fourier")
    p.add_argument("--dims", default="256,1024,4096")
    p.add_argument("--inverse-length", type=float, default=1.0)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_bench)

    p = sub.add_parser("eval", help="synthetic homography benchmark")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=default_threads)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="score a predicted DKWF against a reference DKWF")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--thresholds", default="1,3,5", help="PCK thresholds in pixels")
    p.add_argument("--support-size", default=None, help="support image size as H,W pixels")
    p.add_argument("--curve", default=None, help="optional per-threshold precision CSV")
    p.add_argument("--curve-points", type=int, default=50)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("features", help="export or inspect DKFM feature maps")
    p.add_argument("action", choices=["export", "inspect"])
    p.add_argument("input")
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_features)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "features" and args.action == "export" and not args.out:
        parser.error("features export requires --out")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, NumericalFailure, EstimationFailure, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

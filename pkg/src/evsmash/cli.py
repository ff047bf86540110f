"""Command-line entry points.

    evsmash analyze --manifest runs/manifest.json --out results/
    evsmash analyze --lateral t1_lat.evs --rear t1_rear.evs \
        --lateral-mm-per-px 3.47
    evsmash synth --out runs/ --trials 20 --seed 7
    evsmash agree --pairs speeds.csv
    evsmash calibrate-thresholds --input t1_lat.evs --quiescent 0:450
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io as evio
from .agreement import PairedMeasurements, bland_altman, proportional_bias
from .config import load_config
from .events import Calibration
from .pipeline import analyze_trial, load_manifest, run_batch
from .swing import DetectorConfig, RateSeries, calibrate_thresholds
from .synth import BatchSpec, write_batch


def _cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    if args.manifest:
        manifest = load_manifest(args.manifest)
        batch = run_batch(manifest, cfg, out_dir=args.out,
                          progress=args.progress)
        if args.out is None:
            json.dump(batch.to_result_dict(), sys.stdout, indent=2,
                      sort_keys=True)
            print()
        else:
            print(f"{batch.n_analyzed}/{len(batch.reports)} trials analyzed; "
                  f"reports in {args.out}")
        return 0 if batch.n_analyzed > 0 else 1
    if not (args.lateral and args.rear):
        print("analyze needs --manifest or both --lateral and --rear",
              file=sys.stderr)
        return 2
    cal = Calibration(
        lateral_mm_per_px=args.lateral_mm_per_px,
        rear_mm_per_px=args.rear_mm_per_px,
    )
    report = analyze_trial(
        evio.read_stream(args.lateral),
        evio.read_stream(args.rear),
        cal,
        cfg,
        trial_id=Path(args.lateral).stem,
        ransac_seed=args.ransac_seed,
    )
    json.dump(report.to_result_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0 if report.analyzed else 1


def _cmd_synth(args) -> int:
    if args.spec:
        batch = BatchSpec.from_json(args.spec)
    else:
        batch = BatchSpec()
    if args.trials is not None:
        batch.n_trials = args.trials
    if args.seed is not None:
        batch.seed = args.seed
    if args.participants is not None:
        batch.participants = args.participants
    manifest_path = write_batch(batch, args.out)
    print(f"wrote {batch.n_trials} trials; manifest at {manifest_path}")
    return 0


def _read_pairs(path: str) -> PairedMeasurements:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    missing = {"ev", "ref"} - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
    ev = np.array([float(r["ev"]) for r in rows])
    ref = np.array([float(r["ref"]) for r in rows])
    part = np.array([r.get("participant") or "all" for r in rows])
    return PairedMeasurements(ev=ev, ref=ref, participant=part)


def _cmd_agree(args) -> int:
    pairs = _read_pairs(args.pairs)
    result = bland_altman(pairs, alpha=args.alpha)
    trend = proportional_bias(pairs)
    json.dump(
        {
            "bland_altman": result.to_json_dict(),
            "proportional_bias": {
                "slope": trend.slope,
                "intercept": trend.intercept,
                "r": trend.r,
                "p_value": trend.p_value,
            },
        },
        sys.stdout,
        indent=2,
        sort_keys=True,
    )
    print()
    return 0


def _cmd_calibrate(args) -> int:
    stream = evio.read_stream(args.input)
    try:
        t0_ms, t1_ms = (float(v) for v in args.quiescent.split(":"))
    except ValueError:
        print("--quiescent must look like 0:450 (ms)", file=sys.stderr)
        return 2
    rates = RateSeries.from_stream(stream)
    i0 = max(int((t0_ms * 1000 - rates.t0) // 500), 0)
    i1 = min(int((t1_ms * 1000 - rates.t0) // 500), len(rates.counts))
    if i1 <= i0:
        print("quiescent range does not overlap the recording",
              file=sys.stderr)
        return 2
    quiet = RateSeries(t0=rates.t0 + i0 * 500, counts=rates.counts[i0:i1])
    cfg = calibrate_thresholds(
        quiet,
        DetectorConfig(window_ms=args.window_ms, k_mean=args.k,
                       k_var=args.k),
    )
    json.dump(
        {
            "mean_threshold": cfg.mean_threshold,
            "var_threshold": cfg.var_threshold,
            "window_ms": cfg.window_ms,
            "k": args.k,
        },
        sys.stdout,
        indent=2,
        sort_keys=True,
    )
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsmash",
        description="Event-camera badminton smash analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the analysis chain")
    p.add_argument("--manifest", help="batch manifest JSON")
    p.add_argument("--lateral", help="lateral-view recording (single trial)")
    p.add_argument("--rear", help="rear-view recording (single trial)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", help="output directory (batch mode)")
    p.add_argument("--lateral-mm-per-px", type=float, default=3.47)
    p.add_argument("--rear-mm-per-px", type=float, default=None)
    p.add_argument("--ransac-seed", type=int, default=None)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("synth", help="generate a synthetic batch")
    p.add_argument("--spec", help="batch spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--participants", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("agree", help="agreement stats for paired values")
    p.add_argument("--pairs", required=True,
                   help="CSV with ev,ref[,participant] columns")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_agree)

    p = sub.add_parser("calibrate-thresholds",
                       help="swing thresholds from a quiescent segment")
    p.add_argument("--input", required=True, help="recording to calibrate on")
    p.add_argument("--quiescent", required=True, help="segment in ms, t0:t1")
    p.add_argument("--k", type=float, default=6.0)
    p.add_argument("--window-ms", type=float, default=100.0)
    p.set_defaults(func=_cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Subcommands cover the whole pipeline: `distort` and `synth-dataset` build
inputs, `capture` renders orbit sequences, `train`/`predict`/`evaluate`
run the model, `compare` produces the pairwise significance matrix, and
`gradcheck`/`selftest` verify the installation. The cache directory can
also be set through the ORBITPCQA_CACHE environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, synth
from .cloud_io import DistortionKind, DistortionSpec, apply_distortion, parse_ply, write_ply
from .config import PROFILES, RunConfig, load_run_config
from .harness import EvalReport, SplitKind
from .nn.gradcheck import gradient_check
from .nn.network import NetworkConfig, init_params, load_params, save_params
from .renderer import capture_sequences, save_sequence

_KIND_OF = {
    "downsample": DistortionKind.DOWNSAMPLE,
    "noise": DistortionKind.GEOMETRY_NOISE,
    "quantize": DistortionKind.COLOR_QUANTIZE,
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=PROFILES, default=None,
                   help="built-in configuration profile (default: desk)")
    p.add_argument("--config", default=None,
                   help="JSON config file; overrides --profile")


def _cache_dir(args) -> str:
    if getattr(args, "cache", None):
        return args.cache
    env = os.environ.get("ORBITPCQA_CACHE")
    if env:
        return env
    return str(Path.cwd() / "orbitpcqa_cache")


def _cmd_capture(args) -> int:
    cfg = load_run_config(args.profile, args.config)
    cloud = parse_ply(Path(args.infile).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq in capture_sequences(cloud, cfg.capture):
        save_sequence(seq, out / f"{seq.orbit.name}.pcv")
    print(f"wrote {out / 'A.pcv'}, {out / 'B.pcv'}, {out / 'C.pcv'} "
          f"({cfg.capture.frames_per_orbit} frames each)")
    return 0


def _cmd_distort(args) -> int:
    cloud = parse_ply(Path(args.infile).read_bytes())
    spec = DistortionSpec(kind=_KIND_OF[args.kind], level=args.level, seed=args.seed)
    distorted = apply_distortion(cloud, spec)
    Path(args.out).write_bytes(write_ply(distorted, format=args.format))
    print(f"wrote {args.out} ({distorted.count} points)")
    return 0


def _cmd_synth_dataset(args) -> int:
    levels = tuple(float(s) for s in args.levels.split(",")) if args.levels else \
        synth.DEFAULT_NOISE_LEVELS
    manifest = synth.generate_synthetic_dataset(
        args.out, contents=args.contents, points=args.points,
        noise_levels=levels, seed=args.seed,
    )
    entries = harness.load_manifest(manifest)
    print(f"wrote {manifest} ({len(entries)} entries, "
          f"{args.contents} contents x {len(levels)} levels)")
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.profile, args.config)
    entries = harness.load_manifest(args.manifest)
    index, rendered = harness.build_cache(entries, cfg.capture, _cache_dir(args))
    params, curve = harness.train_fold(entries, index, cfg, seed=args.seed)
    save_params(args.out, cfg.network, params)
    print(f"rendered {rendered} entries; epoch losses: "
          + ", ".join(f"{v:.5f}" for v in curve))
    print(f"wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    cfg = load_run_config(args.profile, args.config)
    entries = harness.load_manifest(args.manifest)
    _, params = load_params(args.params, cfg.network)
    index, _ = harness.build_cache(entries, cfg.capture, _cache_dir(args))
    rows = []
    for entry in entries:
        score = harness.predict_entry(params, entry, index, cfg)
        rows.append({"id": entry.id, "mos": entry.mos, "prediction": score})
        print(f"{entry.id}: {score:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["id", "mos", "prediction"])
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


def _report_csv(report: EvalReport, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "srcc", "plcc", "krcc", "rmse"])
        for f in report.folds:
            writer.writerow([f.fold, f.srcc, f.plcc, f.krcc, f.rmse])
        avg = report.averages
        writer.writerow(["average", avg["srcc"], avg["plcc"], avg["krcc"], avg["rmse"]])


def _cmd_evaluate(args) -> int:
    cfg = load_run_config(args.profile, args.config)
    entries = harness.load_manifest(args.manifest)
    kind = SplitKind(args.split)
    report = harness.run_experiment(
        entries, kind, cfg, seed=args.seed, cache_dir=_cache_dir(args),
        predictor=args.predictor, label=args.label,
        deterministic=args.deterministic,
    )
    out = Path(args.out)
    report.save(out)
    _report_csv(report, out.with_suffix(".csv"))
    with open(out.with_name(out.stem + "_predictions.csv"), "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "id", "mos", "prediction"])
        for s in report.samples:
            writer.writerow([s.fold, s.id, s.mos, s.prediction])
    avg = report.averages
    print(f"{report.label}: SRCC {avg['srcc']:.4f}  PLCC {avg['plcc']:.4f}  "
          f"KRCC {avg['krcc']:.4f}  RMSE {avg['rmse']:.4f}  "
          f"({len(report.folds)} folds, {report.wall_clock_seconds:.1f}s)")
    print(f"wrote {out}")
    return 0


def _cmd_compare(args) -> int:
    reports = [EvalReport.load(p) for p in args.reports]
    names, matrix = harness.compare_models(reports, alpha=args.alpha)
    print(harness.render_significance_text(names, matrix))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "column", "verdict", "p_value"])
            for name, row in zip(names, matrix):
                for col, verdict in zip(names, row):
                    writer.writerow([name, col, verdict.verdict.value, verdict.p_value])
        print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    config = NetworkConfig(stage_channels=(2, 2, 2, 2))
    rng = np.random.default_rng(args.seed)
    params = init_params(config, seed=args.seed, dtype=np.float64)
    x = rng.uniform(0.0, 1.0, size=(2, 3, 4, 8, 8))
    labels = rng.uniform(0.0, 1.0, size=2)
    worst = gradient_check(config, params, x, labels, eps=args.eps)
    ok = worst < args.tolerance
    print(f"max relative gradient error: {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


def _cmd_selftest(args) -> int:
    import tempfile

    from . import metrics
    from .nn.ops import conv3d_forward, mse_loss
    from .orbit_camera import CaptureConfig, OrbitId, orbit_positions, pose_at
    from .renderer import load_sequence as load_seq
    from .sampling import sample_eval_clip

    failures = 0

    def check(name: str, ok: bool) -> None:
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    radius = 2.0
    worst = 0.0
    for orbit in OrbitId:
        pos = orbit_positions(orbit, radius, 210)
        if orbit is OrbitId.A:
            res = np.abs(pos[:, 0] ** 2 + pos[:, 1] ** 2 - radius ** 2) + np.abs(pos[:, 2])
        elif orbit is OrbitId.B:
            res = np.abs(pos[:, 1] ** 2 + pos[:, 2] ** 2 - radius ** 2) + np.abs(pos[:, 0])
        else:
            res = np.abs((pos ** 2).sum(axis=1) - radius ** 2) + np.abs(pos[:, 0] + pos[:, 2])
        worst = max(worst, float(res.max()))
        for k in range(0, 210, 30):
            p = pose_at(orbit, pos[k], np.zeros(3))
            worst_dot = max(abs(p.forward @ p.up), abs(p.forward @ p.right),
                            abs(p.right @ p.up))
            worst = max(worst, worst_dot)
    check("orbit geometry residuals < 1e-9*R", worst < 1e-9 * radius)

    x = np.arange(24, dtype=np.float64).reshape(1, 1, 2, 3, 4)
    w = np.ones((1, 1, 1, 1, 1))
    y, _ = conv3d_forward(x, w, np.zeros(1))
    check("conv3d 1x1x1 identity", np.array_equal(y, x))

    loss, _ = mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0]))
    check("mse loss definitional value", abs(loss - 5.0) < 1e-15)

    vals = np.array([1.0, 2.0, 3.0, 4.0])
    check("perfect prediction metrics", (
        abs(metrics.srcc(vals, vals) - 1.0) < 1e-12
        and abs(metrics.krcc(vals, vals) - 1.0) < 1e-12
        and abs(metrics.plcc(vals, vals) - 1.0) < 1e-12
        and metrics.rmse(vals, vals) == 0.0
    ))

    idx = sample_eval_clip(210, 7, 30)
    check("eval clip covers frames 0..203 stride 7",
          len(idx) == 30 and idx[0] == 0 and idx[-1] == 203)

    from .cloud_io import PointCloud
    from .renderer import capture_sequences as cap
    rng = np.random.default_rng(1)
    cloud = PointCloud(points=rng.uniform(-1, 1, size=(50, 3)),
                       colors=rng.integers(0, 256, size=(50, 3)))
    cfg = CaptureConfig(image_width=32, image_height=32, crop_width=32,
                        crop_height=32, frames_per_orbit=3)
    seqs = cap(cloud, cfg)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "seq.pcv"
        save_sequence(seqs[0], path)
        loaded = load_seq(path)
        check("PCV round trip", np.array_equal(loaded.frames, seqs[0].frames))
    check("capture frame count", sum(s.frame_count for s in seqs) == 9)

    print("selftest:", "OK" if failures == 0 else f"{failures} failures")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbitpcqa",
        description="No-reference point cloud quality assessment from "
                    "orbit-captured video sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capture", help="render the three orbit sequences of a cloud")
    p.add_argument("--in", dest="infile", required=True, help="input PLY file")
    p.add_argument("--out", required=True, help="output directory for A/B/C.pcv")
    _add_config_args(p)
    p.set_defaults(func=_cmd_capture)

    p = sub.add_parser("distort", help="apply a synthetic distortion to a cloud")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=sorted(_KIND_OF), required=True)
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("ascii", "binary_le"), default="binary_le")
    p.set_defaults(func=_cmd_distort)

    p = sub.add_parser("synth-dataset", help="generate the synthetic desk-scale dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--contents", type=int, default=5)
    p.add_argument("--points", type=int, default=1800)
    p.add_argument("--levels", default=None,
                   help="comma-separated noise levels (fractions of the bounding radius)")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_synth_dataset)

    p = sub.add_parser("train", help="train on every manifest entry and save weights")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", required=True, help="output .pcnn parameters file")
    p.add_argument("--seed", type=int, default=0)
    _add_config_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score manifest entries with saved weights")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--params", required=True)
    p.add_argument("--out", default=None, help="optional predictions CSV")
    _add_config_args(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="cross-validated experiment with a full report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--split", choices=[k.value for k in SplitKind], default="loco")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--predictor", choices=harness.PREDICTORS, default="network")
    p.add_argument("--label", default=None)
    p.add_argument("--deterministic", action="store_true",
                   help="force fully sequential execution")
    _add_config_args(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="pairwise significance matrix over reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", default=None, help="optional matrix CSV")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("gradcheck", help="verify analytic gradients numerically")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("selftest", help="quick installation sanity checks")
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``supertraj {synth,build,cluster,metrics,render}``.

Exit codes: 0 on success, 1 on internal errors, 2 on bad input or configuration.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path


from . import __version__
from .clustering import ConfigError, label_volume, run_clustering
from .config import MODES, load_config
from .io import (FRAME_DIR, DimensionError, FormatError, InvalidDataError, ensure_dir, frame_name, load_dataset,
                 load_label_dir, read_image, read_labels, read_trajectories, save_dataset, write_image,
                 write_label_png, write_labels, write_trajectories)
from .metrics import evaluate, reports_to_csv
from .synthetic import PRESETS, generate_synthetic
from .trajectories import attach_edges, build_trajectories

log = logging.getLogger("supertraj")

USER_ERRORS = (ConfigError, FileNotFoundError, NotADirectoryError, DimensionError, FormatError,
               InvalidDataError, IndexError)


class UsageError(Exception):
    pass


def _add_build_flags(p):
    p.add_argument("--gamma", type=float, help="occlusion threshold on the consistency distance (1.5)")
    p.add_argument("--sigma", type=float, help="color normalizer in the consistency distance (20)")
    p.add_argument("--beta", type=float, help="edge weight exponent (4)")
    p.add_argument("--mode", choices=MODES, help="consistency measure: joint flow/color/edge or flow only")


def _add_cluster_flags(p):
    p.add_argument("-s", "--spacing", dest="s", type=int, help="seed spacing / superpixel size in pixels (16)")
    p.add_argument("-m", type=float, help="color compactness normalizer (10)")
    p.add_argument("--beta", type=float, help="edge weight exponent (4)")
    p.add_argument("--th", type=int, help="seed window threshold (ceil(s^2/2))")
    p.add_argument("--min-region", dest="min_region", type=int, help="small-region size in pixels (ceil(s^2/4))")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="outer iteration cap (10)")


def build_parser():
    parser = argparse.ArgumentParser(prog="supertraj", description="Temporal superpixels from dense trajectories.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="TOML file with pipeline parameters")
    parser.add_argument("--threads", type=int, help="worker cap (accepted; processing is single-threaded)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset with exact flows and ground truth")
    p.add_argument("preset", choices=PRESETS)
    p.add_argument("width", type=int)
    p.add_argument("height", type=int)
    p.add_argument("frames", type=int)
    p.add_argument("--motion", type=float, nargs=2, default=(2.0, 1.0), metavar=("DX", "DY"))
    p.add_argument("--motion2", type=float, nargs=2, default=(0.0, 0.0), metavar=("DX", "DY"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", type=Path, required=True)

    p = sub.add_parser("build", help="build trajectories from frames and flows")
    p.add_argument("data", type=Path, help="dataset directory (frames/, flow_fwd/, flow_bwd/, edges/)")
    p.add_argument("-o", "--out", type=Path, required=True, help="output .strj file")
    p.add_argument("--no-edges", action="store_true", help="ignore edges/ and use the Sobel fallback")
    p.add_argument("--report-dir", type=Path, help="write per-frame CSV and a diagnostics figure here")
    _add_build_flags(p)

    p = sub.add_parser("cluster", help="cluster trajectories into super-trajectories")
    p.add_argument("trajectories", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True, help="output directory")
    p.add_argument("--data", type=Path, help="dataset directory to sample edge maps from")
    _add_cluster_flags(p)

    p = sub.add_parser("metrics", help="score label rasters against ground truth, or sweep s")
    p.add_argument("--pred", type=Path, help="directory of predicted label PNGs")
    p.add_argument("--gt", type=Path, help="directory of ground-truth label PNGs")
    p.add_argument("--data", type=Path, help="dataset directory (sweep mode)")
    p.add_argument("--sweep", type=str, help="comma-separated spacings, e.g. 8,12,16,24")
    p.add_argument("--tol", type=int, default=1, help="boundary recall tolerance in pixels")
    p.add_argument("--json", type=Path, help="write the JSON report here")
    p.add_argument("--csv", type=Path, help="write CSV rows here")
    p.add_argument("--plot", type=Path, help="write a metric figure here (sweep mode)")
    _add_build_flags(p)
    p.add_argument("-m", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)

    p = sub.add_parser("render", help="render label overlays or average-color frames")
    p.add_argument("trajectories", type=Path)
    p.add_argument("--mode", choices=("overlay", "avgcolor"), default="overlay")
    p.add_argument("--labels", type=Path, help="STLB label file (overlay mode)")
    p.add_argument("--data", type=Path, help="dataset directory with frames/ (overlay mode)")
    p.add_argument("-o", "--out", type=Path, required=True)
    return parser


def _config(args, keys):
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides["threads"] = args.threads
    return load_config(args.config, overrides)


def _print_config(cfg):
    print(f"config: {cfg.describe()}")
    print(f"config digest: {cfg.digest()}")


# -- subcommands -------------------------------------------------------------------


def cmd_synth(args):
    seq = generate_synthetic(args.preset, args.width, args.height, args.frames, tuple(args.motion),
                             tuple(args.motion2), seed=args.seed)
    save_dataset(args.out, seq)
    F = len(seq.frames)
    print(f"wrote {args.out}: {F} frames, {F - 1} forward and {F - 1} backward flows, {F} ground-truth rasters")
    return 0


def _build(data, cfg, use_edges=True):
    frames, fwd, bwd, edges = load_dataset(data, use_edges=use_edges)
    res = build_trajectories(frames, fwd, bwd, edges, gamma=cfg.gamma, beta=cfg.beta, sigma=cfg.sigma,
                             mode=cfg.mode)
    return res, edges


def cmd_build(args):
    cfg = _config(args, ("gamma", "sigma", "beta", "mode"))
    _print_config(cfg)
    res, _ = _build(args.data, cfg, use_edges=not args.no_edges)
    trajs = res.trajectories
    write_trajectories(trajs, res.attributes, args.out)
    occ = res.occlusion.reshape(trajs.F, -1).mean(axis=1)
    occ[0] = 0.0  # frame 1 has no predecessor
    mean_len = float(trajs.length.mean()) if trajs.num_trajectories else 0.0
    print(f"trajectories: {trajs.num_trajectories}")
    print(f"mean length: {mean_len:.4f}")
    print("occluded fraction per frame: " + " ".join(f"{v:.4f}" for v in occ))
    if args.report_dir:
        rep = ensure_dir(args.report_dir)
        with open(rep / "build_frames.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "occluded_fraction", "spawned", "terminated"])
            for f in range(trajs.F):
                w.writerow([f + 1, f"{occ[f]:.6f}", int(res.spawned[f]), int(res.terminated[f])])
        from .plotting import plot_build_diagnostics

        plot_build_diagnostics(trajs.length, occ, rep / "build_diagnostics.png")
        print(f"report: {rep}")
    print(f"wrote {args.out}")
    return 0


def cmd_cluster(args):
    cfg = _config(args, ("s", "m", "beta", "th", "min_region", "max_iter"))
    _print_config(cfg)
    trajs, attrs = read_trajectories(args.trajectories)
    if args.data is not None:
        _, _, _, edges = load_dataset(args.data)
        if edges[0].shape != (trajs.H, trajs.W) or len(edges) != trajs.F:
            raise DimensionError("dataset does not match the trajectory file")
        attach_edges(trajs, attrs, edges)
    res = run_clustering(trajs, attrs, cfg.s, m=cfg.m, beta=cfg.beta, th=cfg.threshold,
                         min_region=cfg.region_size, max_iter=cfg.max_iter)
    out = ensure_dir(args.out)
    write_labels(res.labels, out / "labels.stlb")
    lab_dir = ensure_dir(out / "labels")
    for f, raster in enumerate(label_volume(trajs, res.labels), start=1):
        write_label_png(lab_dir / frame_name(f, "png"), raster)
    print(f"clusters: {res.n_labels}")
    print(f"iterations: {res.iterations}")
    print(f"disconnection: {res.disconnection_after} (before post-processing {res.disconnection_before})")
    if res.fallback:
        print(f"nearest-trajectory fallback: {res.fallback}")
    print(f"wrote {out}")
    return 0


def _sweep_values(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep list {text!r}") from None
    if not vals:
        raise ConfigError("empty sweep list")
    return vals


def cmd_metrics(args):
    if args.sweep:
        if args.data is None:
            raise UsageError("--sweep needs --data")
        cfg = _config(args, ("gamma", "sigma", "beta", "mode", "m", "max_iter"))
        _print_config(cfg)
        gt = load_label_dir(args.gt if args.gt else Path(args.data) / "gt")
        res, edges = _build(args.data, cfg)
        trajs = res.trajectories
        if gt.shape != (trajs.F, trajs.H, trajs.W):
            raise DimensionError(f"ground truth {gt.shape} does not match {(trajs.F, trajs.H, trajs.W)}")
        rows = []
        for s in _sweep_values(args.sweep):
            cl = run_clustering(trajs, res.attributes, s, m=cfg.m, beta=cfg.beta, max_iter=cfg.max_iter)
            rep = evaluate(label_volume(trajs, cl.labels), gt, tol=args.tol)
            rows.append(rep.csv_row(s=s))
        text = reports_to_csv(rows)
        sys.stdout.write(text)
        if args.csv:
            args.csv.write_text(text)
        if args.plot:
            from .plotting import plot_metric_sweep

            plot_metric_sweep(rows, args.plot)
            print(f"figure: {args.plot}")
        return 0

    if args.pred is None or args.gt is None:
        raise UsageError("need --pred and --gt (or --sweep with --data)")
    pred = load_label_dir(args.pred)
    gt = load_label_dir(args.gt)
    rep = evaluate(pred, gt, tol=args.tol)
    print(rep.to_json())
    if args.json:
        args.json.write_text(rep.to_json() + "\n")
    if args.csv:
        args.csv.write_text(reports_to_csv([rep.csv_row()]))
    return 0


def cmd_render(args):
    from .render import render_avgcolor, render_overlay

    trajs, attrs = read_trajectories(args.trajectories)
    out = ensure_dir(args.out)
    if args.mode == "avgcolor":
        colors = attrs.mean_color
        for f in range(1, trajs.F + 1):
            write_image(out / frame_name(f, "png"), render_avgcolor(trajs, colors, f))
    else:
        if args.labels is None or args.data is None:
            raise UsageError("overlay mode needs --labels and --data")
        labels = read_labels(args.labels)
        if len(labels) != trajs.num_trajectories:
            raise DimensionError(f"{len(labels)} labels for {trajs.num_trajectories} trajectories")
        vol = label_volume(trajs, labels)
        frame_dir = Path(args.data) / FRAME_DIR
        for f in range(1, trajs.F + 1):
            frame = read_image(frame_dir / frame_name(f, "png"))
            write_image(out / frame_name(f, "png"), render_overlay(frame, vol[f - 1]))
    print(f"wrote {trajs.F} frames to {out}")
    return 0


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "cluster": cmd_cluster, "metrics": cmd_metrics,
            "render": cmd_render}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except (UsageError, *USER_ERRORS) as exc:
        print(f"supertraj {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # argument values rejected by the library
        print(f"supertraj {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"supertraj {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: extract, track, train, eval, quantify, synth, viz, serve.

Every subcommand is deterministic pipeline glue: identical inputs and seed
produce identical output files. Failures exit nonzero with a one-line JSON
error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import (
    ConfigError,
    ContourTrackError,
    EmptyMaskError,
    NoLabelsError,
)
from .evaluation import (
    EvalReport,
    SparseLabels,
    denormalize_points,
    evaluate_video,
    normalize_points,
)
from .geometry import compute_normals, extract_contour, snap_phi
from .tracking import (
    TrackSet,
    chase_indices,
    pair_correspondences,
    quantify_velocity,
    save_velocity_png,
    track_sequence,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _load_weights(args):
    """Tracker for --method learned, None for mechanical."""
    if args.method == "mechanical":
        return None
    if args.checkpoint is None:
        raise ConfigError("--method learned requires --checkpoint")
    tracker = load_checkpoint(args.checkpoint)
    tracker.eval()
    return tracker


def _load_video(args, tracker):
    resize = args.image_size
    if tracker is not None and resize is None:
        resize = tracker.cfg.image_size
    return load_dataset(args.video, stride=args.stride, resize=resize)


def _contour_payload(contour) -> str:
    points = [[float(x), float(y)] for x, y in contour.points]
    return json.dumps(
        {"frame": contour.frame_index, "points": points}, indent=2, sort_keys=True
    ) + "\n"


def cmd_extract(args) -> int:
    ds = load_dataset(args.video, stride=args.stride, resize=args.image_size)
    out = Path(args.out) if args.out else Path(args.video) / "contours"
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for t, mask in enumerate(ds.masks):
        try:
            contour = extract_contour(mask, frame_index=t)
        except EmptyMaskError:
            print(
                json.dumps({"warning": "empty mask, frame skipped", "frame": t}),
                file=sys.stderr,
            )
            continue
        (out / f"{t:04d}.json").write_text(_contour_payload(contour))
        written += 1
    print(f"wrote {written} contour files to {out}")
    return 0


def cmd_track(args) -> int:
    tracker = _load_weights(args)
    ds = _load_video(args, tracker)
    trackset = track_sequence(
        ds.frames, ds.contours(), weights=tracker, method=args.method
    )
    out = Path(args.out) if args.out else Path(args.video) / "tracks.json"
    trackset.to_json(out)
    print(f"tracked {len(trackset)} trajectories over {trackset.n_frames} frames -> {out}")
    return 0


def cmd_train(args) -> int:
    overrides = _read_config(args.config)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.image_size is not None:
        overrides["image_size"] = args.image_size
    cfg = TrainConfig.from_mapping(overrides)
    pairs = []
    for video in args.videos:
        ds = load_dataset(video, stride=args.stride, resize=cfg.image_size)
        pairs.extend(ds.training_pairs())
    out = Path(args.out)
    result = train(pairs, cfg, checkpoint_dir=out)
    ckpt = save_checkpoint(result.tracker, out / "checkpoint.pt")
    result.log.to_csv(out / "training_log.csv")
    last = result.log.rows[-1]
    print(
        f"trained {cfg.total_iters} iterations on {len(pairs)} pairs, "
        f"final total loss {last['total']:.6f} -> {ckpt}"
    )
    return 0


def predict_label_tracks(labels: SparseLabels, contours, correspondences, image_shape):
    """Predicted normalized positions for each labeled point.

    Each point is snapped onto the contour of its first labeled frame and
    chased through the per-pair matches. Frames before that first label
    stay NaN.
    """
    pred = np.full((labels.n_frames, labels.n_points, 2), np.nan)
    present = labels.present()
    for j in range(labels.n_points):
        labeled = np.nonzero(present[:, j])[0]
        if labeled.size == 0:
            continue
        t0 = int(labeled[0])
        pred[t0, j] = labels.points[t0, j]
        if t0 >= len(contours) - 1:
            continue
        px = denormalize_points(labels.points[t0, j][None], image_shape)[0]
        i0 = int(snap_phi(px[None], contours[t0]).match[0])
        chain = chase_indices(correspondences, t0, i0)
        for k, t in enumerate(range(t0 + 1, labels.n_frames)):
            point = contours[t].points[chain[k + 1]]
            pred[t, j] = normalize_points(point[None], image_shape)[0]
    return pred


def cmd_eval(args) -> int:
    tracker = _load_weights(args)
    ds = _load_video(args, tracker)
    if ds.labels is None:
        raise NoLabelsError(f"no labels.csv under {args.video}")
    contours = ds.contours()
    correspondences = pair_correspondences(
        ds.frames, contours, weights=tracker, method=args.method
    )
    predictions = predict_label_tracks(
        ds.labels, contours, correspondences, ds.image_shape
    )
    normals = [compute_normals(c, m) for c, m in zip(contours, ds.masks)]
    scores = evaluate_video(
        predictions, ds.labels, contours, ds.image_shape, normals=normals
    )
    report = EvalReport(videos={ds.name: scores})
    out = Path(args.out) if args.out else Path(args.video) / "eval_report.json"
    report.to_json(out)
    print(report.to_markdown())
    print(f"report -> {out}")
    return 0


def cmd_quantify(args) -> int:
    tracker = _load_weights(args)
    ds = _load_video(args, tracker)
    contours = ds.contours()
    trackset = track_sequence(ds.frames, contours, weights=tracker, method=args.method)
    normals = [compute_normals(c, m) for c, m in zip(contours, ds.masks)]
    window = tuple(args.window) if args.window else (0, len(contours[0]))
    vmap = quantify_velocity(trackset, contours, normals, window)
    out = Path(args.out) if args.out else Path(args.video) / "quantify"
    out.mkdir(parents=True, exist_ok=True)
    vmap.to_csv(out / "velocity.csv")
    save_velocity_png(vmap, out / "velocity.png")
    print(f"velocity map {vmap.values.shape} -> {out}")
    return 0


def cmd_synth(args) -> int:
    overrides = _read_config(args.config)
    if args.seed is not None:
        overrides["texture_seed"] = args.seed
    if args.image_size is not None:
        overrides["image_size"] = args.image_size
    try:
        spec = SyntheticSpec(**overrides)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec field: {exc}") from exc
    dataset, truth = generate_synthetic(spec)
    out = Path(args.out)
    save_dataset(dataset, out)
    truth.to_json(out / "gt.json")
    print(f"generated {len(dataset)} frames at {spec.image_size} px -> {out}")
    return 0


def _save_pair_overlay(frame, contour_t, contour_t1, corr, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(frame, cmap="gray", vmin=0.0, vmax=1.0)
    pts = contour_t.points
    ax.scatter(
        pts[:, 0], pts[:, 1], c=np.arange(len(contour_t)), cmap="hsv", s=6, zorder=2
    )
    targets = contour_t1.points[corr.match]
    deltas = targets - pts
    ax.quiver(
        pts[:, 0],
        pts[:, 1],
        deltas[:, 0],
        deltas[:, 1],
        angles="xy",
        scale_units="xy",
        scale=1.0,
        color="white",
        width=0.004,
        zorder=3,
    )
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def cmd_viz(args) -> int:
    tracker = _load_weights(args)
    ds = _load_video(args, tracker)
    contours = ds.contours()
    correspondences = pair_correspondences(
        ds.frames, contours, weights=tracker, method=args.method
    )
    out = Path(args.out) if args.out else Path(args.video) / "viz"
    out.mkdir(parents=True, exist_ok=True)
    for t, corr in enumerate(correspondences):
        _save_pair_overlay(
            ds.frames[t], contours[t], contours[t + 1], corr, out / f"pair_{t:04d}.png"
        )
    print(f"wrote {len(correspondences)} overlay images to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    frontend = Path("frontend") / "dist"
    app = create_app(args.root, frontend_dir=frontend if frontend.is_dir() else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contourtrack",
        description="Cell contour tracking: extraction, training, inference, scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def io_flags(p, method=False):
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--stride", type=int, default=1, help="keep every k-th frame")
        p.add_argument("--image-size", type=int, help="resize frames and masks to this square size")
        if method:
            p.add_argument(
                "--method",
                choices=("learned", "mechanical"),
                default="learned",
                help="correspondence engine",
            )
            p.add_argument("--checkpoint", help="trained weights for --method learned")

    p = sub.add_parser("extract", help="write one contour JSON per frame")
    p.add_argument("video", help="video directory with frames/ and masks/")
    io_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("track", help="track a video into a TrackSet JSON")
    p.add_argument("video")
    io_flags(p, method=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("train", help="train the offset regressor")
    p.add_argument("videos", nargs="+", help="one or more video directories")
    p.add_argument("--config", help="JSON file of training config fields")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--out", required=True, help="run directory for checkpoints and log")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--image-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score tracking against labels.csv")
    p.add_argument("video")
    io_flags(p, method=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantify", help="export the normal-velocity map")
    p.add_argument("video")
    io_flags(p, method=True)
    p.add_argument(
        "--window",
        type=int,
        nargs=2,
        metavar=("START", "STOP"),
        help="half-open frame-0 contour index range, default the whole contour",
    )
    p.set_defaults(func=cmd_quantify)

    p = sub.add_parser("synth", help="generate a synthetic blob video")
    p.add_argument("--out", required=True, help="output video directory")
    p.add_argument("--config", help="JSON file of synthetic spec fields")
    p.add_argument("--seed", type=int, help="texture seed")
    p.add_argument("--image-size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("viz", help="arrow-overlay PNG per frame pair")
    p.add_argument("video")
    io_flags(p, method=True)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("serve", help="HTTP API for the labeling tool")
    p.add_argument("root", help="directory of video directories (or one video)")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ContourTrackError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": "FileNotFoundError", "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``raybundle <command> ...``.

Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .diffusion import DEFAULT_STOP_T, DEFAULT_T, add_noise, make_schedule
from .errors import RayBundleError
from .rays import camera_to_rays, pixel_grid
from .scenes import CaptureConfig, generate_turntable_scene, normalize_scene, scene_viewset
from .solvers import recover_camera

log = logging.getLogger("raybundle")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        doc = {"level": record.levelname.lower(), "msg": record.getMessage()}
        doc.update(getattr(record, "fields", {}))
        return json.dumps(doc, sort_keys=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_threads():
    n = os.environ.get("RAYBUNDLE_THREADS")
    if n:
        import torch
        torch.set_num_threads(max(1, int(n)))


def _schedule(args):
    return make_schedule(args.T, args.beta_start, args.beta_end)


def _add_schedule_flags(p):
    p.add_argument("--T", type=int, default=DEFAULT_T, help="diffusion timesteps")
    p.add_argument("--beta-start", type=float, default=None)
    p.add_argument("--beta-end", type=float, default=None)


def _capture_config(args) -> CaptureConfig:
    return CaptureConfig(
        n_cameras=args.n_cameras,
        radius_range=tuple(args.radius),
        elevation_range=tuple(args.elevation),
        azimuth_jitter=args.azimuth_jitter,
        focal_range=tuple(args.focal),
        landmark_count=args.landmarks,
        crop_jitter=args.crop_jitter,
    )


def _add_capture_flags(p, n_cameras=3):
    d = CaptureConfig()
    p.add_argument("--n-cameras", type=int, default=n_cameras)
    p.add_argument("--radius", type=float, nargs=2, default=d.radius_range)
    p.add_argument("--elevation", type=float, nargs=2, default=d.elevation_range)
    p.add_argument("--azimuth-jitter", type=float, default=d.azimuth_jitter)
    p.add_argument("--focal", type=float, nargs=2, default=d.focal_range)
    p.add_argument("--landmarks", type=int, default=d.landmark_count)
    p.add_argument("--crop-jitter", type=float, default=d.crop_jitter)


def cmd_gen(args):
    scene = generate_turntable_scene(_capture_config(args), args.seed)
    if args.normalize:
        scene = type(scene)(scene.landmarks, normalize_scene(scene.cameras), scene.seed, scene.crops)
    io.write_scene(args.out, scene)
    log.info("wrote scene", extra={"fields": {"path": str(args.out), "views": scene.n_views}})


def cmd_convert(args):
    cameras, crops = io.read_cameras(args.cameras, strict=not args.lenient)
    bundles = [camera_to_rays(c, pixel_grid(args.p, k)) for c, k in zip(cameras, crops)]
    io.write_bundles(args.out, bundles)


def cmd_recover(args):
    bundles = io.read_bundles(args.bundles, strict=not args.lenient)
    cameras = [recover_camera(b) for b in bundles]
    io.write_cameras(args.out, cameras, [b.grid.crop for b in bundles])


def cmd_noise(args):
    bundles = io.read_bundles(args.bundles, strict=not args.lenient)
    sched = _schedule(args)
    rng = np.random.default_rng(args.seed)
    x0 = np.stack([b.rays for b in bundles])
    xt = add_noise(x0, args.t, rng.standard_normal(x0.shape), sched)
    io.write_bundles(args.out, io.bundles_from_array(xt, [b.grid for b in bundles]))


def _load_model(path):
    import torch
    from .denoiser import ModelConfig, RayDenoiser

    state, meta = io.read_weights(path)
    model = RayDenoiser(ModelConfig(**meta["model"]))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in state.items()})
    model.eval()
    return model, meta


def save_model(path, model, train_config=None) -> None:
    meta = {"model": asdict(model.config)}
    if train_config is not None:
        meta["train"] = asdict(train_config)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    io.write_weights(path, state, meta)


def cmd_train(args):
    import torch
    from .denoiser import TrainConfig, train
    from .experiments import make_dataset

    torch.manual_seed(args.seed)
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, steps=args.steps, blocks=args.blocks,
                      width=args.width, heads=args.heads, seed=args.seed, mode=args.mode)
    capture = _capture_config(args)
    data = make_dataset(args.scenes, args.p, capture, seed_base=args.data_seed)
    sched = _schedule(args)
    logfile = open(args.log, "w") if args.log else None

    def record(row):
        if logfile:
            logfile.write(json.dumps({k: row[k] for k in ("step", "loss", "lr")}) + "\n")
        if row["step"] % 100 == 0:
            log.info("train", extra={"fields": {"step": row["step"], "loss": row["loss"]}})

    try:
        model = train(data, cfg, sched, log=record)
    finally:
        if logfile:
            logfile.close()
    save_model(args.out, model, cfg)


def _scene_inputs(args):
    scene = io.read_scene(args.scene, strict=not args.lenient)
    return scene, scene_viewset(scene, args.p)


def cmd_sample(args):
    from .denoiser import as_denoiser
    from .diffusion import sample, sample_many_views

    model, _ = _load_model(args.weights)
    scene, views = _scene_inputs(args)
    sched = make_schedule(model.config.T, args.beta_start, args.beta_end)
    den = as_denoiser(model)
    steps = []

    def dump(t, x_t, x0_pred):
        steps.append({"t": t, "x_t": x_t.tolist(), "x0_pred": x0_pred.tolist()})

    if args.batch_max and args.batch_max < scene.n_views:
        if args.dump_steps:
            raise RayBundleError("--dump-steps is not supported with --batch-max")
        rays = sample_many_views(den, views.features, views.coords, sched, args.batch_max,
                                 args.stop_t, args.seed)
    else:
        rays = sample(den, views.features, views.coords, sched, args.stop_t, args.seed,
                      callback=dump if args.dump_steps else None)
    io.write_bundles(args.out, io.bundles_from_array(rays, views.grids))
    if args.dump_steps:
        doc = {"version": "raybundle.trajectory/1", "p": args.p, "stop_t": args.stop_t, "steps": steps}
        Path(args.dump_steps).write_text(json.dumps(doc) + "\n")
    if args.cameras_out:
        io.write_cameras(args.cameras_out, [recover_camera(b) for b in io.bundles_from_array(rays, views.grids)])


def cmd_regress(args):
    from .denoiser import regress

    model, _ = _load_model(args.weights)
    _, views = _scene_inputs(args)
    rays = regress(views.features, views.coords, model)
    io.write_bundles(args.out, io.bundles_from_array(rays, views.grids))
    if args.cameras_out:
        io.write_cameras(args.cameras_out, [recover_camera(b) for b in io.bundles_from_array(rays, views.grids)])


def _pred_gt(args):
    pred, _ = io.read_cameras(args.pred, strict=not args.lenient)
    gt, _ = io.read_cameras(args.gt, strict=not args.lenient)
    return pred, gt


def cmd_eval(args):
    from .metrics import evaluate_cameras

    pred, gt = _pred_gt(args)
    report = evaluate_cameras(pred, gt).to_dict()
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_curves(args):
    from .metrics import CENTER_AUC_GRID, ROTATION_AUC_GRID, accuracy_curve, center_errors, pairwise_rotation_errors

    pred, gt = _pred_gt(args)
    rows = []
    rot = accuracy_curve(pairwise_rotation_errors(pred, gt), ROTATION_AUC_GRID)
    rows += [("rotation_deg", th, acc) for th, acc in zip(ROTATION_AUC_GRID, rot)]
    cen = accuracy_curve(center_errors(pred, gt), CENTER_AUC_GRID)
    rows += [("center_frac", th, acc) for th, acc in zip(CENTER_AUC_GRID, cen)]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["metric", "threshold", "accuracy"])
        for metric, th, acc in rows:
            w.writerow([metric, repr(float(th)), repr(float(acc))])
    finally:
        if args.out:
            out.close()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raybundle", description="Cameras as bundles of Plücker rays.")
    parser.add_argument("--json-logs", action="store_true", help="log line-delimited JSON to stderr")
    parser.add_argument("--lenient", action="store_true", help="ignore unknown fields in input files")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic turntable scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true", help="write cameras in the normalized frame")
    _add_capture_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="cameras -> ray bundles")
    p.add_argument("--cameras", required=True, help="camera or scene file")
    p.add_argument("--p", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("recover", help="ray bundles -> cameras")
    p.add_argument("--bundles", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("noise", help="forward-noise ray bundles to timestep t")
    p.add_argument("--bundles", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("train", help="train the toy denoiser on synthetic scenes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="weights file")
    p.add_argument("--log", help="line-delimited JSON training metrics")
    p.add_argument("--mode", choices=("diffusion", "regression"), default="diffusion")
    p.add_argument("--scenes", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=0, help="first scene seed")
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--heads", type=int, default=4)
    _add_capture_flags(p)
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, hlp in (("sample", cmd_sample, "early-stopped diffusion sampling"),
                            ("regress", cmd_regress, "single-pass ray regression")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--weights", required=True)
        p.add_argument("--scene", required=True)
        p.add_argument("--p", type=int, default=8)
        p.add_argument("--out", required=True, help="predicted bundles")
        p.add_argument("--cameras-out", help="also write recovered cameras")
        if name == "sample":
            p.add_argument("--seed", type=int, required=True)
            p.add_argument("--stop-t", type=int, default=DEFAULT_STOP_T)
            p.add_argument("--batch-max", type=int, default=0, help="mini-batch size for many views")
            p.add_argument("--dump-steps", help="write every backward step to this JSON file")
            p.add_argument("--beta-start", type=float, default=None)
            p.add_argument("--beta-end", type=float, default=None)
        p.set_defaults(func=func)

    for name, func, hlp in (("eval", cmd_eval, "metrics report as JSON"),
                            ("curves", cmd_curves, "accuracy-vs-threshold CSV")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--pred", required=True)
        p.add_argument("--gt", required=True)
        p.add_argument("--out")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    if args.json_logs:
        handler.setFormatter(_JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO if args.verbose or args.json_logs else logging.WARNING)
    _setup_threads()
    try:
        args.func(args)
    except RayBundleError as exc:
        print(f"raybundle {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"raybundle {args.command}: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"raybundle {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

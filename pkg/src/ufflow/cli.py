"""Command-line entry point: ``ufflow {train,estimate,eval,viz}``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; results are written only to the paths named on the command line.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .flow import predict_flow
from .imageio import flow_to_color, load_image, read_flo, save_image, to_grayscale, write_flo
from .params import ModelConfig, load_checkpoint, save_checkpoint
from .synth import SceneSpec, epe
from .trainer import EvalReport, TrainConfig, checkpoint_records, evaluate, resume, train

logger = logging.getLogger("ufflow")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ufflow", description="Unsupervised coarse-to-fine optical flow.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train from a key=value config file")
    p.add_argument("config", help="training config file")
    p.add_argument("--resume", metavar="CKPT", help="continue from a training checkpoint")
    p.add_argument("--out", metavar="CKPT", help="also write the final parameters here")

    p = sub.add_parser("estimate", help="estimate flow between two frames")
    p.add_argument("checkpoint")
    p.add_argument("frame1")
    p.add_argument("frame2")
    p.add_argument("output", help="output .flo file")
    p.add_argument("--config", help="training config whose architecture the checkpoint must match")

    p = sub.add_parser("eval", help="end-point error on synthetic scenes or a ground-truth directory")
    p.add_argument("checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", choices=("translate", "rotate", "two-layer"), help="synthetic scene kind")
    src.add_argument("--gt-dir", help="directory of NAME_1.pgm, NAME_2.pgm, NAME.flo triples")
    p.add_argument("--shift", type=_floats, default=(2.0, 1.0), help="u,v shift in pixels")
    p.add_argument("--angle", type=float, default=5.0, help="rotation angle in degrees")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count", type=int, default=8, help="number of synthetic scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=int, default=4)
    p.add_argument("--report", help="write a per-scene CSV report here")
    p.add_argument("--config", help="training config whose architecture the checkpoint must match")

    p = sub.add_parser("viz", help="colour-code a .flo file as a PPM image")
    p.add_argument("flow")
    p.add_argument("output")
    p.add_argument("--max-magnitude", type=float, default=None)
    return parser


def _expected_model(config_path: str | None) -> ModelConfig:
    if config_path is None:
        return ModelConfig()
    return TrainConfig.load(config_path).model


def _load_frame(path, channels: int) -> np.ndarray:
    image = load_image(path)
    if channels == 1:
        return to_grayscale(image)[None]
    return image


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config)
    if args.resume:
        result = resume(args.resume, config)
    else:
        result = train(config)
    if args.out:
        save_checkpoint(args.out, result.params, checkpoint_records(result.state, config.steps))
    if result.log:
        last = result.log[-1]
        logger.info("finished at step %d, loss %.6g", last["step"], last["loss_total"])
    return EXIT_OK


def cmd_estimate(args) -> int:
    params, _ = load_checkpoint(args.checkpoint, expected=_expected_model(args.config))
    channels = params.config.image_channels
    f1 = _load_frame(args.frame1, channels)
    f2 = _load_frame(args.frame2, channels)
    if f1.shape != f2.shape:
        raise ValueError(f"frames differ in size: {f1.shape[1:]} vs {f2.shape[1:]}")
    flow = predict_flow(params, f1[None], f2[None])[0]
    write_flo(args.output, flow)
    return EXIT_OK


def _gt_dir_report(params, gt_dir: Path, margin: int) -> EvalReport:
    rows = []
    for flo in sorted(gt_dir.glob("*.flo")):
        name = flo.stem
        f1 = _load_frame(gt_dir / f"{name}_1.pgm", params.config.image_channels)
        f2 = _load_frame(gt_dir / f"{name}_2.pgm", params.config.image_channels)
        flow = predict_flow(params, f1[None], f2[None])[0]
        rows.append({"scene": name, "kind": "file", "seed": "", "epe": epe(flow, read_flo(flo), margin)})
    if not rows:
        raise FileNotFoundError(f"{gt_dir}: no .flo ground truth files")
    return EvalReport(rows)


def cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint, expected=_expected_model(args.config))
    if args.gt_dir:
        report = _gt_dir_report(params, Path(args.gt_dir), args.margin)
    else:
        if args.count < 1:
            raise UsageError("eval: --count must be positive")
        if len(args.shift) != 2:
            raise UsageError("eval: --shift needs two components")
        scenes = [
            SceneSpec(kind=args.scene, seed=args.seed + i, size=args.size, shift=args.shift, angle=args.angle)
            for i in range(args.count)
        ]
        report = evaluate(params, scenes, margin=args.margin)
    if args.report:
        report.write_csv(args.report)
    print(f"mean EPE {report.mean:.6f} over {len(report.rows)} scene(s)", file=sys.stderr)
    return EXIT_OK


def cmd_viz(args) -> int:
    flow = read_flo(args.flow)
    save_image(args.output, flow_to_color(flow, args.max_magnitude))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "estimate": cmd_estimate, "eval": cmd_eval, "viz": cmd_viz}


def _thread_limit():
    value = os.environ.get("UFTSN_THREADS")
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"ufflow {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point: ``splatlight <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GLOBAL_DEFAULTS = {"seed": None, "threads": None, "verbose": False, "quiet": False, "json": False}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{p}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_extract_prior(args) -> int:
    from .imagecore import load_image, save_image
    from .prior import PriorConfig, extract_prior

    cfg = PriorConfig(beta=args.beta, gamma=args.gamma, sigma=args.sigma)
    img = load_image(args.input)
    if img.shape[2] != 3:
        raise ValueError(f"{args.input}: expected an RGB image, got {img.shape[2]} channel(s)")
    P = extract_prior(img, cfg)
    save_image(P, args.output)
    if args.preview:
        save_image(P, args.preview, bits=8)
    _emit(args, {"output": str(args.output), "mean": float(P.mean()), "shape": list(P.shape[:2])},
          f"wrote {args.output} (mean {P.mean():.4f})")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import SynthSpec, synth_dataset

    doc = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = SynthSpec.from_dict(doc)
    ds = synth_dataset(spec, args.out)
    manifest = Path(args.out) / "manifest.json"
    _emit(args, {"manifest": str(manifest), "views": len(ds.cameras)},
          f"wrote {len(ds.cameras)} views to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .scene import load_manifest
    from .trainer import TrainConfig, train

    ds = load_manifest(args.scene)
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.iterations is not None:
        doc["iterations"] = args.iterations
    if args.theta is not None:
        doc["theta"] = args.theta
    doc["threads"] = _threads(args)
    cfg = TrainConfig.from_dict(doc)
    cloud, _, _ = train(ds, cfg, args.out)
    ckpt = Path(args.out) / "checkpoint.ckpt"
    _emit(args, {"checkpoint": str(ckpt), "n_gaussians": len(cloud), "iterations": cfg.iterations},
          f"trained {cfg.iterations} steps, {len(cloud)} primitives -> {ckpt}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .imagecore import save_image
    from .pdm import pdm_forward
    from .render import RenderConfig, render
    from .scene import Camera, load_checkpoint

    cloud, weights, _ = load_checkpoint(args.checkpoint)
    doc = _read_json(args.camera)
    if "cameras" in doc:
        cams = doc["cameras"]
        if not 0 <= args.view < len(cams):
            raise ValueError(f"{args.camera}: view {args.view} out of range (0..{len(cams) - 1})")
        doc = cams[args.view]
    cam = Camera.from_dict(doc)
    out = render(cloud, cam, tuple(args.background), RenderConfig(threads=_threads(args)))
    prefix = str(args.out_prefix)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    written = {}
    for name in ("R0", "Pr", "Dr"):
        written[name] = f"{prefix}_{name}.png"
        save_image(getattr(out, name), written[name], bits=16)
    for name in ("Lr", "Ngs"):  # unbounded / signed: keep floats
        written[name] = f"{prefix}_{name}.pfm"
        save_image(getattr(out, name), written[name])
    if weights is not None:
        R = pdm_forward(out.R0, out.Ngs, weights).output
    else:
        R = out.R0
    written["R"] = f"{prefix}_R.png"
    save_image(R, written["R"], bits=16)
    _emit(args, {"outputs": written}, "\n".join(f"{k}: {v}" for k, v in written.items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .imagecore import load_image
    from .losses import psnr, ssim

    a = load_image(args.render)
    b = load_image(args.ref)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {args.render} {a.shape} vs {args.ref} {b.shape}")
    rec = {"render": str(args.render), "ref": str(args.ref), "psnr": psnr(a, b), "ssim": ssim(a, b)}
    # eval always speaks JSON lines
    print(json.dumps(rec, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; SUPPRESS keeps
    # the subparser from overwriting a value given at the top level
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--threads", type=int, help="tile worker threads (default: logical cores)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="errors only on stderr")
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")

    p = _Parser(prog="splatlight", description="Gaussian-splatting low-light enhancement toolkit.",
                parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("extract-prior", parents=[common], help="illumination-invariant structure prior")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True, help="output PFM")
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--preview", default=None, help="optional 8-bit PNG preview")
    s.set_defaults(func=cmd_extract_prior)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic degraded scene")
    s.add_argument("--spec", default=None, help="JSON synth spec (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="optimise a scene without references")
    s.add_argument("--scene", required=True, help="scene manifest.json")
    s.add_argument("--config", default=None, help="JSON training config")
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--theta", type=float, default=None, help="target exposure level")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", parents=[common], help="render all channels from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--camera", required=True, help="camera JSON, or a manifest with --view")
    s.add_argument("--view", type=int, default=0, help="camera index when --camera is a manifest")
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", parents=[common], help="PSNR / SSIM of a render against a reference")
    s.add_argument("--render", required=True)
    s.add_argument("--ref", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    from .scene import CheckpointError
    from .trainer import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.verbose and args.quiet:
        print("splatlight: --verbose and --quiet are mutually exclusive", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("splatlight: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"splatlight: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, CheckpointError, ValueError, OSError) as exc:
        print(f"splatlight: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

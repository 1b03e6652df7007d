"""Command line entry point: ``ghostfree <command> ...``.

Failures exit non-zero and print a single ``error code=<code> message=<text>``
line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import network, verification
from .errors import GhostfreeError
from .image_io import load_hdr, load_ldr, save_hdr, save_png, write_sidecar_ev
from .losses import psnr_l, psnr_mu
from .pipeline import FusionJob, run_job
from .radiometry import DEFAULT_GAMMA, DEFAULT_MU, TonemapConfig, tonemap_mu
from .structure_tensor import DEFAULT_RHO, st_map_of


class UsageError(GhostfreeError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_input_spec(spec: str) -> tuple[str, float | None]:
    """``path:ev`` or a bare ``path`` whose EV comes from its sidecar."""
    path, sep, tail = spec.rpartition(":")
    if sep:
        try:
            return path, float(tail)
        except ValueError:
            pass
    return spec, None


def cmd_fuse(args) -> None:
    job = FusionJob(
        inputs=[parse_input_spec(s) for s in args.inputs],
        params_path=args.params,
        output_path=args.out,
        tonemapped_path=args.tonemapped,
        gamma=args.gamma,
        tonemap=TonemapConfig(mu=args.mu, gamma=args.gamma),
    )
    run_job(job)


def cmd_st_map(args) -> None:
    img = load_ldr(args.input)
    save_png(st_map_of(img.data, args.rho), args.out)


def cmd_tonemap(args) -> None:
    save_png(tonemap_mu(load_hdr(args.input), TonemapConfig(mu=args.mu)).data, args.out)


def cmd_metrics(args) -> None:
    a, b = load_hdr(args.a), load_hdr(args.b)
    print(f"psnr_l={psnr_l(a, b):.6f}")
    print(f"psnr_mu={psnr_mu(a, b, TonemapConfig(mu=args.mu)):.6f}")


def cmd_init_params(args) -> None:
    cfg = network.NetworkConfig(args.channels, args.window, args.heads, args.mlp_ratio)
    network.save_params(network.init_params(cfg, args.seed), args.out)


def cmd_gradcheck(args) -> int:
    scene = verification.synth_scene(args.scene_seed, args.size)
    p = network.init_params(network.TINY_CONFIG, args.seed)
    report = verification.grad_check(p, scene, args.epsilon, args.samples, seed=args.seed)
    passed = report.max_rel_error < args.tolerance
    print(f"max_rel_error={report.max_rel_error:.6e}")
    print(f"worst_param_path={report.worst_param_path}")
    print(f"epsilon={report.epsilon:g}")
    print(f"checked={report.checked}")
    print(f"passed={'true' if passed else 'false'}")
    return 0 if passed else 1


def cmd_train_toy(args) -> None:
    scene = verification.synth_scene(args.scene_seed, args.size)
    params, curve = verification.train_toy(scene, args.steps, seed=args.seed)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["step", "loss", "mse", "st"])
        for step, (total, mse, st) in enumerate(curve):
            writer.writerow([step, f"{total:.9g}", f"{mse:.9g}", f"{st:.9g}"])
    finally:
        if out is not sys.stdout:
            out.close()
    if args.params_out:
        network.save_params(params, args.params_out)


def cmd_synth(args) -> None:
    scene = verification.synth_scene(args.seed, args.size, args.displacement)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for img in scene.ldr_stack:
        name = f"ldr_ev{img.ev:+g}.png"
        save_png(img.data, out / name, bits=16)
        write_sidecar_ev(out / name, img.ev)
        names.append(name)
    save_hdr(scene.gt, out / "gt.pfm")
    (out / "scene.json").write_text(
        json.dumps({"seed": scene.seed, "motion": scene.motion, "ldr": names, "gt": "gt.pfm"})
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ghostfree", description="Ghost-free HDR fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuse", help="fuse an exposure bracket into one HDR image")
    p.add_argument("--in", dest="inputs", action="append", required=True,
                   metavar="IMG[:EV]", help="LDR input; EV falls back to the JSON sidecar")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True, help="output PFM")
    p.add_argument("--tonemapped", help="optional mu-law tonemapped PNG")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("st-map", help="structure-tensor map of an LDR image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.set_defaults(func=cmd_st_map)

    p = sub.add_parser("tonemap", help="mu-law tonemap a PFM into a PNG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.set_defaults(func=cmd_tonemap)

    p = sub.add_parser("metrics", help="PSNR-l and PSNR-mu between two PFMs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("init-params", help="write freshly initialized network parameters")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--mlp-ratio", type=int, default=2)
    p.set_defaults(func=cmd_init_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="overfit the tiny network on a synthetic scene")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--csv", help="write the loss curve here instead of stdout")
    p.add_argument("--params-out")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="write a synthetic exposure bracket and its ground truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--displacement", type=int, default=2)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        status = args.func(args)
    except GhostfreeError as exc:
        message = " ".join(str(exc.message).split())
        print(f"error code={exc.code} message={json.dumps(message)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error code=io message={json.dumps(str(exc))}", file=sys.stderr)
        return 2
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())

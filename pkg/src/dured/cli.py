"""Command-line entry point: ``dured <command> [options]``.

Every command prints one JSON line describing its result on stdout. On
failure a single ``{"error": ..., "message": ...}`` line goes to stderr and
the exit status is nonzero (2 for bad arguments, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io as dio
from .core import ROWS_1D, FULL_2D, apply_forward, ifft2c
from .denoisers import DenoiserSpec
from .errors import DuredError
from .evaluation import contour_grid, degradation_curve, nmse, sampling_pattern_study, text_perturbation
from .phantoms import phantom_variants, shepp_logan
from .red import admm_red, red_cost, red_gradient
from .sampling import SamplingPDF, acceleration_factor, draw_mask, mu_for_acceleration
from .unrolled import DuredConfig, dured_forward, simulate_pairs, train

logger = logging.getLogger("dured")

DIM_MODE_NAMES = {"2d": FULL_2D, "1d": ROWS_1D, FULL_2D: FULL_2D, ROWS_1D: ROWS_1D}


class UsageError(DuredError):
    pass


def _positive(kind):
    def parse(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v

    return parse


def _nonneg_float(s):
    v = float(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {s}")
    return v


def _float_list(s):
    return [float(t) for t in str(s).split(",") if t.strip()]


def _int_list(s):
    return [int(t) for t in str(s).split(",") if t.strip()]


def _emit(payload):
    print(json.dumps(payload, sort_keys=True))


def _shape(args):
    h = args.height or args.size
    w = args.width or args.size
    return h, w


def _add_shape(p):
    p.add_argument("--size", type=_positive(int), default=64)
    p.add_argument("--height", type=_positive(int))
    p.add_argument("--width", type=_positive(int))


def _add_pdf(p):
    p.add_argument("--mu", type=_positive(float), help="PDF radius scale; overrides --accel")
    p.add_argument("--accel", type=_positive(float), default=3.0, help="target acceleration used to pick mu")
    p.add_argument("--alpha", type=_positive(float), default=1.0)
    p.add_argument("--dim-mode", choices=sorted(DIM_MODE_NAMES), default="1d")
    p.add_argument("--p-min", type=_positive(float), default=1e-4)


def _pdf(args, h, w):
    mode = DIM_MODE_NAMES[args.dim_mode]
    mu = args.mu if args.mu is not None else mu_for_acceleration(args.accel, args.alpha, h, w, mode)
    return SamplingPDF(mu, args.alpha, h, w, mode, args.p_min)


def _add_denoiser(p):
    p.add_argument("--denoiser", choices=["gaussian-blur", "median", "identity"], default="gaussian-blur")
    p.add_argument("--sigma", type=_positive(float), default=1.0)
    p.add_argument("--window", type=_positive(int), default=3)
    p.add_argument("--lam", type=_nonneg_float, default=0.5)
    p.add_argument("--beta", type=_positive(float), default=2.0)
    p.add_argument("--iters", type=_positive(int), default=50)
    p.add_argument("--cg-iters", type=_positive(int), default=15)
    p.add_argument("--v-update", choices=["gradient", "exact"], default="gradient")


def _denoiser(args):
    return DenoiserSpec(args.denoiser, sigma=args.sigma, size=args.window)


def _add_train_cfg(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=_positive(int), default=8)
    p.add_argument("--lr", type=_positive(float), default=1e-3)
    p.add_argument("--modules", type=_positive(int), default=2)
    p.add_argument("--cg-iters", type=_positive(int), default=15)
    p.add_argument("--depth", type=_positive(int), default=4)
    p.add_argument("--hidden", type=_positive(int), default=16)
    p.add_argument("--lambda-init", type=float, default=10.0)
    p.add_argument("--beta-init", type=float, default=10.0)
    p.add_argument("--per-module-nets", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--augment-repeats", type=_positive(int), default=1)


def _cfg(args):
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    return DuredConfig(
        n_modules=args.modules,
        cg_iters=args.cg_iters,
        lambda_init=args.lambda_init,
        beta_init=args.beta_init,
        depth=args.depth,
        hidden=args.hidden,
        shared_denoiser=not args.per_module_nets,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        augment=not args.no_augment,
        augment_repeats=args.augment_repeats,
    )


def cmd_phantom(args):
    h, w = _shape(args)
    if args.variant:
        img = phantom_variants(args.variant, args.seed, h, w, phase_mode=args.phase)[-1]
    else:
        img = shepp_logan(h, w, args.phase)
    dio.write_image(args.out, img)
    return {"out": args.out, "height": h, "width": w}


def cmd_mask(args):
    h, w = _shape(args)
    draw = draw_mask(_pdf(args, h, w), args.seed)
    dio.write_mask(args.out, draw)
    return {"out": args.out, "mu": draw.pdf.mu, "acceleration": acceleration_factor(draw)}


def cmd_sample(args):
    img = dio.read_image(args.image)
    draw = dio.read_mask(args.mask)
    y = apply_forward(draw.forward_model(), img)
    dio.write_image(args.out, y)
    out = {"out": args.out}
    if args.zf_out:
        dio.write_image(args.zf_out, ifft2c(y))
        out["zf_out"] = args.zf_out
    return out


def cmd_recon_red(args):
    y = dio.read_image(args.kspace)
    A = dio.read_mask(args.mask).forward_model()
    res = admm_red(y, A, _denoiser(args), args.lam, args.beta, args.iters, args.cg_iters, args.v_update, args.tol)
    dio.write_image(args.out, res.x)
    if args.history:
        dio.write_csv(args.history, ["iteration", "primal_residual"], [(i + 1, r) for i, r in enumerate(res.residuals)])
    return {"out": args.out, "iterations": res.iterations, "final_residual": res.residuals[-1]}


def _load_training_images(args, h, w):
    if args.images:
        imgs = [dio.read_image(p) for p in args.images]
        if any(im.shape != imgs[0].shape for im in imgs):
            raise UsageError("all --images must share one shape")
        return imgs
    return phantom_variants(args.n_train, args.seed, h, w)


def cmd_train(args):
    h, w = _shape(args)
    images = _load_training_images(args, h, w)
    h, w = images[0].shape
    pdf = _pdf(args, h, w)
    cfg = _cfg(args)
    dataset = simulate_pairs(images, pdf, args.seed + 1)
    result = train(dataset, cfg, args.seed, log_every=args.log_every)
    dio.write_weights(args.out, result.params, cfg, epoch=cfg.epochs, optimizer=args.save_optimizer)
    if args.loss_csv:
        dio.write_csv(args.loss_csv, ["epoch", "loss"], [(i + 1, v) for i, v in enumerate(result.epoch_losses)])
    return {
        "out": args.out,
        "epochs": cfg.epochs,
        "final_loss": result.epoch_losses[-1] if result.epoch_losses else None,
        "lambda": float(result.params.lam.value),
        "beta": float(result.params.beta.value),
        "clamp_events": result.clamp_events,
    }


def cmd_recon_net(args):
    params, cfg, _ = dio.read_weights(args.weights)
    cfg = cfg or DuredConfig()
    y = dio.read_image(args.kspace)
    A = dio.read_mask(args.mask).forward_model()
    dio.write_image(args.out, dured_forward(y, A, cfg, params))
    return {"out": args.out}


def cmd_eval(args):
    gt = dio.read_image(args.gt)
    recon = dio.read_image(args.recon)
    if args.from_kspace:
        recon = ifft2c(recon)
    value = nmse(gt, recon)
    if args.csv:
        dio.write_csv(args.csv, ["gt", "recon", "nmse"], [(args.gt, args.recon, value)])
    return {"nmse": value}


def cmd_contour(args):
    y = dio.read_image(args.kspace)
    A = dio.read_mask(args.mask).forward_model()
    f = _denoiser(args)
    if args.x:
        x_hat = dio.read_image(args.x)
    else:
        x_hat = admm_red(y, A, f, args.lam, args.beta, args.iters, args.cg_iters, args.v_update).x
    grid = contour_grid(
        x_hat,
        lambda x: red_cost(x, y, A, f, args.lam),
        args.seed,
        args.extent,
        args.grid_n,
        gradient=lambda x: red_gradient(x, y, A, f, args.lam),
    )
    rows = []
    for i, a in enumerate(grid.offsets):
        for j, b in enumerate(grid.offsets):
            rows.append((float(a), float(b), float(grid.values[i, j]), float(grid.grad_a[i, j]), float(grid.grad_b[i, j])))
    dio.write_csv(args.out, ["a", "b", "cost", "grad_a", "grad_b"], rows)
    finite = np.where(np.isfinite(grid.values), grid.values, np.inf)
    return {
        "out": args.out,
        "center_cost": grid.center,
        "center_is_min": bool(grid.center <= finite.min()),
        "inward_fraction": grid.boundary_inward_fraction(),
    }


def _recon_fn(args, A):
    if args.method == "net":
        if not args.weights:
            raise UsageError("--method net needs --weights")
        params, cfg, _ = dio.read_weights(args.weights)
        cfg = cfg or DuredConfig()
        return lambda img: dured_forward(apply_forward(A, img), A, cfg, params)
    f = _denoiser(args)
    return lambda img: admm_red(apply_forward(A, img), A, f, args.lam, args.beta, args.iters, args.cg_iters).x


def cmd_perturb(args):
    img = dio.read_image(args.image)
    A = dio.read_mask(args.mask).forward_model()
    recon = _recon_fn(args, A)
    if args.stencil:
        stencil = dio.read_pgm(args.stencil) > 127
        perturbed = text_perturbation(img, stencil, args.amplitude)
        out = recon(perturbed)
        if args.perturbed_out:
            dio.write_image(args.perturbed_out, perturbed)
        if args.recon_out:
            dio.write_image(args.recon_out, out)
        return {"nmse_vs_perturbed": nmse(perturbed, out), "nmse_vs_clean": nmse(img, out)}
    curve = degradation_curve(recon, img, args.budgets, args.trials, args.seed)
    dio.write_csv(
        args.out, ["budget", "l1_norm", "nmse", "baseline_nmse"],
        [(c.budget, float(np.sum(np.abs(c.r))), c.degradation, c.baseline) for c in curve],
    )
    return {"out": args.out, "degradation": [c.degradation for c in curve]}


def cmd_study(args):
    h, w = _shape(args)
    images = phantom_variants(args.n_train + args.n_test, args.seed, h, w)
    pdf = _pdf(args, h, w)
    rows = sampling_pattern_study(args.patterns, _cfg(args), images[: args.n_train], images[args.n_train :], pdf, args.seed)
    dio.write_csv(
        args.out, ["n_patterns", "nmse_mean", "nmse_std", "zero_filled_nmse"],
        [(r["n_patterns"], r["nmse_mean"], r["nmse_std"], r["zero_filled_nmse"]) for r in rows],
    )
    return {"out": args.out, "rows": [{k: r[k] for k in ("n_patterns", "nmse_mean")} for r in rows]}


def cmd_view(args):
    dio.export_viewable(args.image, args.out)
    return {"out": args.out}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dured", description="Unsupervised unrolled RED reconstruction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, seed_required=True, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="key=value file; flags override its values")
        p.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        p.set_defaults(func=fn)
        return p

    p = command("phantom", cmd_phantom, seed_required=False, help="write a synthetic phantom")
    _add_shape(p)
    p.add_argument("--phase", choices=["none", "smooth"], default="smooth")
    p.add_argument("--variant", type=int, default=0, help="0 = base phantom, k > 0 = k-th random variant")
    p.add_argument("--out", required=True)

    p = command("mask", cmd_mask, help="draw a variable-density mask")
    _add_shape(p)
    _add_pdf(p)
    p.add_argument("--out", required=True)

    p = command("sample", cmd_sample, seed_required=False, help="simulate an undersampled acquisition")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True, help="measured k-space")
    p.add_argument("--zf-out", help="also write the zero-filled image")

    p = command("recon-red", cmd_recon_red, seed_required=False, help="ADMM-RED with a fixed denoiser")
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    _add_denoiser(p)
    p.add_argument("--tol", type=_nonneg_float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--history")

    p = command("train", cmd_train, help="train the unrolled network on simulated pairs")
    _add_shape(p)
    _add_pdf(p)
    _add_train_cfg(p)
    p.add_argument("--n-train", type=_positive(int), default=32)
    p.add_argument("--images", nargs="*", help="CIMG1 ground-truth images instead of phantoms")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--save-optimizer", action="store_true")
    p.add_argument("--log-every", type=int, default=0)

    p = command("recon-net", cmd_recon_net, seed_required=False, help="reconstruct with trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = command("eval", cmd_eval, seed_required=False, help="nMSE of a reconstruction")
    p.add_argument("--gt", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--from-kspace", action="store_true", help="--recon holds k-space; zero-fill it first")
    p.add_argument("--csv")

    p = command("contour", cmd_contour, help="RED cost on a random 2D slice")
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--x", help="point to scan around; default runs ADMM-RED")
    _add_denoiser(p)
    p.add_argument("--extent", type=_positive(float), default=0.1)
    p.add_argument("--grid-n", type=int, default=21)
    p.add_argument("--out", required=True)

    p = command("perturb", cmd_perturb, help="stability probes")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--method", choices=["red", "net"], default="red")
    p.add_argument("--weights")
    _add_denoiser(p)
    p.add_argument("--budgets", type=_float_list, default=[0.0, 1.0, 2.0, 4.0])
    p.add_argument("--trials", type=_positive(int), default=8)
    p.add_argument("--stencil", help="8-bit PGM; pixels > 127 get --amplitude added")
    p.add_argument("--amplitude", type=float, default=0.2)
    p.add_argument("--perturbed-out")
    p.add_argument("--recon-out")
    p.add_argument("--out")

    p = command("study", cmd_study, help="test error versus number of training patterns")
    _add_shape(p)
    _add_pdf(p)
    _add_train_cfg(p)
    p.add_argument("--patterns", type=_int_list, default=[2, 100])
    p.add_argument("--n-train", type=_positive(int), default=32)
    p.add_argument("--n-test", type=_positive(int), default=8)
    p.add_argument("--out", required=True)

    p = command("view", cmd_view, seed_required=False, help="export |image| as an 8-bit PGM")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    return parser


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config`` so explicit flags win."""
    path = _config_path(argv)
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if path is None or command not in subparsers:
        return parser.parse_args(argv)
    subparser = subparsers[command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in dio.read_config(path).items():
        if key not in known or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for command {command}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("*", "+"):
            defaults[key] = raw.split()
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise UsageError(f"config key {key}: {raw!r} is not one of {sorted(action.choices)}")
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        if exc.code:
            print(json.dumps({"error": "UsageError", "message": "invalid arguments"}), file=sys.stderr)
        return int(exc.code or 0)
    except (UsageError, DuredError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        result = args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    except (DuredError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    _emit({"command": args.command, **result})
    return 0


if __name__ == "__main__":
    sys.exit(main())

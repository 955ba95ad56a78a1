"""Command-line surface: one subcommand per experiment protocol.

Every run writes its artifacts under --out together with a manifest
(config, seed, artifact hashes). Exit codes: 0 success, 1 validation
failure, 2 runtime failure (NaN/divergence).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, fileio, study
from . import gram_geometry as gg
from .flow import FlowField, VideoSequence, synthetic_scene, temporal_loss
from .metrics import instability, patch_stability, timing
from .perceptual import (DEFAULT_STYLE_TAPS, FeatureNet, image_loss,
                         precompute_style_grams)
from .stylizer import (LossWeights, RecurrentStylizer, StylizerConfig, TrainConfig,
                       stylize_image_optim, stylize_video, stylize_video_optim, train)
from .tensor import Tensor, finite_difference_check
from .study import StudyConfig


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _feature_net(args):
    if getattr(args, "feature_weights", None):
        return checkpoint.load_feature_net(args.feature_weights)
    return FeatureNet(seed=args.feature_seed)


def _write_manifest(out, args, artifacts, exclude_hash=()):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    fileio.write_manifest(out, config, artifacts, exclude_hash=exclude_hash)


# ---- sequence directory layout -------------------------------------------

def write_sequence(out, seq):
    names = []
    for t, frame in enumerate(seq.frames):
        name = f"frame_{t:03d}.ppm"
        fileio.write_image(out / name, frame)
        names.append(name)
    for t in range(1, len(seq)):
        if seq.flows is not None:
            name = f"flow_{t:03d}.flo"
            fileio.write_flo(out / name, seq.flows[t - 1])
            names.append(name)
        if seq.masks is not None:
            name = f"mask_{t:03d}.pgm"
            fileio.write_image(out / name, seq.masks[t - 1])
            names.append(name)
        if seq.backward_flows is not None:
            name = f"bflow_{t:03d}.flo"
            fileio.write_flo(out / name, seq.backward_flows[t - 1])
            names.append(name)
    if seq.fg_masks is not None:
        for t, m in enumerate(seq.fg_masks):
            name = f"fg_{t:03d}.pgm"
            fileio.write_image(out / name, m)
            names.append(name)
    return names


def read_sequence(path):
    path = Path(path)
    frames = sorted(path.glob("frame_*.ppm"))
    if not frames:
        raise fileio.FormatError(f"no frame_*.ppm files in {path}")
    t = len(frames)
    seq_frames = [fileio.read_image(f) for f in frames]

    def series(pattern, reader, count):
        files = sorted(path.glob(pattern))
        if not files:
            return None
        if len(files) != count:
            raise fileio.FormatError(f"expected {count} files for {pattern}, found {len(files)}")
        return [reader(f) for f in files]

    return VideoSequence(
        seq_frames,
        flows=series("flow_*.flo", fileio.read_flo, t - 1),
        masks=series("mask_*.pgm", fileio.read_image, t - 1),
        backward_flows=series("bflow_*.flo", fileio.read_flo, t - 1),
        fg_masks=series("fg_*.pgm", fileio.read_image, t),
    )


# ---- subcommands ---------------------------------------------------------

def cmd_check_grads(args):
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    net = _feature_net(args)
    rows = []

    def check(name, fn, tensors):
        err = finite_difference_check(fn, tensors, rng=rng)
        rows.append((name, err, "pass" if err < 1e-4 else "FAIL"))

    from . import tensor as T
    x = Tensor(rng.random((2, 5, 5)), requires_grad=True)
    w = Tensor(0.3 * rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    b = Tensor(0.1 * rng.standard_normal(3), requires_grad=True)
    check("conv2d", lambda x, w, b: T.sum_all(T.square(T.conv2d(x, w, b, 1, 1))), [x, w, b])
    xn = Tensor(rng.random((2, 4, 4)), requires_grad=True)
    check("instance_norm", lambda x: T.sum_all(T.square(T.instance_norm(x))), [xn])
    style = np.clip(rng.random((3, 8, 8)), 0, 1)
    content = np.clip(rng.random((3, 8, 8)), 0, 1)
    grams = precompute_style_grams(net, Tensor(style), DEFAULT_STYLE_TAPS)
    p = Tensor(rng.random((3, 8, 8)), requires_grad=True)
    check("image_loss", lambda p: image_loss(net, p, Tensor(content), grams, 1.0, 10.0), [p])
    prev = Tensor(rng.random((1, 4, 4)), requires_grad=True)
    cur = Tensor(rng.random((1, 4, 4)), requires_grad=True)
    fl = FlowField(0.5 * rng.standard_normal((4, 4)), 0.5 * rng.standard_normal((4, 4)))
    mask = rng.random((4, 4))
    check("temporal_loss", lambda a, b: temporal_loss(a, b, fl, mask), [prev, cur])
    fileio.write_csv(out / "grad_checks.csv", ["op", "max_rel_error", "status"], rows)
    _write_manifest(out, args, ["grad_checks.csv"])
    return 0 if all(r[2] == "pass" for r in rows) else 2


def cmd_theorem_verify(args):
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    ok = True
    for trial in range(args.trials):
        phi_s = rng.standard_normal((args.c, args.hw))
        phi_p = gg.orbit_sample(phi_s, seed=int(rng.integers(2 ** 31)))
        j = gg.objective(phi_p, phi_s).item()
        gram_norm_sq = float(np.sum((phi_s @ phi_s.T) ** 2))
        tol = 1e-10 * max(1.0, gram_norm_sq)
        status = j <= tol
        ok = ok and status
        rows.append((trial, j, tol, "pass" if status else "FAIL"))
    fileio.write_csv(out / "theorem_trials.csv", ["trial", "objective", "tolerance", "status"], rows)
    _write_manifest(out, args, ["theorem_trials.csv"])
    return 0 if ok else 2


def cmd_trace(args):
    out = _out_dir(args)
    net = _feature_net(args)
    style = fileio.read_image(args.style)
    rows = gg.trace_report(Tensor(style), net, DEFAULT_STYLE_TAPS)
    fileio.write_csv(out / "trace.csv", ["tap", "trace", "radius"],
                     [(r["tap"], r["trace"], r["radius"]) for r in rows])
    _write_manifest(out, args, ["trace.csv"])
    return 0


def cmd_stylize_image(args):
    out = _out_dir(args)
    net = _feature_net(args)
    content = fileio.read_image(args.content)
    style = fileio.read_image(args.style)
    grams = precompute_style_grams(net, Tensor(style), DEFAULT_STYLE_TAPS)
    result, history = stylize_image_optim(net, content, grams, args.lambda_c,
                                          args.lambda_s, args.iters, args.lr)
    fileio.write_image(out / "stylized.ppm", result)
    fileio.write_csv(out / "loss_history.csv", ["iter", "loss"],
                     list(enumerate(history)))
    _write_manifest(out, args, ["stylized.ppm", "loss_history.csv"])
    return 0


def cmd_stylize_video_optim(args):
    out = _out_dir(args)
    net = _feature_net(args)
    seq = read_sequence(args.frames_dir)
    style = fileio.read_image(args.style)
    grams = precompute_style_grams(net, Tensor(style), DEFAULT_STYLE_TAPS)
    frames = stylize_video_optim(net, seq, grams, args.lambda_c, args.lambda_s,
                                 args.lambda_t, args.iters, args.lr)
    names = []
    for t, fr in enumerate(frames):
        name = f"stylized_{t:03d}.ppm"
        fileio.write_image(out / name, fr)
        names.append(name)
    _write_manifest(out, args, names)
    return 0


def cmd_gen_scene(args):
    out = _out_dir(args)
    seq = synthetic_scene(args.kind, {k: v for k, v in
                                      (("sigma", args.sigma), ("dx", args.dx),
                                       ("dy", args.dy)) if v is not None
                                      and _param_applies(args.kind, k)},
                          T_frames=args.frames, h=args.height, w=args.width,
                          seed=args.seed)
    names = write_sequence(out, seq)
    _write_manifest(out, args, names)
    return 0


def _param_applies(kind, key):
    return {"static-noise": {"sigma"},
            "global-translate": {"dx", "dy"},
            "moving-square": {"dx", "dy"}}[kind] >= {key}


def _arch_from_args(args):
    widths = tuple(int(v) for v in args.widths.split(","))
    if len(widths) != 3:
        raise fileio.FormatError("--widths must be three comma-separated ints")
    return StylizerConfig(widths=widths, n_residual=args.n_residual)


def cmd_train(args):
    out = _out_dir(args)
    net = _feature_net(args)
    style = fileio.read_image(args.style)
    if args.init_weights:
        model = checkpoint.load_model(args.init_weights)
    else:
        model = RecurrentStylizer(_arch_from_args(args), seed=args.seed)
    seqs = [read_sequence(d) for d in args.frames_dir]
    if args.phase == "image-pretrain":
        dataset = [f for s in seqs for f in s.frames]
    else:
        dataset = seqs
    tc = TrainConfig(phase=args.phase, epochs=args.epochs,
                     steps_per_epoch=args.steps_per_epoch, bptt_steps=args.bptt_steps,
                     lr=args.lr, flips=not args.no_flips, seed=args.seed,
                     weights=LossWeights(args.lambda_c, args.lambda_s, args.lambda_t))
    history = train(model, dataset, tc, net, style)
    checkpoint.save_model(out / "model.gslw", model)
    fileio.write_csv(out / "loss_history.csv", ["epoch", "mean_loss"],
                     list(enumerate(history)))
    _write_manifest(out, args, ["model.gslw", "loss_history.csv"])
    return 0


def cmd_stylize_video(args):
    out = _out_dir(args)
    model = checkpoint.load_model(args.weights)
    seq = read_sequence(args.frames_dir)
    frames = stylize_video(model, seq)
    names = []
    for t, fr in enumerate(frames):
        name = f"stylized_{t:03d}.ppm"
        fileio.write_image(out / name, fr)
        names.append(name)
    _write_manifest(out, args, names)
    return 0


def cmd_eval_instability(args):
    out = _out_dir(args)
    model = checkpoint.load_model(args.weights)
    rows = []
    for d in args.frames_dir:
        seq = read_sequence(d)
        rows.append((d, instability(stylize_video(model, seq))))
    fileio.write_csv(out / "instability.csv", ["sequence", "instability"], rows)
    _write_manifest(out, args, ["instability.csv"])
    return 0


def _study_config(args):
    return StudyConfig(seed=args.seed, image_epochs=args.epochs,
                       video_epochs=args.epochs, steps_per_epoch=args.steps_per_epoch,
                       n_scenes=args.n_scenes)


def cmd_eval_trace_study(args):
    out = _out_dir(args)
    res = study.run_trace_study(_study_config(args))
    fileio.write_csv(out / "trace_instability.csv",
                     ["style", "tap", "trace", "instability"],
                     [(r["style"], r["tap"], r["trace"], r["instability"])
                      for r in res["rows"]])
    fileio.write_csv(out / "spearman.csv", ["tap", "rho"],
                     [(tap, "degenerate" if rho is None else rho)
                      for tap, rho in res["correlations"].items()])
    _write_manifest(out, args, ["trace_instability.csv", "spearman.csv"])
    return 0


def cmd_eval_distortion(args):
    out = _out_dir(args)
    image_model = checkpoint.load_model(args.baseline_weights)
    tuned = checkpoint.load_model(args.weights)
    cfg = StudyConfig(seed=args.seed)
    res = study.run_distortion_comparison(image_model, tuned, cfg,
                                          n_patches=args.n_patches)
    rows = []
    for kind, data in res.items():
        for i, m in enumerate(data["magnitude"]):
            rows.append((kind, m, data["input_ssim"][i],
                         data["output_ssim_image_only"][i],
                         data["output_ssim_finetuned"][i]))
    fileio.write_csv(out / "distortion_curves.csv",
                     ["kind", "magnitude", "input_ssim",
                      "output_ssim_image_only", "output_ssim_finetuned"], rows)
    _write_manifest(out, args, ["distortion_curves.csv"])
    return 0


def cmd_eval_patches(args):
    out = _out_dir(args)
    model = checkpoint.load_model(args.weights)
    rows = []
    for d in args.frames_dir:
        seq = read_sequence(d)
        score = patch_stability(seq, lambda s: stylize_video(model, s),
                                patch=args.patch, search=args.search, seed=args.seed)
        rows.append((d, score.mean_psnr, score.mean_ssim, score.n_pairs))
    fileio.write_csv(out / "patch_stability.csv",
                     ["sequence", "mean_psnr", "mean_ssim", "n_pairs"], rows)
    _write_manifest(out, args, ["patch_stability.csv"])
    return 0


def cmd_bench_timing(args):
    out = _out_dir(args)
    model = checkpoint.load_model(args.weights) if args.weights else \
        RecurrentStylizer(StylizerConfig(), seed=args.seed)
    net = _feature_net(args)
    rows = []
    for res in args.resolutions:
        h = w = int(res)
        rng = np.random.default_rng(args.seed)
        frames = [rng.random((3, h, w)) for _ in range(args.repeats)]
        style = rng.random((3, h, w))
        grams = precompute_style_grams(net, Tensor(style), DEFAULT_STYLE_TAPS)

        def ff(fr):
            return model.forward_step(Tensor(fr), Tensor(fr)).data

        def op(fr):
            img, _ = stylize_image_optim(net, fr, grams, iters=args.optim_iters)
            return img

        t = timing(ff, op, frames, repeats=args.repeats)
        rows.append((f"{h}x{w}", t["feedforward_s"], t["optim_s"], t["ratio"]))
    fileio.write_csv(out / "timing.csv",
                     ["resolution", "feedforward_s", "optim_s", "ratio"], rows)
    _write_manifest(out, args, ["timing.csv"], exclude_hash=["timing.csv"])
    return 0


# ---- parser --------------------------------------------------------------

def build_parser():
    p = CliParser(prog="stylestab", description="style-transfer stability lab")
    sub = p.add_subparsers(dest="command", required=True)

    def new(name, fn, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.set_defaults(func=fn)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    def add_feature_args(sp):
        sp.add_argument("--feature-seed", type=int, default=0)
        sp.add_argument("--feature-weights", default=None)

    sp = new("check-grads", cmd_check_grads)
    add_feature_args(sp)

    sp = new("theorem-verify", cmd_theorem_verify)
    sp.add_argument("--c", type=int, default=4)
    sp.add_argument("--hw", type=int, default=16)
    sp.add_argument("--trials", type=int, default=100)

    sp = new("trace", cmd_trace)
    sp.add_argument("--style", required=True)
    add_feature_args(sp)

    sp = new("stylize-image", cmd_stylize_image)
    sp.add_argument("--content", required=True)
    sp.add_argument("--style", required=True)
    sp.add_argument("--iters", type=int, default=250)
    sp.add_argument("--lr", type=float, default=0.02)
    sp.add_argument("--lambda-c", type=float, default=1.0)
    sp.add_argument("--lambda-s", type=float, default=10.0)
    add_feature_args(sp)

    sp = new("stylize-video-optim", cmd_stylize_video_optim)
    sp.add_argument("--frames-dir", required=True)
    sp.add_argument("--style", required=True)
    sp.add_argument("--iters", type=int, default=250)
    sp.add_argument("--lr", type=float, default=0.02)
    sp.add_argument("--lambda-c", type=float, default=1.0)
    sp.add_argument("--lambda-s", type=float, default=10.0)
    sp.add_argument("--lambda-t", type=float, default=100.0)
    add_feature_args(sp)

    sp = new("gen-scene", cmd_gen_scene)
    sp.add_argument("--kind", required=True,
                    choices=["static-noise", "global-translate", "moving-square"])
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--height", type=int, default=32)
    sp.add_argument("--width", type=int, default=32)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--dx", type=int, default=None)
    sp.add_argument("--dy", type=int, default=None)

    sp = new("train", cmd_train)
    sp.add_argument("--style", required=True)
    sp.add_argument("--frames-dir", nargs="+", required=True)
    sp.add_argument("--phase", default="image-pretrain",
                    choices=["image-pretrain", "video-finetune"])
    sp.add_argument("--init-weights", default=None)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--steps-per-epoch", type=int, default=20)
    sp.add_argument("--bptt-steps", type=int, default=4)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--no-flips", action="store_true")
    sp.add_argument("--lambda-c", type=float, default=1.0)
    sp.add_argument("--lambda-s", type=float, default=10.0)
    sp.add_argument("--lambda-t", type=float, default=100.0)
    sp.add_argument("--widths", default="16,32,48")
    sp.add_argument("--n-residual", type=int, default=3)
    add_feature_args(sp)

    sp = new("stylize-video", cmd_stylize_video)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--frames-dir", required=True)

    sp = new("eval-instability", cmd_eval_instability)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--frames-dir", nargs="+", required=True)

    sp = new("eval-trace-study", cmd_eval_trace_study)
    sp.add_argument("--epochs", type=int, default=6)
    sp.add_argument("--steps-per-epoch", type=int, default=40)
    sp.add_argument("--n-scenes", type=int, default=5)

    sp = new("eval-distortion", cmd_eval_distortion)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--baseline-weights", required=True)
    sp.add_argument("--n-patches", type=int, default=20)

    sp = new("eval-patches", cmd_eval_patches)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--frames-dir", nargs="+", required=True)
    sp.add_argument("--patch", type=int, default=16)
    sp.add_argument("--search", type=int, default=4)

    sp = new("bench-timing", cmd_bench_timing)
    sp.add_argument("--weights", default=None)
    sp.add_argument("--resolutions", nargs="+", default=["64"])
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--optim-iters", type=int, default=250)
    add_feature_args(sp)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 1
    try:
        return args.func(args)
    except (fileio.FormatError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FloatingPointError, gg.DivergenceError, RuntimeError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

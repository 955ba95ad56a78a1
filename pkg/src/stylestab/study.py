"""Experiment recipes shared by the CLI, the scripts, and the acceptance
suite: synthetic corpora, per-style toy trainings, and the comparison
protocols (trace vs instability, before/after temporal finetuning,
controlled distortions)."""

from dataclasses import dataclass, field

import numpy as np

from .flow import smooth_texture, synthetic_scene
from .metrics import distortion_curves, instability, patch_stability, trace_instability_study
from .perceptual import FeatureNet
from .stylizer import (LossWeights, RecurrentStylizer, StylizerConfig, TrainConfig,
                       stylize_frames_independent, stylize_video, train)

TOY_ARCH = StylizerConfig(widths=(8, 16, 24), n_residual=2)
DEFAULT_ALPHAS = (0.15, 0.3, 0.45, 0.6, 0.8, 1.0)


@dataclass
class StudyConfig:
    frame: int = 32
    seed: int = 0
    arch: StylizerConfig = field(default_factory=lambda: TOY_ARCH)
    image_epochs: int = 6
    video_epochs: int = 6
    steps_per_epoch: int = 40
    lr: float = 1e-3
    noise_sigma: float = 0.02
    n_scenes: int = 5
    scene_frames: int = 6
    weights: LossWeights = field(default_factory=LossWeights)


def make_style_family(h, w, seed=0, alphas=DEFAULT_ALPHAS):
    """Contrast-scaled copies of one texture: strictly increasing Gram trace."""
    base = smooth_texture(np.random.default_rng(seed), h, w, blur=1.0, lo=0.0, hi=1.0)
    return [np.clip(a * base, 0.0, 1.0) for a in alphas]


def make_content_corpus(n, h, w, seed=1):
    return [smooth_texture(np.random.default_rng(seed + i), h, w) for i in range(n)]


def make_static_scenes(cfg):
    return [synthetic_scene("static-noise", {"sigma": cfg.noise_sigma},
                            T_frames=cfg.scene_frames, h=cfg.frame, w=cfg.frame,
                            seed=cfg.seed + 100 + i)
            for i in range(cfg.n_scenes)]


def make_motion_scenes(cfg, n=2):
    return [synthetic_scene("moving-square", {"dx": 2, "dy": 1},
                            T_frames=cfg.scene_frames, h=cfg.frame * 2, w=cfg.frame * 2,
                            seed=cfg.seed + 200 + i)
            for i in range(n)]


def make_finetune_scenes(cfg):
    """Training mix for the video phase: flicker suppression needs static
    scenes, motion consistency needs moving content."""
    scenes = make_static_scenes(cfg)
    for i in range(2):
        scenes.append(synthetic_scene("global-translate", {"dx": 1, "dy": 0},
                                      T_frames=cfg.scene_frames, h=cfg.frame, w=cfg.frame,
                                      seed=cfg.seed + 300 + i))
        scenes.append(synthetic_scene("moving-square", {"dx": 1, "dy": 1, "square": cfg.frame // 3},
                                      T_frames=cfg.scene_frames, h=cfg.frame, w=cfg.frame,
                                      seed=cfg.seed + 400 + i))
    return scenes


def train_image_model(style, contents, net, cfg, style_index=0):
    model = RecurrentStylizer(cfg.arch, seed=cfg.seed + 1000 + style_index)
    tc = TrainConfig(phase="image-pretrain", epochs=cfg.image_epochs,
                     steps_per_epoch=cfg.steps_per_epoch, lr=cfg.lr,
                     seed=cfg.seed + style_index, weights=cfg.weights)
    history = train(model, contents, tc, net, style)
    return model, history


def finetune_video_model(model, style, scenes, net, cfg, style_index=0):
    tuned = model.copy()
    tc = TrainConfig(phase="video-finetune", epochs=cfg.video_epochs,
                     steps_per_epoch=cfg.steps_per_epoch, bptt_steps=4, lr=cfg.lr,
                     seed=cfg.seed + 500 + style_index, weights=cfg.weights)
    history = train(tuned, scenes, tc, net, style)
    return tuned, history


def run_trace_study(cfg=None, alphas=DEFAULT_ALPHAS):
    """Per-style image-only models, flicker on static
    scenes, Spearman correlation of Gram trace vs instability per tap."""
    cfg = cfg or StudyConfig()
    net = FeatureNet(seed=cfg.seed)
    styles = make_style_family(cfg.frame, cfg.frame, seed=cfg.seed, alphas=alphas)
    contents = make_content_corpus(4, cfg.frame, cfg.frame, seed=cfg.seed + 1)
    scenes = make_static_scenes(cfg)
    models = [train_image_model(s, contents, net, cfg, i)[0] for i, s in enumerate(styles)]
    fns = [lambda scene, m=m: stylize_frames_independent(m, scene) for m in models]
    rows, correlations = trace_instability_study(styles, fns, scenes, net)
    return {"rows": rows, "correlations": correlations, "models": models,
            "styles": styles, "net": net}


def run_stability_comparison(cfg=None, n_styles=2):
    """Instability and matched-patch SSIM of
    the image-only checkpoint vs the temporally finetuned model."""
    cfg = cfg or StudyConfig()
    net = FeatureNet(seed=cfg.seed)
    styles = make_style_family(cfg.frame, cfg.frame, seed=cfg.seed)[-n_styles:]
    contents = make_content_corpus(4, cfg.frame, cfg.frame, seed=cfg.seed + 1)
    static_scenes = make_static_scenes(cfg)
    motion_scenes = make_motion_scenes(cfg)
    finetune_scenes = make_finetune_scenes(cfg)
    results = []
    for i, style in enumerate(styles):
        image_model, _ = train_image_model(style, contents, net, cfg, i)
        tuned, _ = finetune_video_model(image_model, style, finetune_scenes, net, cfg, i)
        base_instab = float(np.mean([instability(stylize_frames_independent(image_model, sc))
                                     for sc in static_scenes]))
        tuned_instab = float(np.mean([instability(stylize_video(tuned, sc))
                                      for sc in static_scenes]))
        base_ssim, tuned_ssim = [], []
        for sc in motion_scenes:
            base_ssim.append(patch_stability(
                sc, lambda s, m=image_model: stylize_frames_independent(m, s),
                patch=16, search=4, seed=cfg.seed, skip_pairs=1).mean_ssim)
            tuned_ssim.append(patch_stability(
                sc, lambda s, m=tuned: stylize_video(m, s),
                patch=16, search=4, seed=cfg.seed, skip_pairs=1).mean_ssim)
        results.append({
            "style": i,
            "instability_image_only": base_instab,
            "instability_finetuned": tuned_instab,
            "patch_ssim_image_only": float(np.mean(base_ssim)),
            "patch_ssim_finetuned": float(np.mean(tuned_ssim)),
            "image_model": image_model,
            "finetuned_model": tuned,
        })
    return {"results": results, "net": net, "styles": styles}


def _single_frame_fn(model):
    return lambda img: model.forward_step(img, img).data.copy()


def run_distortion_comparison(image_model, tuned_model, cfg=None, n_patches=20,
                              shift_magnitudes=(0, 1, 2, 3, 4),
                              blur_magnitudes=(0, 0.5, 1.0, -0.5, -1.0)):
    """Mean output-SSIM curves over textured patches for
    both models, per distortion kind."""
    cfg = cfg or StudyConfig()
    rng_seeds = range(cfg.seed + 300, cfg.seed + 300 + n_patches)
    src_w = cfg.frame + int(max(shift_magnitudes))
    patches = [smooth_texture(np.random.default_rng(s), cfg.frame, src_w, blur=1.0)
               for s in rng_seeds]
    out = {}
    for kind, mags in (("shift", shift_magnitudes), ("blur-sharpen", blur_magnitudes)):
        curves = {"image_only": [], "finetuned": [], "input": []}
        for p in patches:
            cb = distortion_curves(p, _single_frame_fn(image_model), kind, mags,
                                   window=cfg.frame)
            ct = distortion_curves(p, _single_frame_fn(tuned_model), kind, mags,
                                   window=cfg.frame)
            curves["image_only"].append(cb["output_ssim"])
            curves["finetuned"].append(ct["output_ssim"])
            curves["input"].append(cb["input_ssim"])
        out[kind] = {
            "magnitude": list(mags),
            "input_ssim": np.mean(curves["input"], axis=0).tolist(),
            "output_ssim_image_only": np.mean(curves["image_only"], axis=0).tolist(),
            "output_ssim_finetuned": np.mean(curves["finetuned"], axis=0).tolist(),
        }
    return out

"""Command-line interface.

Subcommands: render (path trace a view), olat (synthesize the OLAT
dataset), fit (stage-1 light/material optimization), train (transfer-field
stages), relight, eval (metrics over image sets), pipeline (end-to-end),
scene-init (write the bundled probe scene). Exit codes: 0 success,
1 runtime failure (one-line `error: ...` on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _load_train_config_file(path):
    from .train import TrainConfig

    p = Path(path)
    if p.suffix == ".json":
        data = json.loads(p.read_text())
    else:
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        data = tomllib.loads(p.read_text())
    return {k: v for k, v in data.items() if k in TrainConfig.__dataclass_fields__}


def _scene(args):
    from .sceneio import load_scene_config

    return load_scene_config(args.scene)


def _camera_by_name(cfg, name):
    cams = cfg.load_cameras()
    if name is None:
        return cams[0]
    for c in cams:
        if c.name == name:
            return c
    raise ValueError(f"no camera named {name!r} in {cfg.cameras_path}")


def _parse_overrides(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ValueError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def cmd_scene_init(args) -> int:
    from .sceneio import generate_probe_bundle

    toml_path = generate_probe_bundle(args.out, seed=args.seed)
    print(toml_path)
    return 0


def cmd_render(args) -> int:
    from .envmap import EnvironmentMap
    from .pathtracer import RenderSettings, Scene, render, save_hdr
    from . import pfm

    cfg = _scene(args)
    scene = Scene(cfg.load_mesh())
    cam = _camera_by_name(cfg, args.camera)
    env = EnvironmentMap.load(args.envmap) if args.envmap else cfg.gt_envmap()
    settings = RenderSettings(
        spp=args.spp,
        max_bounces=args.bounces,
        seed=args.seed,
        deterministic_light=args.deterministic_light,
    )
    img = render(scene, cam, env, cfg.gt_bsdf(), settings)
    save_hdr(args.out, img)
    if args.ldr:
        pfm.tonemap_to_png(args.ldr, img)
    print(args.out)
    return 0


def cmd_olat(args) -> int:
    from .pathtracer import RenderSettings, Scene, synthesize_olat_dataset

    cfg = _scene(args)
    preset = cfg.preset(args.preset)
    scene = Scene(cfg.load_mesh())
    train_cams, _ = cfg.split_cameras()
    settings = RenderSettings(
        spp=int(preset.get("olat_spp", 16)), max_bounces=5, seed=args.seed
    )
    dataset = synthesize_olat_dataset(
        scene,
        train_cams,
        int(preset["env_w"]),
        int(preset["env_h"]),
        cfg.gt_bsdf(),
        settings,
        olat_radiance=float(preset.get("olat_radiance", 50.0)),
        n_extra_cameras=int(preset.get("olat_extra_cameras", len(train_cams))),
    )
    dataset.save(args.out)
    print(f"{args.out}: {dataset.n_images} OLAT images")
    return 0


def cmd_fit(args) -> int:
    from .invopt import FitConfig, fit_light_material, make_views, save_fit_outputs
    from .pathtracer import RenderSettings, Scene, render

    cfg = _scene(args)
    preset = cfg.preset(args.preset)
    scene = Scene(cfg.load_mesh())
    train_cams, _ = cfg.split_cameras()
    gt_env = cfg.gt_envmap().resample(int(preset["env_w"]), int(preset["env_h"]))
    settings = RenderSettings(spp=cfg.gt_spp, max_bounces=5, seed=args.seed + 1)
    images = [render(scene, c, gt_env, cfg.gt_bsdf(), settings) for c in train_cams]
    fit_cfg = FitConfig(
        iters=args.iters or int(preset["fit_iters"]),
        pixel_budget=int(preset["fit_pixel_budget"]),
        spp=int(preset.get("fit_spp", 16)),
        env_w=int(preset["env_w"]),
        env_h=int(preset["env_h"]),
        albedo_res=int(preset["albedo_res"]),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=args.out,
    )
    result = fit_light_material(scene, make_views(scene, train_cams, images), fit_cfg)
    save_fit_outputs(args.out, result.state, result.trace)
    print(f"{args.out}: w={result.bsdf.w:.4f} alpha={result.bsdf.alpha:.4f}")
    return 0


def cmd_train(args) -> int:
    from .envmap import EnvironmentMap
    from .field import TransferField
    from .hashgrid import HashGridConfig
    from .invopt import make_views
    from .pathtracer import OlatDataset, RenderSettings, Scene, render
    from .train import TrainConfig, joint_finetune, pretrain

    cfg = _scene(args)
    preset = cfg.preset(args.preset)
    scene = Scene(cfg.load_mesh())
    dataset = OlatDataset.load(args.olat)
    kwargs = dict(
        pretrain_iters=int(preset["pretrain_iters"]),
        joint_iters=int(preset["joint_iters"]),
        rays_per_image=int(preset.get("rays_per_image", 1024)),
        real_rays_per_image=int(preset.get("real_rays_per_image", 128)),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=args.out,
    )
    if args.config:
        kwargs.update(_load_train_config_file(args.config))
    if args.iters:
        key = "pretrain_iters" if args.stage == "pretrain" else "joint_iters"
        kwargs[key] = args.iters
    train_cfg = TrainConfig(**kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.stage == "pretrain":
        grid_cfg = HashGridConfig(finest_resolution=int(preset.get("grid_finest", 256)))
        tf = TransferField.create(scene.mesh, grid_cfg, seed=args.seed)
        state = pretrain(scene, tf, dataset, train_cfg)
        tf.save(out / "field_pretrain.ckpt", {"stage": "pretrain"})
        np.savetxt(out / "pretrain_loss.csv", state.loss_trace[:, None], delimiter=",")
        print(out / "field_pretrain.ckpt")
        return 0

    if not args.checkpoint:
        raise ValueError("--stage joint requires --checkpoint from pretraining")
    if not args.fit_env:
        raise ValueError("--stage joint requires --fit-env (stage-1 envmap PFM)")
    tf = TransferField.load(args.checkpoint)
    env_hat = EnvironmentMap.load(args.fit_env)
    train_cams, _ = cfg.split_cameras()
    gt_env = cfg.gt_envmap().resample(int(preset["env_w"]), int(preset["env_h"]))
    settings = RenderSettings(spp=cfg.gt_spp, max_bounces=5, seed=args.seed + 1)
    images = [render(scene, c, gt_env, cfg.gt_bsdf(), settings) for c in train_cams]
    views = make_views(scene, train_cams, images)
    from .train import TrainState

    state = TrainState(field=tf, env_raw=None)
    state = joint_finetune(scene, state, dataset, views, env_hat, train_cfg)
    tf.save(out / "field.ckpt", {"stage": "joint"})
    state.envmap().save(out / "envmap_refined.pfm")
    np.savetxt(out / "joint_loss.csv", state.loss_trace, delimiter=",")
    print(out / "field.ckpt")
    return 0


def cmd_relight(args) -> int:
    from .envmap import EnvironmentMap
    from .field import TransferField
    from .pathtracer import Scene, save_hdr
    from . import pfm

    cfg = _scene(args)
    scene = Scene(cfg.load_mesh())
    cam = _camera_by_name(cfg, args.camera)
    tf = TransferField.load(args.checkpoint)
    env = EnvironmentMap.load(args.envmap)
    img = relight_with_grid(tf, env, cam, scene, args)
    save_hdr(args.out, img)
    if args.ldr:
        pfm.tonemap_to_png(args.ldr, img, exposure=args.exposure, gamma=args.gamma)
    print(args.out)
    return 0


def relight_with_grid(tf, env, cam, scene, args):
    from .relight import relight

    return relight(
        tf,
        env,
        cam,
        scene,
        (args.train_env_w, args.train_env_h),
        mask_only=args.mask_only,
        continuous=args.continuous,
    )


def cmd_eval(args) -> int:
    from . import pfm
    from .metrics import MetricsReport, psnr, ssim

    dir_a = Path(args.a)
    dir_b = Path(args.b)
    names = sorted(p.name for p in dir_a.glob("*.pfm"))
    names = [n for n in names if (dir_b / n).exists()]
    if not names:
        raise ValueError(f"no matching .pfm pairs between {dir_a} and {dir_b}")
    report = MetricsReport()
    for n in names:
        a = pfm.read_pfm(dir_a / n)
        b = pfm.read_pfm(dir_b / n)
        report.add(n, psnr(a, b), ssim(a, b))
    out = Path(args.out or "report.json")
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=1)
    out.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    agg = report.aggregate()
    print(f"{out}: mean PSNR {agg['mean_psnr']:.2f} dB, mean SSIM {agg['mean_ssim']:.4f}")
    return 0


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline

    cfg = _scene(args)
    result = run_pipeline(
        cfg,
        args.preset,
        args.out,
        seed=args.seed,
        overrides=_parse_overrides(args.set),
    )
    agg = result["report"]["aggregate"]
    print(
        f"pipeline complete: mean PSNR {agg['mean_psnr']:.2f} dB over "
        f"{agg['count']} comparisons -> {result['out_dir']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="relightfield",
        description="Path-traced inverse rendering and transfer-field relighting.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, scene=True):
        if scene:
            p.add_argument("--scene", required=True, help="scene TOML")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("scene-init", help="write the bundled probe scene")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_scene_init)

    p = sub.add_parser("render", help="path trace one view")
    add_common(p)
    p.add_argument("--camera", help="camera name (default: first)")
    p.add_argument("--envmap", help="PFM path (default: scene GT)")
    p.add_argument("--out", required=True)
    p.add_argument("--ldr", help="also write a tone-mapped PNG")
    p.add_argument("--spp", type=int, default=64)
    p.add_argument("--bounces", type=int, default=5)
    p.add_argument("--deterministic-light", action="store_true")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("olat", help="synthesize the OLAT dataset")
    add_common(p)
    p.add_argument("--preset", default="desk")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_olat)

    p = sub.add_parser("fit", help="stage-1 light/material optimization")
    add_common(p)
    p.add_argument("--preset", default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, help="override preset iteration count")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("train", help="transfer-field training")
    add_common(p)
    p.add_argument("--stage", choices=["pretrain", "joint"], required=True)
    p.add_argument("--preset", default="desk")
    p.add_argument("--olat", required=True, help="OLAT dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="pretrain checkpoint (joint stage)")
    p.add_argument("--fit-env", help="stage-1 envmap PFM (joint stage)")
    p.add_argument("--config", help="TOML/JSON training-config file")
    p.add_argument("--iters", type=int, help="override stage iteration count")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("relight", help="render with the trained field")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--envmap", required=True)
    p.add_argument("--camera")
    p.add_argument("--out", required=True)
    p.add_argument("--ldr")
    p.add_argument("--train-env-w", type=int, default=16)
    p.add_argument("--train-env-h", type=int, default=8)
    p.add_argument("--mask-only", action="store_true")
    p.add_argument("--continuous", action="store_true")
    p.add_argument("--exposure", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=2.2)
    p.set_defaults(fn=cmd_relight)

    p = sub.add_parser("eval", help="PSNR/SSIM over matching PFM pairs")
    p.add_argument("--a", required=True, help="first image directory")
    p.add_argument("--b", required=True, help="second image directory")
    p.add_argument("--out", default="report.json")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="end-to-end run on a scene")
    add_common(p)
    p.add_argument("--preset", default="desk")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a preset entry (repeatable)",
    )
    p.set_defaults(fn=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError, KeyError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

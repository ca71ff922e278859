"""Two-stage training of the transfer field.

Stage 1 (pretrain) fits the field to the synthetic OLAT images with a
relative L2 loss whose denominator is detached (stop-gradient), which keeps
high-dynamic-range targets with path-tracing noise well conditioned.

Stage 2 (joint) mixes OLAT batches with real renders: the real-image term
evaluates the discretized transfer sum over all environment texels, which is
bilinear in (texel radiance, transfer values), so it refines both the field
and the environment map; a quadratic anchor keeps the refined map near the
stage-1 estimate. Batches are a fixed 5 OLAT + 1 real image per iteration.

All batching is keyed by (seed, iteration) counter-based generators; reruns
are bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envmap import EnvironmentMap, texel_direction_grid
from .field import TransferField
from .geometry import Camera
from .invopt import FitView, inv_softplus, sigmoid, softplus
from .kernels import trace as ktrace
from .optim import AdamGroup, adam_step_rows
from .pathtracer import OlatDataset, Scene, camera_arrays, scene_arrays


@dataclass
class TrainConfig:
    pretrain_iters: int = 20000
    pretrain_lr: float = 5e-4
    pretrain_batch: int = 20  # OLAT images per iteration
    joint_iters: int = 10000
    joint_lr: float = 1e-4
    joint_olat_images: int = 5
    joint_real_images: int = 1
    eps: float = 1e-3  # stop-gradient denominator guard
    lambda_olat: float = 0.1  # joint stage only; pretrain uses the bare loss
    lambda_prt: float = 1.0
    lambda_envc: float = 0.001
    rays_per_image: int = 1024
    real_rays_per_image: int = 128
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        for name in (
            "pretrain_iters", "pretrain_lr", "pretrain_batch", "joint_iters",
            "joint_lr", "joint_olat_images", "rays_per_image",
            "real_rays_per_image",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainState:
    field: TransferField
    env_raw: np.ndarray | None  # softplus-space refinable envmap (joint only)
    iteration: int = 0
    loss_trace: np.ndarray | None = None  # per-iteration loss terms
    batch_log: list = None

    def envmap(self) -> EnvironmentMap | None:
        if self.env_raw is None:
            return None
        return EnvironmentMap(softplus(self.env_raw))


# --- losses -------------------------------------------------------------------


def relative_sq_loss(pred: np.ndarray, target: np.ndarray, eps: float):
    """Mean of ((pred - target) / (sg(pred) + eps))^2 and its gradient.

    The denominator uses the numeric value of pred but is a constant in the
    derivative (stop-gradient).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    denom = pred + eps  # values only; no gradient flows through this
    r = (pred - target) / denom
    loss = float(np.mean(r * r))
    d_pred = 2.0 * r / denom / r.size
    return loss, d_pred


def olat_sample_batch(dataset: OlatDataset, caches, image_ids, rays, rng):
    """Gather (x, n, wo, wi, targets) rows for chosen OLAT images."""
    dirs = texel_direction_grid(dataset.env_w, dataset.env_h).reshape(-1, 3)
    xs, ns, wos, wis, tg = [], [], [], [], []
    for img in image_ids:
        cam_id = int(dataset.camera_ids[img])
        cache = caches[cam_id]
        k = cache["x"].shape[0]
        take = min(rays, k)
        sel = rng.choice(k, size=take, replace=False)
        sel.sort()
        xs.append(cache["x"][sel])
        ns.append(cache["n"][sel])
        wos.append(cache["wo"][sel])
        wis.append(np.tile(dirs[int(dataset.texel_ids[img])], (take, 1)))
        flat = dataset.images[img].reshape(-1, 3)
        tg.append(flat[cache["pixels"][sel]])
    return (
        np.concatenate(xs),
        np.concatenate(ns),
        np.concatenate(wos),
        np.concatenate(wis),
        np.concatenate(tg).astype(np.float64),
    )


def loss_olat(
    tf: TransferField, x, n, wo, wi, targets, eps: float, olat_radiance: float
):
    """Stop-gradient relative L2 between predicted and rendered OLAT pixels.

    Returns (loss, mlp grads, (table rows, row grads))."""
    pred_t, cache = tf.eval_with_cache(x, n, wi, wo)
    pred = olat_radiance * pred_t.astype(np.float64)
    loss, d_pred = relative_sq_loss(pred, targets, eps)
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(pred).all(axis=1))[0]) if pred.size else 0
        raise FloatingPointError(f"non-finite OLAT loss at batch row {bad}")
    grads, hash_grads = tf.backward(cache, d_pred * olat_radiance)
    return loss, grads, hash_grads


def loss_prt(tf: TransferField, env_vals: np.ndarray, x, n, wo, targets, texel_dirs):
    """Masked L2 between the texel-sum prediction and real pixels.

    The prediction is bilinear: L(u) = sum_t env[t] * T(x, n, t, wo), so the
    environment gradient is the transfer matrix itself. Returns
    (loss, mlp grads, hash grads, env grads (N_e, 3))."""
    p = np.atleast_2d(x).shape[0]
    t = texel_dirs.shape[0]
    xs = np.repeat(np.atleast_2d(x), t, axis=0)
    ns = np.repeat(np.atleast_2d(n), t, axis=0)
    wos = np.repeat(np.atleast_2d(wo), t, axis=0)
    wis = np.tile(texel_dirs, (p, 1))
    tvals, cache = tf.eval_with_cache(xs, ns, wis, wos)
    tmat = tvals.astype(np.float64).reshape(p, t, 3)
    pred = np.einsum("ptc,tc->pc", tmat, env_vals)
    resid = pred - np.asarray(targets, dtype=np.float64)
    count = resid.size
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite transfer-sum loss")
    d_pred = 2.0 * resid / count
    d_t = d_pred[:, None, :] * env_vals[None, :, :]
    grads, hash_grads = tf.backward(cache, d_t.reshape(p * t, 3))
    d_env = np.einsum("pc,ptc->tc", d_pred, tmat)
    return loss, grads, hash_grads, d_env


def loss_envc(env_tilde: np.ndarray, env_hat: np.ndarray):
    """Quadratic anchor to the stage-1 environment estimate (mean over
    texels and channels)."""
    env_tilde = np.asarray(env_tilde, dtype=np.float64)
    env_hat = np.asarray(env_hat, dtype=np.float64)
    if env_tilde.shape != env_hat.shape:
        raise ValueError("environment map shapes do not match")
    diff = env_tilde - env_hat
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


# --- stage drivers -------------------------------------------------------------


def build_pixel_caches(scene: Scene, cameras: list[Camera]) -> list[dict]:
    """Per-camera center-ray hit caches over foreground pixels; geometry is
    static so these are computed once and reused every iteration."""
    caches = []
    for cam in cameras:
        h, w = cam.height, cam.width
        pixels = np.arange(h * w, dtype=np.int64)
        hit = np.zeros(h * w, dtype=np.uint8)
        pos = np.zeros((h * w, 3))
        nrm = np.zeros((h * w, 3))
        gn = np.zeros((h * w, 3))
        wo = np.zeros((h * w, 3))
        uv = np.zeros((h * w, 2))
        ktrace.primary_hits(
            *scene_arrays(scene.bvh), *camera_arrays(cam), pixels,
            hit, pos, nrm, gn, wo, uv,
        )
        fg = np.flatnonzero(hit)
        caches.append(
            {
                "pixels": pixels[fg],
                "x": pos[fg],
                "n": nrm[fg],
                "wo": wo[fg],
            }
        )
    return caches


class _FieldOptimizer:
    """Adam over the MLP parameters plus sparse rows of the feature table."""

    def __init__(self, tf: TransferField, lr: float):
        self.tf = tf
        self.mlp_group = AdamGroup(
            {
                **{f"w{i}": w for i, w in enumerate(tf.mlp.weights)},
                **{f"b{i}": b for i, b in enumerate(tf.mlp.biases)},
            },
            lr=lr,
        )
        self.m_table = np.zeros_like(tf.encoder.table)
        self.v_table = np.zeros_like(tf.encoder.table)
        self.lr = lr

    def step(self, mlp_grads: dict, rows: np.ndarray, grad_rows: np.ndarray):
        self.mlp_group.step(mlp_grads)
        adam_step_rows(
            self.tf.encoder.table, grad_rows, rows,
            self.m_table, self.v_table, self.mlp_group.t, self.lr,
        )


def _combine(mlp_a, hash_a, scale_a, mlp_b=None, hash_b=None, scale_b=0.0):
    """lambda-weighted sum of two (mlp grads, hash grads) pairs."""
    out = {k: scale_a * v for k, v in mlp_a.items()}
    rows_a, grows_a = hash_a
    if mlp_b is None:
        return out, (rows_a, scale_a * grows_a)
    for k, v in mlp_b.items():
        out[k] = out.get(k, 0.0) + scale_b * v
    rows_b, grows_b = hash_b
    rows = np.union1d(rows_a, rows_b)
    grows = np.zeros((rows.size, grows_a.shape[1]))
    grows[np.searchsorted(rows, rows_a)] += scale_a * grows_a
    grows[np.searchsorted(rows, rows_b)] += scale_b * grows_b
    return out, (rows, grows)


def pretrain(
    scene: Scene, tf: TransferField, dataset: OlatDataset, config: TrainConfig
) -> TrainState:
    """Stage-1 training on the OLAT images with the bare stop-gradient
    relative loss."""
    caches = build_pixel_caches(scene, dataset.cameras)
    opt = _FieldOptimizer(tf, config.pretrain_lr)
    trace = np.zeros(config.pretrain_iters)
    initial = None
    for it in range(config.pretrain_iters):
        rng = np.random.Generator(np.random.Philox(key=[config.seed, it]))
        image_ids = rng.choice(
            dataset.n_images,
            size=min(config.pretrain_batch, dataset.n_images),
            replace=False,
        )
        x, n, wo, wi, targets = olat_sample_batch(
            dataset, caches, image_ids, config.rays_per_image, rng
        )
        loss, grads, (rows, grows) = loss_olat(
            tf, x, n, wo, wi, targets, config.eps, dataset.olat_radiance
        )
        opt.step(grads, rows, grows)
        trace[it] = loss
        initial = loss if initial is None else initial
        if loss > 1e3 * max(initial, 1e-12) and it > 100:
            raise RuntimeError(f"pretraining diverged at iteration {it}")
        if (
            config.checkpoint_every
            and config.checkpoint_dir
            and (it + 1) % config.checkpoint_every == 0
        ):
            _checkpoint(tf, None, config, "pretrain", it + 1, trace[: it + 1])
    return TrainState(field=tf, env_raw=None, iteration=config.pretrain_iters,
                      loss_trace=trace, batch_log=[])


def joint_finetune(
    scene: Scene,
    state: TrainState,
    dataset: OlatDataset,
    views: list[FitView],
    env_hat: EnvironmentMap,
    config: TrainConfig,
) -> TrainState:
    """Stage-2 training on 5 OLAT + 1 real image per iteration, refining the
    environment map from its stage-1 estimate."""
    tf = state.field
    if (env_hat.width, env_hat.height) != (dataset.env_w, dataset.env_h):
        raise ValueError("stage-1 environment grid must match the OLAT grid")
    caches = build_pixel_caches(scene, dataset.cameras)
    view_caches = build_pixel_caches(scene, [v.camera for v in views])
    texel_dirs = texel_direction_grid(dataset.env_w, dataset.env_h).reshape(-1, 3)
    env_hat_vals = env_hat.values.copy()  # (H, W, 3)
    env_raw = inv_softplus(np.maximum(env_hat_vals, 1e-6))
    opt = _FieldOptimizer(tf, config.joint_lr)
    env_group = AdamGroup({"env_raw": env_raw}, lr=config.joint_lr)
    trace = np.zeros((config.joint_iters, 4))
    batch_log = []
    for it in range(config.joint_iters):
        rng = np.random.Generator(np.random.Philox(key=[config.seed, 0x10000000 + it]))
        image_ids = rng.choice(
            dataset.n_images,
            size=min(config.joint_olat_images, dataset.n_images),
            replace=False,
        )
        x, n, wo, wi, targets = olat_sample_batch(
            dataset, caches, image_ids, config.rays_per_image, rng
        )
        l_olat, g_olat, h_olat = loss_olat(
            tf, x, n, wo, wi, targets, config.eps, dataset.olat_radiance
        )
        view_ids = rng.choice(
            len(views), size=min(config.joint_real_images, len(views)), replace=False
        )
        env_vals = softplus(env_raw).reshape(-1, 3)
        l_prt = 0.0
        g_prt = None
        h_prt = None
        d_env = np.zeros_like(env_vals)
        for vid in view_ids:
            cache = view_caches[int(vid)]
            k = cache["x"].shape[0]
            take = min(config.real_rays_per_image, k)
            sel = rng.choice(k, size=take, replace=False)
            sel.sort()
            flat = views[int(vid)].image.reshape(-1, 3)
            l_v, g_v, h_v, de_v = loss_prt(
                tf,
                env_vals,
                cache["x"][sel],
                cache["n"][sel],
                cache["wo"][sel],
                flat[cache["pixels"][sel]],
                texel_dirs,
            )
            l_prt += l_v
            d_env += de_v
            if g_prt is None:
                g_prt, h_prt = g_v, h_v
            else:
                g_prt, h_prt = _combine(g_prt, h_prt, 1.0, g_v, h_v, 1.0)
        env_hw3 = env_vals.reshape(env_raw.shape)
        l_envc, d_envc = loss_envc(env_hw3, env_hat_vals)
        total = (
            config.lambda_olat * l_olat
            + config.lambda_prt * l_prt
            + config.lambda_envc * l_envc
        )
        mlp_grads, (rows, grows) = _combine(
            g_olat, h_olat, config.lambda_olat, g_prt, h_prt, config.lambda_prt
        )
        opt.step(mlp_grads, rows, grows)
        env_grad = (
            config.lambda_prt * d_env.reshape(env_raw.shape)
            + config.lambda_envc * d_envc
        ) * sigmoid(env_raw)
        env_group.step({"env_raw": env_grad})
        trace[it] = (total, l_olat, l_prt, l_envc)
        batch_log.append((len(image_ids), len(view_ids)))
        if (
            config.checkpoint_every
            and config.checkpoint_dir
            and (it + 1) % config.checkpoint_every == 0
        ):
            env_hw3 = softplus(env_raw).reshape(dataset.env_h, dataset.env_w, 3)
            _checkpoint(tf, env_hw3, config, "joint", it + 1, trace[: it + 1])
    return TrainState(
        field=tf,
        env_raw=env_raw,
        iteration=config.joint_iters,
        loss_trace=trace,
        batch_log=batch_log,
    )


def _checkpoint(tf, env_hw3, config, stage, iteration, trace):
    out = Path(config.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    tf.save(out / f"{stage}_{iteration:06d}.ckpt", {"stage": stage, "iteration": iteration})
    if env_hw3 is not None:
        EnvironmentMap(env_hw3).save(out / f"{stage}_{iteration:06d}_env.pfm")
    np.savetxt(out / f"{stage}_loss.csv", np.atleast_2d(trace), delimiter=",")

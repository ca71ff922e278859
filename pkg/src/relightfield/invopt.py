"""Stage-1 inverse rendering: jointly fit the blend weight, roughness,
diffuse texture and environment map from posed images by Adam on a
differentiable path-tracing estimator.

Gradients are frozen-sample: every sampling decision and pdf is held at its
forward value and the estimator is differentiated only through BSDF values
and texel radiances. Geometry is fixed, so no visibility discontinuities
move with the parameters and the frozen gradient is the exact gradient of
the frozen estimator (which is what finite differences on the same streams
measure).

Parameters live in unconstrained space:
    w = sigmoid(w_logit)            in (0, 1)
    alpha = 0.01 + softplus(a_raw)  clamped to <= 1
    A = sigmoid(A_raw)              in (0, 1)
    E = softplus(E_raw)             >= 0
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bsdf import ALPHA_MIN, AlbedoTexture, BlendedBsdf, rasterize_uv_mask
from .envmap import EnvironmentMap, luminance
from .geometry import Camera, foreground_mask
from .kernels import trace as ktrace
from .optim import AdamGroup
from .pathtracer import Scene, camera_arrays, env_arrays, scene_arrays


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("inv_softplus needs positive input")
    return y + np.log(-np.expm1(-y))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class FitView:
    camera: Camera
    image: np.ndarray  # (H, W, 3) linear radiance
    mask: np.ndarray  # (H, W) bool foreground

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        if self.image.shape[:2] != (self.camera.height, self.camera.width):
            raise ValueError("view image does not match camera resolution")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError("mask does not match image")


def make_views(scene: Scene, cameras: list[Camera], images: list[np.ndarray]) -> list[FitView]:
    return [
        FitView(camera=c, image=img, mask=foreground_mask(c, scene.bvh))
        for c, img in zip(cameras, images)
    ]


@dataclass
class FitConfig:
    iters: int = 3000
    lr_env: float = 1.0
    lr_albedo: float = 0.1
    lr_material: float = 0.001
    lambda_reg: float = 1e-3
    lambda_bsdf: float = 0.1
    pixel_budget: int = 4096  # pixels per iteration across all views
    spp: int = 16
    max_bounces: int = 5
    seed: int = 0
    env_w: int = 32
    env_h: int = 16
    albedo_res: int = 512
    deterministic_light: bool = False
    grad_tiles: int = 8
    init_w: float = 0.5
    init_alpha: float = 0.3
    init_albedo: float = 0.5
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None


@dataclass
class FitState:
    w_logit: np.ndarray  # () scalar array
    alpha_raw: np.ndarray  # ()
    albedo_raw: np.ndarray  # (Ha, Wa, 3)
    env_raw: np.ndarray  # (He, We, 3)
    tex_mask: np.ndarray  # (Ha, Wa) bool, texels covered by the UV layout
    iteration: int = 0

    # constrained views -----------------------------------------------------

    def w(self) -> float:
        return float(sigmoid(self.w_logit))

    def alpha(self) -> float:
        return float(min(ALPHA_MIN + softplus(self.alpha_raw), 1.0))

    def albedo(self) -> np.ndarray:
        return sigmoid(self.albedo_raw)

    def env(self) -> np.ndarray:
        return softplus(self.env_raw)

    def bsdf(self) -> BlendedBsdf:
        return BlendedBsdf(
            w=self.w(),
            alpha=self.alpha(),
            albedo=AlbedoTexture(self.albedo(), mask=self.tex_mask),
        )

    def envmap(self) -> EnvironmentMap:
        return EnvironmentMap(self.env())


def init_state(scene: Scene, views: list[FitView], config: FitConfig) -> FitState:
    fg_lum = []
    for v in views:
        if v.mask.any():
            fg_lum.append(luminance(v.image[v.mask]).mean())
    if not fg_lum:
        raise ValueError("need at least one view with a nonempty mask")
    mean_lum = max(float(np.mean(fg_lum)), 1e-3)
    return FitState(
        w_logit=np.array(float(logit(config.init_w))),
        alpha_raw=np.array(float(inv_softplus(config.init_alpha - ALPHA_MIN))),
        albedo_raw=np.full(
            (config.albedo_res, config.albedo_res, 3), float(logit(config.init_albedo))
        ),
        env_raw=np.full(
            (config.env_h, config.env_w, 3), float(inv_softplus(mean_lum))
        ),
        tex_mask=rasterize_uv_mask(scene.mesh, config.albedo_res, config.albedo_res),
    )


# --- losses -----------------------------------------------------------------


def loss_pt(
    scene: Scene,
    state: FitState,
    views: list[FitView],
    batch: list[tuple[int, np.ndarray]],
    config: FitConfig,
    seed: int | None = None,
    frozen: FitState | None = None,
):
    """Mean squared radiance error over a pixel batch, with exact gradients
    of the frozen-sample estimator w.r.t. the raw parameters.

    ``batch`` is a list of (view index, flat foreground pixel ids). When
    ``frozen`` is given, all sampling decisions (lobe choice, light texel,
    direction warps, MIS pdfs) come from that state while radiance is
    evaluated at ``state``; finite differences against this frozen loss are
    what the analytic gradients must reproduce. Returns (loss, grads dict,
    per-view estimates).
    """
    sample_state = frozen if frozen is not None else state
    w_s = sample_state.w()
    alpha_s = sample_state.alpha()
    w = state.w()
    alpha = state.alpha()
    albedo = np.ascontiguousarray(state.albedo())
    env = EnvironmentMap(state.env())
    env_pack = env_arrays(env, EnvironmentMap(sample_state.env()))
    seed = config.seed if seed is None else seed

    total_px = sum(p.size for _, p in batch)
    if total_px == 0:
        raise ValueError("empty pixel batch")
    loss_scale = 1.0 / (total_px * 3)

    n_tiles = config.grad_tiles
    ha, wa = albedo.shape[:2]
    loss = 0.0
    g_w = 0.0
    g_alpha = 0.0
    g_env = np.zeros((env.n_texels, 3))
    g_alb = np.zeros((ha, wa, 3))
    estimates = []
    for view_idx, pixels in batch:
        view = views[view_idx]
        pixels = np.ascontiguousarray(pixels, dtype=np.int64)
        targets = np.ascontiguousarray(
            view.image.reshape(-1, 3)[pixels], dtype=np.float64
        )
        out = np.zeros((pixels.size, 3))
        bad = np.zeros(pixels.size, dtype=np.uint8)
        loss_tile = np.zeros(n_tiles)
        gw_tile = np.zeros(n_tiles)
        ga_tile = np.zeros(n_tiles)
        genv_tile = np.zeros((n_tiles, env.n_texels, 3))
        galb_tile = np.zeros((n_tiles, ha, wa, 3))
        ktrace.trace_pixels_grad(
            *scene_arrays(scene.bvh),
            *camera_arrays(view.camera),
            pixels,
            targets,
            *env_pack,
            w_s,
            alpha_s,
            w,
            alpha,
            albedo,
            config.spp,
            config.max_bounces,
            config.deterministic_light,
            scene.bvh.t_min,
            np.uint64(seed),
            loss_scale,
            out,
            bad,
            loss_tile,
            gw_tile,
            ga_tile,
            genv_tile,
            galb_tile,
        )
        if bad.any():
            pid = int(pixels[np.flatnonzero(bad)[0]])
            raise RuntimeError(
                f"NaN radiance in view {view_idx} at pixel "
                f"({pid % view.camera.width},{pid // view.camera.width})"
            )
        loss += float(loss_tile.sum())
        g_w += float(gw_tile.sum(axis=0))
        g_alpha += float(ga_tile.sum(axis=0))
        g_env += genv_tile.sum(axis=0)
        g_alb += galb_tile.sum(axis=0)
        estimates.append(out)

    # chain rule into the unconstrained parameterization
    wv = state.w()
    grads = {
        "w_logit": np.array(g_w * wv * (1.0 - wv)),
        "alpha_raw": np.array(
            g_alpha * float(sigmoid(state.alpha_raw))
            * (1.0 if state.alpha() < 1.0 else 0.0)
        ),
        "albedo_raw": g_alb.reshape(ha, wa, 3) * albedo * (1.0 - albedo),
        "env_raw": g_env.reshape(env.height, env.width, 3) * sigmoid(state.env_raw),
    }
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group '{name}'")
    return loss, grads, estimates


def loss_reg(state: FitState, config: FitConfig):
    """Gradient-sparsity regularizer: L1 of backward differences over the
    environment map (azimuth wraps) plus lambda_bsdf times the same over
    albedo texels whose difference stays inside the coverage mask.

    Returns (value, grads on raw parameters). Plain sums, no normalization.
    """
    env = state.env()
    dh = env - np.roll(env, 1, axis=1)  # wraps in azimuth
    dv = env[1:] - env[:-1]
    value = float(np.abs(dh).sum() + np.abs(dv).sum())
    g_env = np.zeros_like(env)
    sh_ = np.sign(dh)
    g_env += sh_
    g_env -= np.roll(sh_, -1, axis=1)
    sv = np.sign(dv)
    g_env[1:] += sv
    g_env[:-1] -= sv

    # texture differences count only when both texels are inside the mask
    alb = state.albedo()
    mask = state.tex_mask
    g_alb = np.zeros_like(alb)
    both_h = mask.copy()
    both_h[:, 1:] &= mask[:, :-1]
    both_h[:, 0] = False  # no horizontal wrap in texture space
    dah = np.where(both_h[..., None], alb - np.roll(alb, 1, axis=1), 0.0)
    alb_val = float(np.abs(dah).sum())
    sa = np.sign(dah)
    g_alb += sa
    g_alb -= np.roll(sa, -1, axis=1)
    both_v = np.zeros_like(mask)
    both_v[1:] = mask[1:] & mask[:-1]
    dav = np.zeros_like(alb)
    dav[1:] = alb[1:] - alb[:-1]
    dav = np.where(both_v[..., None], dav, 0.0)
    alb_val += float(np.abs(dav).sum())
    sv2 = np.sign(dav)
    g_alb += sv2
    g_alb[:-1] -= sv2[1:]

    value += config.lambda_bsdf * alb_val
    grads = {
        "w_logit": np.array(0.0),
        "alpha_raw": np.array(0.0),
        "albedo_raw": config.lambda_bsdf * g_alb * alb * (1.0 - alb),
        "env_raw": g_env * sigmoid(state.env_raw),
    }
    return value, grads


# --- optimization loop --------------------------------------------------------


@dataclass
class FitResult:
    bsdf: BlendedBsdf
    envmap: EnvironmentMap
    trace: np.ndarray  # (iters, 3): total, data, reg
    state: FitState = field(repr=False, default=None)


def sample_pixel_batch(views, budget, rng) -> list[tuple[int, np.ndarray]]:
    """Draw a batch of foreground pixels across views (without replacement
    when the budget allows)."""
    pools = []
    for vi, v in enumerate(views):
        ids = np.flatnonzero(v.mask.reshape(-1))
        if ids.size:
            pools.append((vi, ids))
    if not pools:
        raise ValueError("no foreground pixels in any view")
    total = sum(ids.size for _, ids in pools)
    take = min(budget, total)
    flat = rng.choice(total, size=take, replace=False)
    flat.sort()
    batch = []
    base = 0
    for vi, ids in pools:
        sel = flat[(flat >= base) & (flat < base + ids.size)] - base
        if sel.size:
            batch.append((vi, ids[sel]))
        base += ids.size
    return batch


def fit_light_material(
    scene: Scene, views: list[FitView], config: FitConfig
) -> FitResult:
    """Run the stage-1 optimization; returns fitted material, lighting and
    the per-iteration loss trace (bit-reproducible for a fixed seed)."""
    state = init_state(scene, views, config)
    groups = {
        "env": AdamGroup({"env_raw": state.env_raw}, lr=config.lr_env),
        "albedo": AdamGroup({"albedo_raw": state.albedo_raw}, lr=config.lr_albedo),
        "material": AdamGroup(
            {"w_logit": state.w_logit, "alpha_raw": state.alpha_raw},
            lr=config.lr_material,
        ),
    }
    trace = np.zeros((config.iters, 3))
    initial_loss = None
    over_budget = 0
    for it in range(config.iters):
        rng = np.random.Generator(np.random.Philox(key=[config.seed, it]))
        batch = sample_pixel_batch(views, config.pixel_budget, rng)
        seed_it = (config.seed * 1000003 + it) & 0x7FFFFFFFFFFFFFFF
        data, g_data, _ = loss_pt(scene, state, views, batch, config, seed=seed_it)
        reg, g_reg = loss_reg(state, config)
        total = data + config.lambda_reg * reg
        grads = {
            k: g_data[k] + config.lambda_reg * g_reg[k]
            for k in g_data
        }
        groups["env"].step({"env_raw": grads["env_raw"]})
        groups["albedo"].step({"albedo_raw": grads["albedo_raw"]})
        groups["material"].step(
            {"w_logit": grads["w_logit"], "alpha_raw": grads["alpha_raw"]}
        )
        trace[it] = (total, data, reg)
        state.iteration = it + 1

        if initial_loss is None:
            initial_loss = total
        if total > 1e3 * initial_loss:
            over_budget += 1
            if over_budget >= 100:
                _dump_divergence(state, config)
                raise RuntimeError(
                    f"fit diverged: loss {total:.3e} > 1000x initial for 100 iters"
                )
        else:
            over_budget = 0
        if (
            config.checkpoint_every
            and config.checkpoint_dir
            and (it + 1) % config.checkpoint_every == 0
        ):
            save_fit_outputs(Path(config.checkpoint_dir) / f"iter{it + 1:06d}", state, trace[: it + 1])

    return FitResult(
        bsdf=state.bsdf(), envmap=state.envmap(), trace=trace, state=state
    )


def _dump_divergence(state: FitState, config: FitConfig) -> None:
    out = Path(config.checkpoint_dir or ".") / "divergence_dump"
    try:
        save_fit_outputs(out, state, None)
    except OSError:
        pass


def save_fit_outputs(out_dir, state: FitState, trace) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state.envmap().save(out / "envmap.pfm")
    AlbedoTexture(state.albedo()).save(out / "albedo.pfm")
    payload = {
        "w": state.w(),
        "alpha": state.alpha(),
        "iteration": state.iteration,
    }
    if trace is not None:
        payload["loss_trace"] = np.asarray(trace).tolist()
    with open(out / "fit.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1)

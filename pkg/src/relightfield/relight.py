"""Noise-free relighting with the trained transfer field.

Per pixel: the center primary ray gives the surface point; the field is
evaluated for every environment texel and the contributions are summed,
weighted by texel radiance. There is no stochastic sampling, so repeated
runs are bit-identical and the output is exactly linear in the environment
map over foreground pixels.

Novel environment maps of any resolution are resampled to the training grid
by default (the field was supervised on that texel basis). With
``continuous=True`` the field is instead evaluated at the novel map's own
texel directions, weighting each contribution by the ratio of its solid
angle to the training texel's, which treats the learned transfer as a
density over incoming directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envmap import EnvironmentMap, texel_solid_angle_grid
from .field import TransferField
from .geometry import Camera
from .kernels import trace as ktrace
from .pathtracer import Scene, camera_arrays, scene_arrays


@dataclass
class RelightJob:
    checkpoint: str
    envmap_path: str
    camera: Camera
    output: str
    exposure: float = 1.0
    gamma: float = 2.2
    mask_only: bool = False  # black background instead of the envmap
    continuous: bool = False


def relight(
    tf: TransferField,
    envmap: EnvironmentMap,
    camera: Camera,
    scene: Scene,
    train_env_wh: tuple[int, int],
    mask_only: bool = False,
    continuous: bool = False,
) -> np.ndarray:
    """Relight one view; returns (H, W, 3) linear radiance."""
    h, w = camera.height, camera.width
    pixels = np.arange(h * w, dtype=np.int64)
    hit = np.zeros(h * w, dtype=np.uint8)
    pos = np.zeros((h * w, 3))
    nrm = np.zeros((h * w, 3))
    gn = np.zeros((h * w, 3))
    wo = np.zeros((h * w, 3))
    uv = np.zeros((h * w, 2))
    ktrace.primary_hits(
        *scene_arrays(scene.bvh), *camera_arrays(camera), pixels,
        hit, pos, nrm, gn, wo, uv,
    )
    fg = np.flatnonzero(hit)
    out = np.zeros((h * w, 3))

    if not mask_only:
        bg = np.flatnonzero(hit == 0)
        if bg.size:
            dirs = camera.primary_directions(
                np.stack([bg % w, bg // w], axis=1), np.full((bg.size, 2), 0.5)
            )
            out[bg] = envmap.lookup_bilinear(dirs)

    if fg.size:
        tw, th = train_env_wh
        if continuous:
            basis = envmap
            weights = basis.values.reshape(-1, 3) * (
                basis.texel_solid_angles().ravel()[:, None]
                / _matched_train_omega(basis, tw, th)[:, None]
            )
        else:
            basis = envmap if (envmap.width, envmap.height) == (tw, th) else envmap.resample(tw, th)
            weights = basis.values.reshape(-1, 3)
        dirs = basis.texel_directions().reshape(-1, 3)
        tmat = tf.eval_texel_matrix(pos[fg], nrm[fg], wo[fg], dirs)
        out[fg] = np.einsum("ptc,tc->pc", tmat.astype(np.float64), weights)

    return out.reshape(h, w, 3)


def _matched_train_omega(basis: EnvironmentMap, train_w: int, train_h: int) -> np.ndarray:
    """Solid angle of the training texel containing each basis texel center."""
    train_omega = texel_solid_angle_grid(train_w, train_h)
    dirs = basis.texel_directions().reshape(-1, 3)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0]) % (2.0 * np.pi)
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    tx = np.minimum((phi / (2 * np.pi) * train_w).astype(np.int64), train_w - 1)
    ty = np.minimum((theta / np.pi * train_h).astype(np.int64), train_h - 1)
    return train_omega[ty, tx]

"""Forward Monte Carlo renderer and OLAT dataset synthesis.

The estimator combines environment next-event estimation with BSDF sampling
via the balance heuristic, truncates paths at a fixed bounce count (no
Russian roulette), and is deterministic given (seed, pixel, sample index).
An optional deterministic-light-sum mode replaces light sampling with a full
sum over environment texels at every vertex; it is exactly linear in the
environment map and backs the linearity and OLAT superposition tests.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import pfm
from .bsdf import BlendedBsdf
from .envmap import EnvironmentMap
from .geometry import BvhTree, Camera, TriangleMesh, build_bvh, look_at
from .kernels import trace as ktrace
from .rng import stream64

TILE_PIXELS = 256


@dataclass
class RenderSettings:
    spp: int = 64
    max_bounces: int = 5
    seed: int = 0
    nee: bool = True  # next-event estimation (normal estimator)
    deterministic_light: bool = False  # sum over all texels at each vertex

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if not (1 <= self.max_bounces <= 16):
            raise ValueError("max_bounces must be in [1, 16]")


@dataclass
class Scene:
    mesh: TriangleMesh
    bvh: BvhTree = field(default=None)

    def __post_init__(self):
        if self.bvh is None:
            self.bvh = build_bvh(self.mesh)

    def center(self) -> np.ndarray:
        lo, hi = self.mesh.bounds()
        return 0.5 * (lo + hi)


def scene_arrays(bvh: BvhTree):
    return (
        *bvh.arrays(),
        bvh.n0,
        bvh.n1,
        bvh.n2,
        bvh.uv0,
        bvh.uv1,
        bvh.uv2,
    )


def camera_arrays(camera: Camera):
    tan_y = np.tan(np.radians(camera.fov_y) * 0.5)
    tan_x = tan_y * camera.width / camera.height
    return (
        np.ascontiguousarray(camera.origin),
        np.ascontiguousarray(camera.rotation),
        float(tan_x),
        float(tan_y),
        camera.width,
        camera.height,
    )


def env_arrays(env_eval: EnvironmentMap, env_sample: EnvironmentMap | None = None):
    """Kernel argument pack; ``env_sample`` drives the NEE distribution and
    MIS pdfs (defaults to the eval map). A black sampling map falls back to a
    solid-angle-uniform distribution so black renders stay well defined."""
    if env_sample is None:
        env_sample = env_eval
    if (env_sample.width, env_sample.height) != (env_eval.width, env_eval.height):
        raise ValueError("sample/eval environment grids must match")
    dirs = np.ascontiguousarray(env_eval.texel_directions().reshape(-1, 3))
    omega = np.ascontiguousarray(env_eval.texel_solid_angles().ravel())
    try:
        cdf, pdf_sr = env_sample.sampling_tables()
    except ValueError:
        prob = omega / omega.sum()
        cdf = np.cumsum(prob)
        cdf[-1] = 1.0
        pdf_sr = prob / omega
    return (
        env_eval.values,
        np.ascontiguousarray(env_eval.values.reshape(-1, 3)),
        dirs,
        omega,
        np.ascontiguousarray(cdf),
        np.ascontiguousarray(pdf_sr),
        env_eval.width,
        env_eval.height,
    )


def render(
    scene: Scene,
    camera: Camera,
    envmap: EnvironmentMap,
    bsdf: BlendedBsdf,
    settings: RenderSettings,
) -> np.ndarray:
    """Path-trace a full frame; returns (H, W, 3) linear radiance."""
    h, w = camera.height, camera.width
    pixels = np.arange(h * w, dtype=np.int64)
    out = np.zeros((h * w, 3), dtype=np.float64)
    bad = np.zeros(h * w, dtype=np.uint8)
    ktrace.trace_pixels(
        *scene_arrays(scene.bvh),
        *camera_arrays(camera),
        pixels,
        *env_arrays(envmap),
        bsdf.w,
        bsdf.alpha,
        bsdf.w,
        bsdf.alpha,
        bsdf.albedo.values,
        settings.spp,
        settings.max_bounces,
        settings.deterministic_light,
        scene.bvh.t_min,
        np.uint64(settings.seed),
        TILE_PIXELS,
        out,
        bad,
    )
    if bad.any():
        pid = int(pixels[np.flatnonzero(bad)[0]])
        raise RuntimeError(f"NaN radiance at pixel ({pid % w},{pid // w})")
    return out.reshape(h, w, 3)


def render_olat(
    scene: Scene,
    camera: Camera,
    texel: int,
    bsdf: BlendedBsdf,
    settings: RenderSettings,
    env_w: int,
    env_h: int,
    olat_radiance: float = 50.0,
) -> np.ndarray:
    """Render under a single lit texel (flat index) of an otherwise black map."""
    if not (0 <= texel < env_w * env_h):
        raise IndexError(f"texel {texel} outside {env_w}x{env_h} grid")
    env = EnvironmentMap.single_texel(texel, (olat_radiance,) * 3, env_w, env_h)
    return render(scene, camera, env, bsdf, settings)


def save_hdr(path, image: np.ndarray) -> None:
    """Write a PFM, clamping negative radiance to zero on output only."""
    pfm.write_pfm(path, np.maximum(np.asarray(image, dtype=np.float64), 0.0))


# --- OLAT dataset -----------------------------------------------------------


@dataclass
class OlatDataset:
    images: np.ndarray  # (N, H, W, 3) float32
    camera_ids: np.ndarray  # (N,)
    texel_ids: np.ndarray  # (N,)
    cameras: list[Camera]
    env_w: int
    env_h: int
    olat_radiance: float
    seed: int
    spp: int

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        records = []
        for i in range(self.n_images):
            name = f"olat_c{int(self.camera_ids[i]):03d}_t{int(self.texel_ids[i]):04d}.pfm"
            try:
                pfm.write_pfm(out / name, np.maximum(self.images[i], 0.0))
            except OSError as e:
                raise OSError(f"failed writing OLAT image {name}: {e}") from e
            records.append(
                {
                    "file": name,
                    "camera": int(self.camera_ids[i]),
                    "texel": int(self.texel_ids[i]),
                }
            )
        manifest = {
            "env_w": self.env_w,
            "env_h": self.env_h,
            "olat_radiance": self.olat_radiance,
            "seed": self.seed,
            "spp": self.spp,
            "images": records,
            "cameras": [
                {
                    "name": c.name or f"cam{i:03d}",
                    "world_from_camera": c.world_from_camera.reshape(-1).tolist(),
                    "fov_y": c.fov_y,
                    "width": c.width,
                    "height": c.height,
                }
                for i, c in enumerate(self.cameras)
            ],
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)

    @classmethod
    def load(cls, in_dir) -> "OlatDataset":
        src = Path(in_dir)
        with open(src / "manifest.json", "r", encoding="utf-8") as f:
            manifest = json.load(f)
        cams = [
            Camera(
                world_from_camera=np.asarray(r["world_from_camera"]).reshape(4, 4),
                fov_y=r["fov_y"],
                width=r["width"],
                height=r["height"],
                name=r.get("name", ""),
            )
            for r in manifest["cameras"]
        ]
        recs = manifest["images"]
        images = np.stack([pfm.read_pfm(src / r["file"]) for r in recs]).astype(
            np.float32
        )
        return cls(
            images=images,
            camera_ids=np.array([r["camera"] for r in recs], dtype=np.int32),
            texel_ids=np.array([r["texel"] for r in recs], dtype=np.int32),
            cameras=cams,
            env_w=int(manifest["env_w"]),
            env_h=int(manifest["env_h"]),
            olat_radiance=float(manifest["olat_radiance"]),
            seed=int(manifest["seed"]),
            spp=int(manifest["spp"]),
        )


def fibonacci_sphere_cameras(
    n: int,
    center,
    radius: float,
    template: Camera,
    min_z: float = 0.15,
    max_z: float = 0.85,
) -> list[Camera]:
    """Extra viewpoints on a spherical cap, golden-angle spaced, looking at
    the scene center with the template camera's intrinsics."""
    center = np.asarray(center, dtype=np.float64)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    for i in range(n):
        z = min_z + (max_z - min_z) * (i + 0.5) / n
        r = np.sqrt(max(0.0, 1.0 - z * z))
        phi = golden * i
        eye = center + radius * np.array([r * np.cos(phi), r * np.sin(phi), z])
        cams.append(
            Camera(
                world_from_camera=look_at(eye, center),
                fov_y=template.fov_y,
                width=template.width,
                height=template.height,
                name=f"olat_extra{i:03d}",
            )
        )
    return cams


def synthesize_olat_dataset(
    scene: Scene,
    cameras: list[Camera],
    env_w: int,
    env_h: int,
    bsdf: BlendedBsdf,
    settings: RenderSettings,
    olat_radiance: float = 50.0,
    n_extra_cameras: int | None = None,
) -> OlatDataset:
    """Render every (camera, texel) pair: the input poses plus extra views
    sampled on the viewing sphere at the mean camera distance."""
    if not cameras:
        raise ValueError("need at least one camera")
    center = scene.center()
    radius = float(
        np.mean([np.linalg.norm(c.origin - center) for c in cameras])
    )
    n_extra = len(cameras) if n_extra_cameras is None else n_extra_cameras
    all_cams = list(cameras) + fibonacci_sphere_cameras(
        n_extra, center, radius, cameras[0]
    )
    n_e = env_w * env_h
    h, w = all_cams[0].height, all_cams[0].width
    images = np.zeros((len(all_cams) * n_e, h, w, 3), dtype=np.float32)
    camera_ids = np.zeros(len(all_cams) * n_e, dtype=np.int32)
    texel_ids = np.zeros(len(all_cams) * n_e, dtype=np.int32)
    i = 0
    for ci, cam in enumerate(all_cams):
        if (cam.height, cam.width) != (h, w):
            raise ValueError("all OLAT cameras must share a resolution")
        for t in range(n_e):
            per_image = replace(
                settings, seed=int(stream64(np.uint64(settings.seed), ci, t))
            )
            images[i] = render_olat(
                scene, cam, t, bsdf, per_image, env_w, env_h, olat_radiance
            )
            camera_ids[i] = ci
            texel_ids[i] = t
            i += 1
    return OlatDataset(
        images=images,
        camera_ids=camera_ids,
        texel_ids=texel_ids,
        cameras=all_cams,
        env_w=env_w,
        env_h=env_h,
        olat_radiance=olat_radiance,
        seed=settings.seed,
        spp=settings.spp,
    )

"""Scene bundles: TOML configs, bundled test-scene generators, presets.

A scene directory holds a mesh (OBJ with UVs and normals), a camera file
(JSON), ground-truth lighting/material for synthetic scenes (PFM + TOML
values), and presets that size the pipeline (desk for quick runs, paper for
publication-scale iteration counts).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bsdf import AlbedoTexture, BlendedBsdf
from .envmap import EnvironmentMap, texel_direction_grid
from .geometry import (
    Camera,
    TriangleMesh,
    compute_vertex_normals,
    load_cameras,
    load_obj,
    look_at,
    save_cameras,
    save_obj,
)

# --- procedural test assets ---------------------------------------------------


def make_uv_sphere(
    n_theta: int = 24, n_phi: int = 48, radius: float = 1.0, center=(0, 0, 0),
    v_range=(0.0, 1.0),
) -> TriangleMesh:
    """Lat-long sphere with a duplicated seam column so UVs stay clean."""
    center = np.asarray(center, dtype=np.float64)
    verts, norms, uvs = [], [], []
    v0, v1 = v_range
    for i in range(n_theta + 1):
        theta = np.pi * i / n_theta
        for j in range(n_phi + 1):
            phi = 2 * np.pi * j / n_phi
            d = np.array(
                [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
            )
            verts.append(center + radius * d)
            norms.append(d)
            uvs.append([j / n_phi, v0 + (v1 - v0) * i / n_theta])
    tris = []
    cols = n_phi + 1
    for i in range(n_theta):
        for j in range(n_phi):
            a = i * cols + j
            b = a + 1
            c = a + cols
            d = c + 1
            if i > 0:
                tris.append([a, b, c])
            if i < n_theta - 1:
                tris.append([b, d, c])
    return TriangleMesh(
        vertices=np.asarray(verts),
        triangles=np.asarray(tris, dtype=np.int32),
        vertex_normals=np.asarray(norms),
        uvs=np.asarray(uvs),
    )


def make_probe_mesh() -> TriangleMesh:
    """The bundled test object: a sphere resting on a square ground patch.

    The ground gives the scene a shadow and a bounce surface, so both
    occlusion and indirect light show up in renders. UVs: sphere rows in
    v in [0, 0.46], ground patch in v in [0.54, 1].
    """
    sphere = make_uv_sphere(
        n_theta=20, n_phi=30, radius=0.35, center=(0.0, 0.0, 0.36),
        v_range=(0.0, 0.46),
    )
    s = 0.55
    gv = np.array([[-s, -s, 0.0], [s, -s, 0.0], [s, s, 0.0], [-s, s, 0.0]])
    g_uv = np.array([[0.0, 0.54], [1.0, 0.54], [1.0, 1.0], [0.0, 1.0]])
    g_n = np.tile([0.0, 0.0, 1.0], (4, 1))
    base = sphere.vertices.shape[0]
    return TriangleMesh(
        vertices=np.vstack([sphere.vertices, gv]),
        triangles=np.vstack(
            [
                sphere.triangles,
                np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32) + base,
            ]
        ).astype(np.int32),
        vertex_normals=np.vstack([sphere.vertex_normals, g_n]),
        uvs=np.vstack([sphere.uvs, g_uv]),
    )


def make_probe_albedo(res: int = 128) -> AlbedoTexture:
    """Smooth low-frequency ground-truth albedo: a warm/cool blend on the
    sphere rows and a neutral gradient on the ground rows."""
    y, x = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    u = (x + 0.5) / res
    v = (y + 0.5) / res
    tex = np.zeros((res, res, 3))
    sphere_rows = v < 0.5
    swirl = 0.5 + 0.5 * np.sin(2 * np.pi * (u * 2.0 + v)) * np.cos(np.pi * v * 3.0)
    tex[..., 0] = np.where(sphere_rows, 0.55 + 0.3 * swirl, 0.42 + 0.2 * u)
    tex[..., 1] = np.where(sphere_rows, 0.35 + 0.25 * swirl, 0.40 + 0.15 * u)
    tex[..., 2] = np.where(sphere_rows, 0.25 + 0.15 * (1 - swirl), 0.38 + 0.1 * u)
    return AlbedoTexture(np.clip(tex, 0.02, 0.98))


def make_sky_envmap(
    width: int,
    height: int,
    sun_dir=(0.5, 0.3, 0.8),
    sun_intensity: float = 18.0,
    sun_sharpness: float = 32.0,
    sky_tint=(0.35, 0.45, 0.7),
    ground_tint=(0.25, 0.2, 0.16),
    ambient: float = 0.25,
) -> EnvironmentMap:
    """Smooth analytic sky: hemisphere gradient plus one Gaussian sun blob."""
    dirs = texel_direction_grid(width, height)
    z = dirs[..., 2]
    sky_w = np.clip(z, 0, 1)[..., None]
    gnd_w = np.clip(-z, 0, 1)[..., None]
    base = (
        ambient
        + sky_w * np.asarray(sky_tint)
        + gnd_w * np.asarray(ground_tint)
    )
    sd = np.asarray(sun_dir, dtype=np.float64)
    sd = sd / np.linalg.norm(sd)
    cosang = dirs @ sd
    blob = np.exp(sun_sharpness * (cosang - 1.0))[..., None]
    sun = sun_intensity * blob * np.array([1.0, 0.95, 0.85])
    return EnvironmentMap(base + sun)


def make_ring_cameras(
    n: int,
    center,
    radius: float,
    elevation_deg: float,
    fov_y: float,
    width: int,
    height: int,
    phase: float = 0.0,
    prefix: str = "cam",
) -> list[Camera]:
    center = np.asarray(center, dtype=np.float64)
    cams = []
    el = np.radians(elevation_deg)
    for i in range(n):
        phi = phase + 2 * np.pi * i / n
        eye = center + radius * np.array(
            [np.cos(el) * np.cos(phi), np.cos(el) * np.sin(phi), np.sin(el)]
        )
        cams.append(
            Camera(
                world_from_camera=look_at(eye, center),
                fov_y=fov_y,
                width=width,
                height=height,
                name=f"{prefix}{i:03d}",
            )
        )
    return cams


# --- scene config ---------------------------------------------------------------


@dataclass
class SceneConfig:
    name: str
    root: Path
    mesh_path: Path
    cameras_path: Path
    gt_envmap_path: Path | None
    relight_envmap_path: Path | None
    gt_w: float | None
    gt_alpha: float | None
    gt_albedo_path: Path | None
    holdout_names: list[str]
    gt_spp: int
    presets: dict = field(default_factory=dict)

    def load_mesh(self) -> TriangleMesh:
        return load_obj(self.mesh_path)

    def load_cameras(self) -> list[Camera]:
        return load_cameras(self.cameras_path)

    def split_cameras(self) -> tuple[list[Camera], list[Camera]]:
        """(training cameras, holdout cameras)."""
        cams = self.load_cameras()
        train = [c for c in cams if c.name not in self.holdout_names]
        hold = [c for c in cams if c.name in self.holdout_names]
        return train, hold

    def gt_envmap(self) -> EnvironmentMap:
        if self.gt_envmap_path is None:
            raise ValueError("scene has no ground-truth environment map")
        return EnvironmentMap.load(self.gt_envmap_path)

    def relight_envmap(self) -> EnvironmentMap:
        if self.relight_envmap_path is None:
            raise ValueError("scene has no relighting environment map")
        return EnvironmentMap.load(self.relight_envmap_path)

    def gt_bsdf(self) -> BlendedBsdf:
        if self.gt_w is None or self.gt_alpha is None:
            raise ValueError("scene has no ground-truth material")
        if self.gt_albedo_path is not None:
            albedo = AlbedoTexture.load(self.gt_albedo_path)
        else:
            albedo = AlbedoTexture.constant((0.5, 0.5, 0.5))
        return BlendedBsdf(w=self.gt_w, alpha=self.gt_alpha, albedo=albedo)

    def preset(self, name: str) -> dict:
        if name not in self.presets:
            raise KeyError(f"scene has no preset {name!r}")
        return dict(self.presets[name])


def load_scene_config(path) -> SceneConfig:
    path = Path(path)
    with open(path, "rb") as f:
        data = tomllib.load(f)
    root = path.parent
    scene = data.get("scene", {})
    lighting = data.get("lighting", {})
    bsdf_gt = data.get("bsdf_gt", {})
    render = data.get("render", {})

    def respath(key_dict, key):
        val = key_dict.get(key)
        return (root / val) if val else None

    mesh_path = respath(scene, "mesh")
    cameras_path = respath(scene, "cameras")
    if mesh_path is None or cameras_path is None:
        raise ValueError(f"{path}: scene.mesh and scene.cameras are required")
    return SceneConfig(
        name=scene.get("name", path.stem),
        root=root,
        mesh_path=mesh_path,
        cameras_path=cameras_path,
        gt_envmap_path=respath(lighting, "gt_envmap"),
        relight_envmap_path=respath(lighting, "relight_envmap"),
        gt_w=bsdf_gt.get("w"),
        gt_alpha=bsdf_gt.get("alpha"),
        gt_albedo_path=respath(bsdf_gt, "albedo"),
        holdout_names=list(scene.get("holdout", [])),
        gt_spp=int(render.get("gt_spp", 192)),
        presets=data.get("presets", {}),
    )


DESK_PRESET = {
    "env_w": 16,
    "env_h": 8,
    "albedo_res": 128,
    "fit_iters": 3000,
    "fit_pixel_budget": 2048,
    "fit_spp": 8,
    "olat_spp": 16,
    "olat_extra_cameras": 8,
    "olat_radiance": 50.0,
    "pretrain_iters": 20000,
    "joint_iters": 10000,
    "rays_per_image": 48,
    "real_rays_per_image": 8,
    "grid_finest": 256,
}

PAPER_PRESET = {
    "env_w": 32,
    "env_h": 16,
    "albedo_res": 512,
    "fit_iters": 3000,
    "fit_pixel_budget": 4096,
    "fit_spp": 16,
    "olat_spp": 64,
    "olat_extra_cameras": 32,
    "olat_radiance": 50.0,
    "pretrain_iters": 150000,
    "joint_iters": 100000,
    "rays_per_image": 1024,
    "real_rays_per_image": 128,
    "grid_finest": 256,
}


def generate_probe_bundle(out_dir, seed: int = 0) -> Path:
    """Write the bundled probe scene: mesh, cameras, GT material and
    lighting, plus desk/paper presets. Returns the TOML path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = make_probe_mesh()
    save_obj(out / "probe.obj", mesh)

    center = (0.0, 0.0, 0.30)
    train = make_ring_cameras(
        8, center, radius=4.0, elevation_deg=31.0, fov_y=30.0, width=64, height=64
    )
    hold = make_ring_cameras(
        2, center, radius=4.0, elevation_deg=42.0, fov_y=30.0,
        width=128, height=128, phase=0.4, prefix="hold",
    )
    save_cameras(out / "cameras.json", train + hold)

    make_probe_albedo(128).save(out / "albedo_gt.pfm")
    make_sky_envmap(16, 8, sun_dir=(0.5, 0.3, 0.8), sun_intensity=18.0).save(
        out / "envmap_gt.pfm"
    )
    make_sky_envmap(
        16, 8, sun_dir=(-0.6, 0.5, 0.55), sun_intensity=14.0,
        sky_tint=(0.55, 0.35, 0.3), ground_tint=(0.15, 0.18, 0.22),
    ).save(out / "envmap_novel.pfm")
    make_sky_envmap(32, 16, sun_dir=(0.5, 0.3, 0.8), sun_intensity=18.0).save(
        out / "envmap_gt_32x16.pfm"
    )

    def preset_toml(name, preset):
        lines = [f"[presets.{name}]"]
        for k, v in preset.items():
            lines.append(f"{k} = {v}")
        return "\n".join(lines)

    toml_text = f"""# bundled probe scene (generated by scripts/gen_probe_scene.py)
[scene]
name = "probe"
mesh = "probe.obj"
cameras = "cameras.json"
holdout = ["hold000", "hold001"]

[lighting]
gt_envmap = "envmap_gt.pfm"
relight_envmap = "envmap_novel.pfm"

[bsdf_gt]
w = 0.3
alpha = 0.15
albedo = "albedo_gt.pfm"

[render]
gt_spp = 192

{preset_toml("desk", DESK_PRESET)}

{preset_toml("paper", PAPER_PRESET)}
"""
    toml_path = out / "probe.toml"
    toml_path.write_text(toml_text, encoding="utf-8")

    # companion config for the lighting/material recovery experiment:
    # 16 views, 32x16 environment grid
    rec_train = make_ring_cameras(
        12, center, radius=4.0, elevation_deg=30.0, fov_y=30.0, width=64, height=64
    ) + make_ring_cameras(
        4, center, radius=3.6, elevation_deg=55.0, fov_y=30.0,
        width=64, height=64, phase=0.7, prefix="top",
    )
    save_cameras(out / "cameras_recovery.json", rec_train)
    rec_text = f"""# stage-1 recovery experiment: 16 views, 32x16 lighting grid
[scene]
name = "probe-recovery"
mesh = "probe.obj"
cameras = "cameras_recovery.json"

[lighting]
gt_envmap = "envmap_gt_32x16.pfm"

[bsdf_gt]
w = 0.3
alpha = 0.15
albedo = "albedo_gt.pfm"

[render]
gt_spp = 192

{preset_toml("desk", {**DESK_PRESET, "env_w": 32, "env_h": 16})}

{preset_toml("paper", PAPER_PRESET)}
"""
    (out / "recovery.toml").write_text(rec_text, encoding="utf-8")
    return toml_path

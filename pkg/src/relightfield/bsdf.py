"""Blended surface reflectance: a white GGX rough conductor mixed with a
textured Lambertian lobe by a global weight w.

rho = w * f_ggx(alpha) + (1 - w) * A(uv) / pi

The conductor is achromatic (Schlick Fresnel with F0 = (1,1,1), which is
identically one), so all color variation lives in the diffuse texture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pfm
from .kernels import shade as ksh

ALPHA_MIN = 0.01


@dataclass
class AlbedoTexture:
    values: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray | None = None  # texels covered by the UV layout

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError("albedo texture must be (H,W,3)")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("albedo values must lie in [0,1]")
        self.values = v
        if self.mask is not None:
            self.mask = np.ascontiguousarray(self.mask, dtype=bool)
            if self.mask.shape != v.shape[:2]:
                raise ValueError("mask shape must match texture")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    @classmethod
    def constant(cls, rgb, width: int = 512, height: int = 512) -> "AlbedoTexture":
        v = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3))
        return cls(v.copy())

    @classmethod
    def load(cls, path) -> "AlbedoTexture":
        return cls(np.clip(pfm.read_pfm(path), 0.0, 1.0))

    def save(self, path) -> None:
        pfm.write_pfm(path, self.values)

    def sample(self, uv: np.ndarray) -> np.ndarray:
        """Bilinear lookup for (..., 2) UVs in [0,1]^2."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        out = np.empty(uv.shape[:-1] + (3,))
        flat_uv = uv.reshape(-1, 2)
        flat_out = out.reshape(-1, 3)
        for i in range(flat_uv.shape[0]):
            flat_out[i] = ksh.albedo_at(self.values, flat_uv[i, 0], flat_uv[i, 1])
        return out


def rasterize_uv_mask(mesh, width: int, height: int, dilate: int = 1) -> np.ndarray:
    """Texels covered by the mesh UV layout.

    Conservative point-in-triangle rasterization at texel centers, then a
    square dilation so the bilinear footprints of surface lookups stay inside
    the mask.
    """
    mask = np.zeros((height, width), dtype=bool)
    uv = mesh.uvs
    for tri in mesh.triangles:
        a, b, c = uv[tri[0]], uv[tri[1]], uv[tri[2]]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        x0 = max(int(np.floor(lo[0] * width - 0.5)), 0)
        x1 = min(int(np.ceil(hi[0] * width - 0.5)) + 1, width)
        y0 = max(int(np.floor(lo[1] * height - 0.5)), 0)
        y1 = min(int(np.ceil(hi[1] * height - 0.5)) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = (np.arange(x0, x1) + 0.5) / width
        ys = (np.arange(y0, y1) + 0.5) / height
        px, py = np.meshgrid(xs, ys)
        d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(d) < 1e-16:
            continue
        wa = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / d
        wb = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / d
        wc = 1.0 - wa - wb
        eps = -1e-9
        inside = (wa >= eps) & (wb >= eps) & (wc >= eps)
        mask[y0:y1, x0:x1] |= inside
    if dilate > 0:
        padded = np.pad(mask, dilate)
        out = np.zeros_like(mask)
        for dy in range(-dilate, dilate + 1):
            for dx in range(-dilate, dilate + 1):
                out |= padded[
                    dilate + dy : dilate + dy + height,
                    dilate + dx : dilate + dx + width,
                ]
        mask = out
    return mask


@dataclass
class BlendedBsdf:
    w: float  # specular fraction in [0, 1]
    alpha: float  # GGX roughness in (0, 1]
    albedo: AlbedoTexture = field(
        default_factory=lambda: AlbedoTexture.constant((0.5, 0.5, 0.5))
    )

    def __post_init__(self):
        if not (0.0 <= self.w <= 1.0):
            raise ValueError(f"blend weight must be in [0,1], got {self.w}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"roughness must be in (0,1], got {self.alpha}")


def eval_bsdf(bsdf: BlendedBsdf, uv, n, wi, wo) -> np.ndarray:
    """BSDF value (per steradian) for unit vectors; zero outside the upper
    hemisphere. Helmholtz-reciprocal in (wi, wo)."""
    n = np.asarray(n, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    for v, name in ((n, "n"), (wi, "wi"), (wo, "wo")):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError(f"{name} must be unit length")
    return np.array(
        ksh.bsdf_eval(
            bsdf.w, bsdf.alpha, bsdf.albedo.values, uv[0], uv[1],
            n[0], n[1], n[2], wi[0], wi[1], wi[2], wo[0], wo[1], wo[2],
        )
    )


def pdf_bsdf(bsdf: BlendedBsdf, n, wi, wo) -> float:
    n = np.asarray(n, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    return float(
        ksh.bsdf_pdf(
            bsdf.w, bsdf.alpha,
            n[0], n[1], n[2], wi[0], wi[1], wi[2], wo[0], wo[1], wo[2],
        )
    )


def sample_bsdf(bsdf: BlendedBsdf, uv, n, wo, u: tuple[float, float, float]):
    """Draw an incoming direction from the mixture sampler.

    Returns (wi, pdf, throughput) with throughput = f * cos / pdf. Raises on
    a degenerate draw (numerically dead sample).
    """
    n = np.asarray(n, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    wix, wiy, wiz, pdf = ksh.sample_bsdf_dir(
        bsdf.w, bsdf.alpha, n[0], n[1], n[2], wo[0], wo[1], wo[2], u[0], u[1], u[2]
    )
    if pdf <= 0.0:
        raise ValueError("degenerate sample from rng stream")
    wi = np.array([wix, wiy, wiz])
    f = eval_bsdf(bsdf, uv, n, wi, wo)
    ci = float(wi @ n)
    return wi, pdf, f * ci / pdf

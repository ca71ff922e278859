"""Lat-long environment maps.

Grid convention: row 0 is the +z pole cap, rows sweep polar angle down to -z,
azimuth 0 points along +x and increases eastward (towards +y) with the column
index. Texel (x, y) covers the band
``theta in [pi*y/H, pi*(y+1)/H], phi in [2*pi*x/W, 2*pi*(x+1)/W]`` and is
represented by its center direction. Radiance is linear HDR, one RGB triple
per texel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pfm

_LUMA = np.array([0.2126, 0.7152, 0.0722])


def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ _LUMA


def texel_direction_grid(width: int, height: int) -> np.ndarray:
    """Texel-center directions of a lat-long grid, shape (H, W, 3)."""
    theta = np.pi * (np.arange(height) + 0.5) / height
    phi = 2.0 * np.pi * (np.arange(width) + 0.5) / width
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    d = np.empty((height, width, 3))
    d[..., 0] = st * np.cos(phi)[None, :]
    d[..., 1] = st * np.sin(phi)[None, :]
    d[..., 2] = np.broadcast_to(ct, (height, width))
    return d


def texel_solid_angle_grid(width: int, height: int) -> np.ndarray:
    """Per-texel solid angles (H, W); rows are constant and sum to 4*pi."""
    edges = np.cos(np.pi * np.arange(height + 1) / height)
    band = edges[:-1] - edges[1:]
    return np.broadcast_to(
        (2.0 * np.pi / width) * band[:, None], (height, width)
    ).copy()


@dataclass
class EnvironmentMap:
    values: np.ndarray  # (H, W, 3) float64, finite, >= 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"environment map must be (H,W,3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("environment map has non-finite texels")
        if np.any(v < 0):
            raise ValueError("environment map has negative texels")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_texels(self) -> int:
        return self.height * self.width

    @classmethod
    def constant(cls, rgb, width: int = 32, height: int = 16) -> "EnvironmentMap":
        v = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3))
        return cls(v.copy())

    @classmethod
    def single_texel(
        cls, texel: int, radiance, width: int, height: int
    ) -> "EnvironmentMap":
        """Map that is ``radiance`` at one flat texel index and black elsewhere."""
        v = np.zeros((height, width, 3))
        y, x = divmod(int(texel), width)
        v[y, x] = np.asarray(radiance, dtype=np.float64)
        return cls(v)

    @classmethod
    def load(cls, path) -> "EnvironmentMap":
        return cls(pfm.read_pfm(path))

    def save(self, path) -> None:
        pfm.write_pfm(path, self.values)

    # --- texel geometry ---------------------------------------------------

    def texel_direction(self, x: int, y: int) -> np.ndarray:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexError(f"texel ({x},{y}) outside {self.width}x{self.height} grid")
        return self.texel_directions()[y, x]

    def texel_directions(self) -> np.ndarray:
        """Center directions for the whole grid, shape (H, W, 3)."""
        if "dirs" not in self._cache:
            self._cache["dirs"] = texel_direction_grid(self.width, self.height)
        return self._cache["dirs"]

    def direction_to_texel(self, direction) -> tuple[int, int]:
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        phi = np.arctan2(d[1], d[0]) % (2.0 * np.pi)
        theta = np.arccos(np.clip(d[2], -1.0, 1.0))
        x = min(int(phi / (2.0 * np.pi) * self.width), self.width - 1)
        y = min(int(theta / np.pi * self.height), self.height - 1)
        return x, y

    def texel_solid_angle(self, x: int, y: int) -> float:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexError(f"texel ({x},{y}) outside {self.width}x{self.height} grid")
        return float(self.texel_solid_angles()[y, x])

    def texel_solid_angles(self) -> np.ndarray:
        """Per-texel solid angles (H, W); rows are constant, total is 4*pi."""
        if "omega" not in self._cache:
            self._cache["omega"] = texel_solid_angle_grid(self.width, self.height)
        return self._cache["omega"]

    # --- lookups ----------------------------------------------------------

    def lookup_nearest(self, directions: np.ndarray) -> np.ndarray:
        d = np.asarray(directions, dtype=np.float64)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        phi = np.arctan2(d[..., 1], d[..., 0]) % (2.0 * np.pi)
        theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        x = np.minimum((phi / (2.0 * np.pi) * self.width).astype(np.int64), self.width - 1)
        y = np.minimum((theta / np.pi * self.height).astype(np.int64), self.height - 1)
        return self.values[y, x]

    def lookup_bilinear(self, directions: np.ndarray) -> np.ndarray:
        """Bilinear interpolation in lat-long space, wrapping in azimuth and
        clamping rows at the poles."""
        d = np.asarray(directions, dtype=np.float64)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        h, w = self.height, self.width
        phi = np.arctan2(d[..., 1], d[..., 0]) % (2.0 * np.pi)
        theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        u = phi / (2.0 * np.pi) * w - 0.5
        v = theta / np.pi * h - 0.5
        x0 = np.floor(u).astype(np.int64)
        y0 = np.floor(v).astype(np.int64)
        fx = u - x0
        fy = v - y0
        x1 = (x0 + 1) % w
        x0 = x0 % w
        y1 = np.clip(y0 + 1, 0, h - 1)
        y0 = np.clip(y0, 0, h - 1)
        fx = fx[..., None]
        fy = fy[..., None]
        top = self.values[y0, x0] * (1 - fx) + self.values[y0, x1] * fx
        bot = self.values[y1, x0] * (1 - fx) + self.values[y1, x1] * fx
        return top * (1 - fy) + bot * fy

    # --- sampling ---------------------------------------------------------

    def sampling_tables(self):
        """CDF over flattened texels (luminance x solid angle) and per-texel
        pdf in 1/steradian. Raises on an all-black map."""
        if "cdf" not in self._cache:
            omega = self.texel_solid_angles().ravel()
            weight = luminance(self.values.reshape(-1, 3)) * omega
            total = weight.sum()
            if total <= 0.0:
                raise ValueError("no light: environment map is black")
            prob = weight / total
            cdf = np.cumsum(prob)
            cdf[-1] = 1.0
            self._cache["cdf"] = cdf
            self._cache["pdf_sr"] = prob / omega
        return self._cache["cdf"], self._cache["pdf_sr"]

    def sample_texel(self, u: float) -> tuple[int, float]:
        """Map a uniform u in [0,1) to (flat texel index, pdf per steradian)."""
        cdf, pdf_sr = self.sampling_tables()
        idx = int(np.searchsorted(cdf, u, side="right"))
        idx = min(idx, cdf.size - 1)
        return idx, float(pdf_sr[idx])

    # --- resampling -------------------------------------------------------

    def resample(self, width: int, height: int) -> "EnvironmentMap":
        """Change grid resolution.

        Downsampling averages source texels that fall in each target bin,
        weighted by source solid angle; upsampling interpolates bilinearly at
        the target texel centers. Either way total energy is approximately
        preserved and the operation is deterministic.
        """
        if (width, height) == (self.width, self.height):
            return EnvironmentMap(self.values.copy())
        if width <= self.width and height <= self.height:
            dirs = self.texel_directions().reshape(-1, 3)
            omega = self.texel_solid_angles().ravel()
            phi = np.arctan2(dirs[:, 1], dirs[:, 0]) % (2.0 * np.pi)
            theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
            tx = np.minimum((phi / (2.0 * np.pi) * width).astype(np.int64), width - 1)
            ty = np.minimum((theta / np.pi * height).astype(np.int64), height - 1)
            flat = ty * width + tx
            acc = np.zeros((width * height, 3))
            wsum = np.zeros(width * height)
            np.add.at(acc, flat, self.values.reshape(-1, 3) * omega[:, None])
            np.add.at(wsum, flat, omega)
            if np.any(wsum <= 0):
                raise ValueError("resample target too fine for source grid")
            return EnvironmentMap((acc / wsum[:, None]).reshape(height, width, 3))
        target = EnvironmentMap(np.zeros((height, width, 3)))
        centers = target.texel_directions().reshape(-1, 3)
        return EnvironmentMap(
            self.lookup_bilinear(centers).reshape(height, width, 3)
        )

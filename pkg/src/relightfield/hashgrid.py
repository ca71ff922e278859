"""Multiresolution feature-grid position encoding.

Sixteen trilinearly-interpolated feature grids with geometrically spaced
resolutions cover a cubic domain around the mesh. Instead of hashing, every
grid vertex that borders a voxel near the mesh surface gets its own table
slot (an injective voxel-to-slot map), so lookups are collision-free by
construction. Concatenating the per-level interpolations yields the
position feature (L levels x F features = 256 dims at the defaults).

Queries are expected to lie on the mesh surface and therefore inside the
registered shell; stray points are clamped to the nearest registered voxel
center of the finest level and counted, never hashed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accel import njit, prange
from .kernels import geom as kgeom


@dataclass
class HashGridConfig:
    n_levels: int = 16
    n_features: int = 16
    base_resolution: int = 16
    finest_resolution: int = 256
    shell_diagonals: float = 2.0  # shell half-width, in voxel diagonals
    padding: float = 0.05  # cubic domain margin around the mesh bbox

    @property
    def out_dim(self) -> int:
        return self.n_levels * self.n_features

    def level_resolutions(self) -> np.ndarray:
        b = np.exp(
            np.log(self.finest_resolution / self.base_resolution)
            / (self.n_levels - 1)
        )
        res = np.floor(self.base_resolution * b ** np.arange(self.n_levels))
        return res.astype(np.int64)


@njit(cache=True, parallel=True)
def _encode_batch(
    p, level_res, corner_ids, level_off, table, n_feat, out, idx_out, wgt_out, ok
):
    n = p.shape[0]
    n_levels = level_res.shape[0]
    for b in prange(n):
        px = min(max(p[b, 0], 0.0), 1.0 - 1e-9)
        py = min(max(p[b, 1], 0.0), 1.0 - 1e-9)
        pz = min(max(p[b, 2], 0.0), 1.0 - 1e-9)
        good = 1
        for lv in range(n_levels):
            res = level_res[lv]
            fx = px * res
            fy = py * res
            fz = pz * res
            ix = int(fx)
            iy = int(fy)
            iz = int(fz)
            if ix > res - 1:
                ix = res - 1
            if iy > res - 1:
                iy = res - 1
            if iz > res - 1:
                iz = res - 1
            ax = fx - ix
            ay = fy - iy
            az = fz - iz
            stride = res + 1
            lo = level_off[lv]
            hi = level_off[lv + 1]
            c = 0
            for dx in range(2):
                wx = ax if dx == 1 else 1.0 - ax
                for dy in range(2):
                    wy = ay if dy == 1 else 1.0 - ay
                    for dz in range(2):
                        wz = az if dz == 1 else 1.0 - az
                        cid = ((ix + dx) * stride + (iy + dy)) * stride + (iz + dz)
                        # binary search within this level's sorted corner ids
                        a = lo
                        z = hi
                        while a < z:
                            mid = (a + z) // 2
                            if corner_ids[mid] < cid:
                                a = mid + 1
                            else:
                                z = mid
                        if a >= hi or corner_ids[a] != cid:
                            good = 0
                            idx_out[b, lv, c] = -1
                            wgt_out[b, lv, c] = 0.0
                        else:
                            idx_out[b, lv, c] = a
                            wgt_out[b, lv, c] = wx * wy * wz
                        c += 1
            base = lv * n_feat
            for f in range(n_feat):
                acc = 0.0
                for cc in range(8):
                    s = idx_out[b, lv, cc]
                    if s >= 0:
                        acc += wgt_out[b, lv, cc] * table[s, f]
                out[b, base + f] = acc
        ok[b] = good


@njit(cache=True)
def _scatter_grads(idx, wgt, d_out, n_feat, slots, contribs):
    """Flatten per-sample corner gradients into (slot, row) pairs."""
    n, n_levels, _ = idx.shape
    k = 0
    for b in range(n):
        for lv in range(n_levels):
            base = lv * n_feat
            for c in range(8):
                s = idx[b, lv, c]
                w = wgt[b, lv, c]
                slots[k] = s
                for f in range(n_feat):
                    contribs[k, f] = w * d_out[b, base + f]
                k += 1


class HashGridEncoder:
    def __init__(
        self,
        config: HashGridConfig,
        domain_lo: np.ndarray,
        domain_size: float,
        corner_ids: np.ndarray,
        level_offsets: np.ndarray,
        table: np.ndarray | None = None,
        dtype=np.float32,
        init_scale: float = 1e-4,
        seed: int = 0,
    ):
        self.config = config
        self.domain_lo = np.asarray(domain_lo, dtype=np.float64)
        self.domain_size = float(domain_size)
        self.corner_ids = np.ascontiguousarray(corner_ids, dtype=np.int64)
        self.level_offsets = np.ascontiguousarray(level_offsets, dtype=np.int64)
        self.level_res = config.level_resolutions()
        self.out_of_shell_count = 0
        self._finest_centers = None
        if table is not None:
            self.table = np.ascontiguousarray(table, dtype=dtype)
        else:
            rng = np.random.Generator(np.random.Philox(key=[seed, 0xA11CE]))
            self.table = (
                rng.uniform(-init_scale, init_scale, (self.n_slots, config.n_features))
            ).astype(dtype)

    @property
    def n_slots(self) -> int:
        return int(self.level_offsets[-1])

    @classmethod
    def build(
        cls,
        mesh,
        config: HashGridConfig | None = None,
        dtype=np.float32,
        seed: int = 0,
    ) -> "HashGridEncoder":
        """Register near-surface voxels level by level and assign each unique
        cell corner a table slot."""
        config = config or HashGridConfig()
        lo, hi = mesh.bounds()
        center = 0.5 * (lo + hi)
        half = 0.5 * float(np.max(hi - lo)) * (1.0 + config.padding)
        domain_lo = center - half
        domain_size = 2.0 * half

        tris = mesh.triangles.astype(np.int64)
        ids_per_level = []
        offsets = [0]
        for res in config.level_resolutions():
            res = int(res)
            scale = res / domain_size
            gv0 = np.ascontiguousarray((mesh.vertices[tris[:, 0]] - domain_lo) * scale)
            gv1 = np.ascontiguousarray((mesh.vertices[tris[:, 1]] - domain_lo) * scale)
            gv2 = np.ascontiguousarray((mesh.vertices[tris[:, 2]] - domain_lo) * scale)
            radius = config.shell_diagonals * np.sqrt(3.0)
            marks = np.zeros(res * res * res, dtype=np.uint8)
            kgeom.mark_shell(gv0, gv1, gv2, res, radius, marks)
            vox = np.flatnonzero(marks).astype(np.int64)
            if vox.size == 0:
                raise ValueError("shell too thin: no voxels registered at a level")
            vz = vox % res
            vy = (vox // res) % res
            vx = vox // (res * res)
            stride = res + 1
            corners = []
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        corners.append(((vx + dx) * stride + (vy + dy)) * stride + (vz + dz))
            uniq = np.unique(np.concatenate(corners))
            ids_per_level.append(uniq)
            offsets.append(offsets[-1] + uniq.size)
        return cls(
            config=config,
            domain_lo=domain_lo,
            domain_size=domain_size,
            corner_ids=np.concatenate(ids_per_level),
            level_offsets=np.asarray(offsets, dtype=np.int64),
            dtype=dtype,
            seed=seed,
        )

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.domain_lo) / self.domain_size

    def _finest_voxel_centers(self) -> np.ndarray:
        if self._finest_centers is None:
            lv = self.config.n_levels - 1
            res = int(self.level_res[lv])
            ids = self.corner_ids[self.level_offsets[lv] : self.level_offsets[lv + 1]]
            stride = res + 1
            cz = ids % stride
            cy = (ids // stride) % stride
            cx = ids // (stride * stride)
            self._finest_centers = np.stack([cx, cy, cz], axis=1) / res
        return self._finest_centers

    def encode(self, x: np.ndarray, want_cache: bool = False):
        """Features for world-space points (B, 3).

        Returns (features, cache); cache holds the slot indices and weights
        needed by `backward`. Points outside the registered shell are moved
        to the nearest registered corner of the finest level and counted in
        ``out_of_shell_count``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        p = self.normalize(x)
        n = p.shape[0]
        cfg = self.config
        dtype = self.table.dtype
        out = np.zeros((n, cfg.out_dim), dtype=dtype)
        idx = np.zeros((n, cfg.n_levels, 8), dtype=np.int64)
        wgt = np.zeros((n, cfg.n_levels, 8), dtype=dtype)
        ok = np.zeros(n, dtype=np.uint8)
        _encode_batch(
            np.ascontiguousarray(p),
            self.level_res,
            self.corner_ids,
            self.level_offsets,
            self.table,
            cfg.n_features,
            out,
            idx,
            wgt,
            ok,
        )
        misses = np.flatnonzero(ok == 0)
        if misses.size:
            self.out_of_shell_count += int(misses.size)
            centers = self._finest_voxel_centers()
            pm = p[misses]
            for j, row in enumerate(misses):
                d2 = np.sum((centers - pm[j]) ** 2, axis=1)
                p[row] = centers[np.argmin(d2)]
            out_m = np.zeros((misses.size, cfg.out_dim), dtype=dtype)
            idx_m = np.zeros((misses.size, cfg.n_levels, 8), dtype=np.int64)
            wgt_m = np.zeros((misses.size, cfg.n_levels, 8), dtype=dtype)
            _encode_batch(
                np.ascontiguousarray(p[misses]),
                self.level_res,
                self.corner_ids,
                self.level_offsets,
                self.table,
                cfg.n_features,
                out_m,
                idx_m,
                wgt_m,
                np.zeros(misses.size, dtype=np.uint8),
            )
            out[misses] = out_m
            idx[misses] = idx_m
            wgt[misses] = wgt_m
        cache = (idx, wgt) if want_cache else None
        return out, cache

    def backward(self, cache, d_out: np.ndarray):
        """Table-row gradients for a batch.

        Returns (rows, grad_rows): unique sorted slot indices and their
        summed gradients, ready for a sparse optimizer update.
        """
        idx, wgt = cache
        n = idx.shape[0]
        cfg = self.config
        k = n * cfg.n_levels * 8
        slots = np.empty(k, dtype=np.int64)
        contribs = np.empty((k, cfg.n_features), dtype=np.float64)
        _scatter_grads(
            idx, wgt.astype(np.float64),
            np.ascontiguousarray(d_out, dtype=np.float64),
            cfg.n_features, slots, contribs,
        )
        keep = slots >= 0
        slots = slots[keep]
        contribs = contribs[keep]
        rows, inverse = np.unique(slots, return_inverse=True)
        grad_rows = np.zeros((rows.size, cfg.n_features), dtype=np.float64)
        for f in range(cfg.n_features):
            grad_rows[:, f] = np.bincount(
                inverse, weights=contribs[:, f], minlength=rows.size
            )
        return rows, grad_rows

    # --- serialization ------------------------------------------------------

    def state_payload(self) -> dict:
        return {
            "config": {
                "n_levels": self.config.n_levels,
                "n_features": self.config.n_features,
                "base_resolution": self.config.base_resolution,
                "finest_resolution": self.config.finest_resolution,
                "shell_diagonals": self.config.shell_diagonals,
                "padding": self.config.padding,
            },
            "domain_lo": self.domain_lo.tolist(),
            "domain_size": self.domain_size,
        }

    @classmethod
    def from_payload(cls, payload: dict, corner_ids, level_offsets, table):
        return cls(
            config=HashGridConfig(**payload["config"]),
            domain_lo=np.asarray(payload["domain_lo"]),
            domain_size=payload["domain_size"],
            corner_ids=corner_ids,
            level_offsets=level_offsets,
            table=table,
            dtype=table.dtype,
        )

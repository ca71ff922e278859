"""Triangle-mesh scenes: OBJ IO, pinhole cameras, BVH construction.

Meshes carry positions, unit vertex normals and [0,1]^2 UVs. The BVH is a
median-split tree over the longest centroid axis with leaves of at most four
triangles, flattened into plain arrays so the traversal kernels can run under
numba. Everything here is immutable after construction and safe to share
across render workers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .kernels import geom as kgeom

LEAF_SIZE = 4
T_MIN_FACTOR = 1e-4  # secondary-ray offset, scaled by scene diagonal


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int32
    vertex_normals: np.ndarray  # (V, 3) float64, unit
    uvs: np.ndarray  # (V, 2) float64 in [0,1]^2

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        self.vertex_normals = np.ascontiguousarray(self.vertex_normals, dtype=np.float64)
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float64)
        self.validate()

    def validate(self):
        nv = self.vertices.shape[0]
        if self.triangles.size == 0:
            raise ValueError("empty scene")
        if self.triangles.min() < 0 or self.triangles.max() >= nv:
            raise ValueError("triangle index out of range")
        norms = np.linalg.norm(self.vertex_normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("vertex normals must be unit length")
        v = self.vertices
        t = self.triangles
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        if np.any(np.linalg.norm(cross, axis=1) < 1e-14):
            raise ValueError("degenerate zero-area triangle")

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (used by the bundled scene generators)."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    out = np.zeros_like(v)
    for k in range(3):
        np.add.at(out, t[:, k], fn)
    lens = np.linalg.norm(out, axis=1, keepdims=True)
    lens[lens < 1e-20] = 1.0
    return out / lens


# --- OBJ ------------------------------------------------------------------


def load_obj(path: str | os.PathLike) -> TriangleMesh:
    """Read an OBJ mesh with v/vt/vn records and fully-specified faces.

    Faces must reference position, texture and normal indices
    (``f v/vt/vn ...``); polygons are fan-triangulated. Corners with distinct
    (v, vt, vn) triples become distinct mesh vertices.
    """
    positions: list[list[float]] = []
    normals: list[list[float]] = []
    uvs: list[list[float]] = []
    corner_map: dict[tuple[int, int, int], int] = {}
    out_v, out_n, out_uv, faces = [], [], [], []

    def corner(token: str) -> int:
        parts = token.split("/")
        if len(parts) != 3 or not parts[1] or not parts[2]:
            raise ValueError(f"face corner {token!r} must be v/vt/vn (UVs and normals required)")
        vi, ti, ni = (int(p) for p in parts)
        if vi < 0 or ti < 0 or ni < 0:
            raise ValueError("negative OBJ indices are not supported")
        key = (vi, ti, ni)
        idx = corner_map.get(key)
        if idx is None:
            idx = len(out_v)
            corner_map[key] = idx
            out_v.append(positions[vi - 1])
            out_uv.append(uvs[ti - 1])
            out_n.append(normals[ni - 1])
        return idx

    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif tag == "f":
                ids = [corner(tok) for tok in parts[1:]]
                for k in range(1, len(ids) - 1):
                    faces.append([ids[0], ids[k], ids[k + 1]])

    if not faces:
        raise ValueError("empty scene")
    vn = np.asarray(out_n, dtype=np.float64)
    vn = vn / np.linalg.norm(vn, axis=1, keepdims=True)
    return TriangleMesh(
        vertices=np.asarray(out_v, dtype=np.float64),
        triangles=np.asarray(faces, dtype=np.int32),
        vertex_normals=vn,
        uvs=np.asarray(out_uv, dtype=np.float64),
    )


def save_obj(path: str | os.PathLike, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.uvs:
            f.write(f"vt {t[0]:.9g} {t[1]:.9g}\n")
        for n in mesh.vertex_normals:
            f.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for tri in mesh.triangles:
            a, b, c = (int(i) + 1 for i in tri)
            f.write(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}\n")


# --- camera -----------------------------------------------------------------


@dataclass
class Camera:
    world_from_camera: np.ndarray  # (4, 4) rigid transform
    fov_y: float  # degrees
    width: int
    height: int
    name: str = ""

    def __post_init__(self):
        self.world_from_camera = np.ascontiguousarray(
            self.world_from_camera, dtype=np.float64
        )
        if self.world_from_camera.shape != (4, 4):
            raise ValueError("world_from_camera must be 4x4")
        if not (0.0 < self.fov_y < 180.0):
            raise ValueError(f"fov_y must be in (0, 180), got {self.fov_y}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def origin(self) -> np.ndarray:
        return self.world_from_camera[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        return self.world_from_camera[:3, :3]

    def primary_ray(self, ix: int, iy: int, jitter=(0.5, 0.5)):
        """Ray through pixel (ix, iy); jitter (0.5, 0.5) is the pixel center.

        Camera space is right-handed with the view direction along -z and +y
        up; pixel rows run top to bottom.
        """
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            raise IndexError(f"pixel ({ix},{iy}) outside {self.width}x{self.height}")
        d = self.primary_directions(
            np.array([[ix, iy]], dtype=np.int64),
            np.asarray(jitter, dtype=np.float64)[None, :],
        )[0]
        return self.origin.copy(), d

    def primary_directions(self, pixels: np.ndarray, jitters: np.ndarray) -> np.ndarray:
        """World-space unit directions for integer pixels (N,2) + jitters (N,2)."""
        tan_half = np.tan(np.radians(self.fov_y) * 0.5)
        aspect = self.width / self.height
        px = (pixels[:, 0] + jitters[:, 0]) / self.width * 2.0 - 1.0
        py = 1.0 - (pixels[:, 1] + jitters[:, 1]) / self.height * 2.0
        d_cam = np.stack(
            [px * tan_half * aspect, py * tan_half, -np.ones_like(px)], axis=1
        )
        d_world = d_cam @ self.rotation.T
        return d_world / np.linalg.norm(d_world, axis=1, keepdims=True)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera matrix for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    if np.linalg.norm(right) < 1e-9:
        upv = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, upv)
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = true_up
    m[:3, 2] = -fwd
    m[:3, 3] = eye
    return m


def save_cameras(path, cameras: list[Camera]) -> None:
    recs = [
        {
            "name": c.name or f"cam{i:03d}",
            "world_from_camera": c.world_from_camera.reshape(-1).tolist(),
            "fov_y": c.fov_y,
            "width": c.width,
            "height": c.height,
        }
        for i, c in enumerate(cameras)
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"cameras": recs}, f, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return [
        Camera(
            world_from_camera=np.asarray(r["world_from_camera"], dtype=np.float64).reshape(4, 4),
            fov_y=float(r["fov_y"]),
            width=int(r["width"]),
            height=int(r["height"]),
            name=r.get("name", ""),
        )
        for r in data["cameras"]
    ]


# --- BVH --------------------------------------------------------------------


@dataclass
class BvhTree:
    node_min: np.ndarray  # (N, 3)
    node_max: np.ndarray  # (N, 3)
    node_left: np.ndarray  # (N,) child index, -1 for leaves
    node_right: np.ndarray
    node_first: np.ndarray  # (N,) leaf range start into ordered triangles
    node_count: np.ndarray  # (N,) leaf triangle count, 0 for internal
    tri_id: np.ndarray  # (T,) original triangle index, BVH order
    v0: np.ndarray  # gathered per-corner geometry, BVH order
    v1: np.ndarray
    v2: np.ndarray
    n0: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    uv0: np.ndarray
    uv1: np.ndarray
    uv2: np.ndarray
    diagonal: float
    t_min: float = field(init=False)

    def __post_init__(self):
        self.t_min = T_MIN_FACTOR * self.diagonal

    @property
    def n_nodes(self) -> int:
        return self.node_min.shape[0]

    def arrays(self):
        """Traversal-kernel argument tuple."""
        return (
            self.node_min,
            self.node_max,
            self.node_left,
            self.node_right,
            self.node_first,
            self.node_count,
            self.v0,
            self.v1,
            self.v2,
        )


def build_bvh(mesh: TriangleMesh) -> BvhTree:
    """Median-split BVH over the longest centroid axis, leaf size <= 4."""
    if mesh.triangles.size == 0:
        raise ValueError("empty scene")
    v = mesh.vertices
    t = mesh.triangles.astype(np.int64)
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    tri_min = np.minimum(np.minimum(p0, p1), p2)
    tri_max = np.maximum(np.maximum(p0, p1), p2)
    centroids = (tri_min + tri_max) * 0.5

    order = np.arange(mesh.n_triangles, dtype=np.int64)
    node_min, node_max = [], []
    node_left, node_right, node_first, node_count = [], [], [], []

    def new_node():
        node_min.append(None)
        node_max.append(None)
        node_left.append(-1)
        node_right.append(-1)
        node_first.append(0)
        node_count.append(0)
        return len(node_min) - 1

    def build(ids: np.ndarray) -> int:
        idx = new_node()
        node_min[idx] = tri_min[ids].min(axis=0)
        node_max[idx] = tri_max[ids].max(axis=0)
        if ids.size <= LEAF_SIZE:
            node_first[idx] = len(ordered)
            node_count[idx] = ids.size
            ordered.extend(ids.tolist())
            return idx
        extent = centroids[ids].max(axis=0) - centroids[ids].min(axis=0)
        axis = int(np.argmax(extent))
        key = centroids[ids, axis]
        split = np.argsort(key, kind="stable")
        half = ids.size // 2
        left = ids[split[:half]]
        right = ids[split[half:]]
        node_left[idx] = build(left)
        node_right[idx] = build(right)
        return idx

    ordered: list[int] = []
    import sys

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(order)
    finally:
        sys.setrecursionlimit(old_limit)

    perm = np.asarray(ordered, dtype=np.int64)
    tt = t[perm]
    lo, hi = mesh.bounds()
    return BvhTree(
        node_min=np.asarray(node_min, dtype=np.float64),
        node_max=np.asarray(node_max, dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int32),
        node_right=np.asarray(node_right, dtype=np.int32),
        node_first=np.asarray(node_first, dtype=np.int32),
        node_count=np.asarray(node_count, dtype=np.int32),
        tri_id=perm.astype(np.int32),
        v0=np.ascontiguousarray(v[tt[:, 0]]),
        v1=np.ascontiguousarray(v[tt[:, 1]]),
        v2=np.ascontiguousarray(v[tt[:, 2]]),
        n0=np.ascontiguousarray(mesh.vertex_normals[tt[:, 0]]),
        n1=np.ascontiguousarray(mesh.vertex_normals[tt[:, 1]]),
        n2=np.ascontiguousarray(mesh.vertex_normals[tt[:, 2]]),
        uv0=np.ascontiguousarray(mesh.uvs[tt[:, 0]]),
        uv1=np.ascontiguousarray(mesh.uvs[tt[:, 1]]),
        uv2=np.ascontiguousarray(mesh.uvs[tt[:, 2]]),
        diagonal=float(np.linalg.norm(hi - lo)),
    )


# --- queries ----------------------------------------------------------------


@dataclass
class Hit:
    t: float
    position: np.ndarray
    normal: np.ndarray  # interpolated shading normal, faces the ray
    geom_normal: np.ndarray
    uv: np.ndarray
    triangle_id: int


def intersect(bvh: BvhTree, origin, direction, t_min: float = 0.0) -> Hit | None:
    """Nearest hit along a ray, or None. ``direction`` must be unit length."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    res = np.empty(12, dtype=np.float64)
    k = kgeom.intersect_one(
        *bvh.arrays(),
        bvh.n0,
        bvh.n1,
        bvh.n2,
        bvh.uv0,
        bvh.uv1,
        bvh.uv2,
        o[0],
        o[1],
        o[2],
        d[0],
        d[1],
        d[2],
        float(t_min),
        res,
    )
    if k < 0:
        return None
    return Hit(
        t=float(res[0]),
        position=res[1:4].copy(),
        normal=res[4:7].copy(),
        geom_normal=res[7:10].copy(),
        uv=res[10:12].copy(),
        triangle_id=int(bvh.tri_id[k]),
    )


def foreground_mask(camera: Camera, bvh: BvhTree) -> np.ndarray:
    """Binary mask: pixel is foreground iff its center primary ray hits."""
    h, w = camera.height, camera.width
    pix = np.stack(
        np.meshgrid(np.arange(w), np.arange(h), indexing="xy"), axis=-1
    ).reshape(-1, 2)
    dirs = camera.primary_directions(
        pix, np.full((pix.shape[0], 2), 0.5)
    )
    hits = kgeom.any_hit_batch(
        *bvh.arrays(),
        np.ascontiguousarray(camera.origin),
        np.ascontiguousarray(dirs),
        0.0,
    )
    return hits.reshape(h, w)

"""Real spherical-harmonic direction features, bands 0..3 (16 values).

Convention: orthonormalized real basis with the Condon-Shortley phase
omitted, components ordered by ascending band l with m running from -l to l.
Directions are unit 3-vectors (x, y, z).
"""

from __future__ import annotations

import numpy as np

SH_DIM = 16

# normalization constants, band by band
_C0 = 0.28209479177387814  # 1/(2 sqrt(pi))
_C1 = 0.4886025119029199  # sqrt(3/(4 pi))
_C2A = 1.0925484305920792  # (1/2) sqrt(15/pi)
_C2B = 0.31539156525252005  # (1/4) sqrt(5/pi)
_C2C = 0.5462742152960396  # (1/4) sqrt(15/pi)
_C3A = 0.5900435899266435  # (1/4) sqrt(35/(2 pi))
_C3B = 2.890611442640554  # (1/2) sqrt(105/pi)
_C3C = 0.4570457994644658  # (1/4) sqrt(21/(2 pi))
_C3D = 0.3731763325901154  # (1/4) sqrt(7/pi)
_C3E = 1.445305721320277  # (1/4) sqrt(105/pi)


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Evaluate the 16 basis functions for unit directions (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    norms = np.linalg.norm(dirs, axis=-1)
    if np.any(norms < 1e-12):
        raise ValueError("zero-length direction")
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ValueError("directions must be unit length")
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    xx, yy, zz = x * x, y * y, z * z

    out = np.empty(dirs.shape[:-1] + (SH_DIM,), dtype=np.float64)
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2A * x * y
    out[..., 5] = _C2A * y * z
    out[..., 6] = _C2B * (3.0 * zz - 1.0)
    out[..., 7] = _C2A * x * z
    out[..., 8] = _C2C * (xx - yy)
    out[..., 9] = _C3A * y * (3.0 * xx - yy)
    out[..., 10] = _C3B * x * y * z
    out[..., 11] = _C3C * y * (5.0 * zz - 1.0)
    out[..., 12] = _C3D * z * (5.0 * zz - 3.0)
    out[..., 13] = _C3C * x * (5.0 * zz - 1.0)
    out[..., 14] = _C3E * z * (xx - yy)
    out[..., 15] = _C3A * x * (xx - 3.0 * yy)
    return out

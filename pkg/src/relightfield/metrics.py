"""Image metrics and the lighting-scale normalization used for evaluation.

PSNR and SSIM operate on tone-mapped images (fixed exposure 1.0, clamp to
[0, 1], gamma 2.2); SSIM follows the standard formulation on luminance with
an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSNR_CAP_DB = 99.0
TONE_EXPOSURE = 1.0
TONE_GAMMA = 2.2

_REC709 = np.array([0.2126, 0.7152, 0.0722])


def tone_map(img: np.ndarray, exposure: float = TONE_EXPOSURE, gamma: float = TONE_GAMMA) -> np.ndarray:
    """Linear HDR -> display [0,1]: exposure, clamp, gamma."""
    x = np.clip(np.asarray(img, dtype=np.float64) * exposure, 0.0, 1.0)
    return x ** (1.0 / gamma)


def psnr(img_a: np.ndarray, img_b: np.ndarray, pre_tone_mapped: bool = False) -> float:
    """Peak signal-to-noise ratio in dB on tone-mapped RGB, capped at 99."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if not pre_tone_mapped:
        a = tone_map(a)
        b = tone_map(b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_kernel(sigma: float = 1.5, truncate: float = 3.5) -> np.ndarray:
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable convolution with reflect padding (matches scipy's default
    'reflect' mode used by reference SSIM implementations)."""
    r = kernel.size // 2
    pad = np.pad(img, ((r, r), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out += kv * pad[i : i + img.shape[0], :]
    pad = np.pad(out, ((0, 0), (r, r)), mode="reflect")
    out2 = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out2 += kv * pad[:, i : i + img.shape[1]]
    return out2


def ssim(
    img_a: np.ndarray,
    img_b: np.ndarray,
    pre_tone_mapped: bool = False,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
) -> float:
    """Mean structural similarity over luminance of tone-mapped images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if not pre_tone_mapped:
        a = tone_map(a)
        b = tone_map(b)
    if a.ndim == 3:
        a = a @ _REC709
        b = b @ _REC709
    kernel = _gaussian_kernel(sigma)
    if min(a.shape) < kernel.size:
        raise ValueError("images smaller than the SSIM window")
    c1 = k1 * k1
    c2 = k2 * k2
    mu_a = _filter2d(a, kernel)
    mu_b = _filter2d(b, kernel)
    var_a = _filter2d(a * a, kernel) - mu_a * mu_a
    var_b = _filter2d(b * b, kernel) - mu_b * mu_b
    cov = _filter2d(a * b, kernel) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def normalize_lighting(estimate, ground_truth):
    """Scale the estimated environment map so its per-channel means match
    the ground truth (the usual resolution of the global scale ambiguity)."""
    est = np.asarray(
        estimate.values if hasattr(estimate, "values") else estimate, dtype=np.float64
    )
    gt = np.asarray(
        ground_truth.values if hasattr(ground_truth, "values") else ground_truth,
        dtype=np.float64,
    )
    means = est.reshape(-1, 3).mean(axis=0)
    if np.any(means <= 0):
        raise ValueError("degenerate estimate: zero-mean channel")
    scale = gt.reshape(-1, 3).mean(axis=0) / means
    return est * scale[None, None, :]


@dataclass
class MetricsReport:
    entries: list = field(default_factory=list)  # dicts with name/psnr/ssim

    def add(self, name: str, psnr_db: float, ssim_val: float) -> None:
        self.entries.append({"name": name, "psnr": psnr_db, "ssim": ssim_val})

    def aggregate(self) -> dict:
        if not self.entries:
            return {"mean_psnr": float("nan"), "mean_ssim": float("nan"), "count": 0}
        return {
            "mean_psnr": float(np.mean([e["psnr"] for e in self.entries])),
            "mean_ssim": float(np.mean([e["ssim"] for e in self.entries])),
            "count": len(self.entries),
        }

    def to_json(self) -> dict:
        return {
            "tone_map": {"exposure": TONE_EXPOSURE, "gamma": TONE_GAMMA},
            "entries": self.entries,
            "aggregate": self.aggregate(),
        }

    def to_csv(self) -> str:
        lines = ["name,psnr_db,ssim"]
        for e in self.entries:
            lines.append(f"{e['name']},{e['psnr']:.6f},{e['ssim']:.6f}")
        return "\n".join(lines) + "\n"

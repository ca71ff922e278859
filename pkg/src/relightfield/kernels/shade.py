"""Shading kernels: the blended BSDF (GGX rough conductor + textured
Lambertian), its importance sampling, and environment-map lookups.

The conductor lobe uses the GGX normal distribution, Smith height-correlated
masking-shadowing, and unit Fresnel (white conductor, F0 = 1). Evaluation
routines also return the analytic roughness derivative needed by the
frozen-sample gradient estimator.
"""

from __future__ import annotations

import numpy as np

from ..accel import njit

INV_PI = 1.0 / np.pi
TWO_PI = 2.0 * np.pi


@njit(cache=True)
def local_frame(nx, ny, nz):
    """Branchless orthonormal basis around a unit normal (Duff et al.)."""
    if nz < -0.9999999:
        return 0.0, -1.0, 0.0, -1.0, 0.0, 0.0
    a = 1.0 / (1.0 + nz)
    b = -nx * ny * a
    return 1.0 - nx * nx * a, b, -nx, b, 1.0 - ny * ny * a, -ny


@njit(cache=True)
def _ggx_lambda(cos_t, alpha):
    c2 = cos_t * cos_t
    if c2 >= 1.0:
        return 0.0
    t2 = (1.0 - c2) / c2
    return 0.5 * (-1.0 + np.sqrt(1.0 + alpha * alpha * t2))


@njit(cache=True)
def _ggx_dlambda_dalpha(cos_t, alpha):
    c2 = cos_t * cos_t
    if c2 >= 1.0:
        return 0.0
    t2 = (1.0 - c2) / c2
    return 0.5 * alpha * t2 / np.sqrt(1.0 + alpha * alpha * t2)


@njit(cache=True)
def ggx_spec(alpha, ci, co, ndh):
    """Specular lobe value D*G2/(4 ci co) and its alpha derivative.

    ci, co, ndh are cosines against the shading normal; caller guarantees
    ci > 0 and co > 0.
    """
    if ndh <= 0.0:
        return 0.0, 0.0
    a2 = alpha * alpha
    k = ndh * ndh * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * k * k)
    dd = 2.0 * alpha * (k - 2.0 * a2 * ndh * ndh) / (np.pi * k * k * k)
    li = _ggx_lambda(ci, alpha)
    lo = _ggx_lambda(co, alpha)
    g2 = 1.0 / (1.0 + li + lo)
    dg2 = -g2 * g2 * (_ggx_dlambda_dalpha(ci, alpha) + _ggx_dlambda_dalpha(co, alpha))
    denom = 1.0 / (4.0 * ci * co)
    return d * g2 * denom, (dd * g2 + d * dg2) * denom


@njit(cache=True)
def albedo_corners(h, w, u, v):
    """Bilinear footprint of a [0,1]^2 UV in an (h, w) texture.

    Returns (x0, y0, x1, y1, w00, w10, w01, w11); wXY weights texel
    (column xX, row yY). Coordinates clamp at the texture edge.
    """
    fu = u * w - 0.5
    fv = v * h - 0.5
    x0 = int(np.floor(fu))
    y0 = int(np.floor(fv))
    ax = fu - x0
    ay = fv - y0
    x1 = x0 + 1
    y1 = y0 + 1
    if x0 < 0:
        x0 = 0
    if x0 > w - 1:
        x0 = w - 1
    if x1 < 0:
        x1 = 0
    if x1 > w - 1:
        x1 = w - 1
    if y0 < 0:
        y0 = 0
    if y0 > h - 1:
        y0 = h - 1
    if y1 < 0:
        y1 = 0
    if y1 > h - 1:
        y1 = h - 1
    return (
        x0, y0, x1, y1,
        (1.0 - ax) * (1.0 - ay),
        ax * (1.0 - ay),
        (1.0 - ax) * ay,
        ax * ay,
    )


@njit(cache=True)
def albedo_at(albedo, u, v):
    h, w = albedo.shape[0], albedo.shape[1]
    x0, y0, x1, y1, w00, w10, w01, w11 = albedo_corners(h, w, u, v)
    r = (
        w00 * albedo[y0, x0, 0]
        + w10 * albedo[y0, x1, 0]
        + w01 * albedo[y1, x0, 0]
        + w11 * albedo[y1, x1, 0]
    )
    g = (
        w00 * albedo[y0, x0, 1]
        + w10 * albedo[y0, x1, 1]
        + w01 * albedo[y1, x0, 1]
        + w11 * albedo[y1, x1, 1]
    )
    b = (
        w00 * albedo[y0, x0, 2]
        + w10 * albedo[y0, x1, 2]
        + w01 * albedo[y1, x0, 2]
        + w11 * albedo[y1, x1, 2]
    )
    return r, g, b


@njit(cache=True)
def bsdf_eval(
    w, alpha, albedo, u, v,
    nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
):
    """Blended BSDF value per channel; zero outside the upper hemisphere."""
    ci = nx * wix + ny * wiy + nz * wiz
    co = nx * wox + ny * woy + nz * woz
    if ci <= 0.0 or co <= 0.0:
        return 0.0, 0.0, 0.0
    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = np.sqrt(hx * hx + hy * hy + hz * hz)
    spec = 0.0
    if hl > 1e-14 and w > 0.0:
        ndh = (nx * hx + ny * hy + nz * hz) / hl
        spec, _ = ggx_spec(alpha, ci, co, ndh)
    ar, ag, ab = albedo_at(albedo, u, v)
    kd = (1.0 - w) * INV_PI
    return w * spec + kd * ar, w * spec + kd * ag, w * spec + kd * ab


@njit(cache=True)
def bsdf_eval_parts(
    w, alpha, albedo, u, v,
    nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
):
    """BSDF pieces for gradient replay.

    Returns (fr, fg, fb, spec, dspec_dalpha, ar, ag, ab) with
    f_c = w*spec + (1-w)*A_c/pi. All zero outside the hemisphere.
    """
    ci = nx * wix + ny * wiy + nz * wiz
    co = nx * wox + ny * woy + nz * woz
    if ci <= 0.0 or co <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = np.sqrt(hx * hx + hy * hy + hz * hz)
    spec = 0.0
    dspec = 0.0
    if hl > 1e-14:
        ndh = (nx * hx + ny * hy + nz * hz) / hl
        spec, dspec = ggx_spec(alpha, ci, co, ndh)
    ar, ag, ab = albedo_at(albedo, u, v)
    kd = (1.0 - w) * INV_PI
    return (
        w * spec + kd * ar,
        w * spec + kd * ag,
        w * spec + kd * ab,
        spec,
        dspec,
        ar,
        ag,
        ab,
    )


@njit(cache=True)
def bsdf_pdf(w, alpha, nx, ny, nz, wix, wiy, wiz, wox, woy, woz):
    """Mixture pdf of the sampler: w * VNDF + (1-w) * cosine."""
    ci = nx * wix + ny * wiy + nz * wiz
    co = nx * wox + ny * woy + nz * woz
    if ci <= 0.0 or co <= 0.0:
        return 0.0
    pdf_cos = ci * INV_PI
    pdf_spec = 0.0
    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = np.sqrt(hx * hx + hy * hy + hz * hz)
    if hl > 1e-14:
        ndh = (nx * hx + ny * hy + nz * hz) / hl
        if ndh > 0.0:
            a2 = alpha * alpha
            k = ndh * ndh * (a2 - 1.0) + 1.0
            d = a2 / (np.pi * k * k)
            g1 = 1.0 / (1.0 + _ggx_lambda(co, alpha))
            pdf_spec = g1 * d / (4.0 * co)
    return w * pdf_spec + (1.0 - w) * pdf_cos


@njit(cache=True)
def sample_bsdf_dir(
    w, alpha, nx, ny, nz, wox, woy, woz, u1, u2, u3
):
    """Draw an incoming direction from the mixture sampler.

    u1 picks the lobe, (u2, u3) warp it. Returns (wix, wiy, wiz, pdf);
    pdf <= 0 flags a degenerate draw (dead path).
    """
    tx, ty, tz, bx, by, bz = local_frame(nx, ny, nz)
    # outgoing direction in local coordinates
    lox = wox * tx + woy * ty + woz * tz
    loy = wox * bx + woy * by + woz * bz
    loz = wox * nx + woy * ny + woz * nz
    if loz <= 0.0:
        return 0.0, 0.0, 0.0, -1.0
    if u1 < w:
        # GGX visible-normal sampling (Heitz 2018), isotropic roughness
        vx = alpha * lox
        vy = alpha * loy
        vz = loz
        vl = np.sqrt(vx * vx + vy * vy + vz * vz)
        vx /= vl
        vy /= vl
        vz /= vl
        lensq = vx * vx + vy * vy
        if lensq > 1e-18:
            inv = 1.0 / np.sqrt(lensq)
            t1x = -vy * inv
            t1y = vx * inv
            t1z = 0.0
        else:
            t1x = 1.0
            t1y = 0.0
            t1z = 0.0
        t2x = vy * t1z - vz * t1y
        t2y = vz * t1x - vx * t1z
        t2z = vx * t1y - vy * t1x
        r = np.sqrt(u2)
        phi = TWO_PI * u3
        p1 = r * np.cos(phi)
        p2 = r * np.sin(phi)
        s = 0.5 * (1.0 + vz)
        p2 = (1.0 - s) * np.sqrt(max(0.0, 1.0 - p1 * p1)) + s * p2
        pz = np.sqrt(max(0.0, 1.0 - p1 * p1 - p2 * p2))
        mx = p1 * t1x + p2 * t2x + pz * vx
        my = p1 * t1y + p2 * t2y + pz * vy
        mz = p1 * t1z + p2 * t2z + pz * vz
        # back to the stretched-off frame
        mx = alpha * mx
        my = alpha * my
        mz = max(1e-12, mz)
        ml = np.sqrt(mx * mx + my * my + mz * mz)
        mx /= ml
        my /= ml
        mz /= ml
        dotom = lox * mx + loy * my + loz * mz
        lix = 2.0 * dotom * mx - lox
        liy = 2.0 * dotom * my - loy
        liz = 2.0 * dotom * mz - loz
    else:
        if w >= 1.0:
            return 0.0, 0.0, 0.0, -1.0
        r = np.sqrt(u2)
        phi = TWO_PI * u3
        lix = r * np.cos(phi)
        liy = r * np.sin(phi)
        liz = np.sqrt(max(0.0, 1.0 - u2))
    if liz <= 1e-12:
        return 0.0, 0.0, 0.0, -1.0
    wix = lix * tx + liy * bx + liz * nx
    wiy = lix * ty + liy * by + liz * ny
    wiz = lix * tz + liy * bz + liz * nz
    ln = np.sqrt(wix * wix + wiy * wiy + wiz * wiz)
    wix /= ln
    wiy /= ln
    wiz /= ln
    pdf = bsdf_pdf(w, alpha, nx, ny, nz, wix, wiy, wiz, wox, woy, woz)
    if pdf <= 1e-300 or not np.isfinite(pdf):
        return 0.0, 0.0, 0.0, -1.0
    return wix, wiy, wiz, pdf


@njit(cache=True)
def env_texel_of_dir(env_w, env_h, dx, dy, dz):
    """Flat texel index containing a direction (lat-long grid)."""
    phi = np.arctan2(dy, dx)
    if phi < 0.0:
        phi += TWO_PI
    ct = dz
    if ct > 1.0:
        ct = 1.0
    if ct < -1.0:
        ct = -1.0
    theta = np.arccos(ct)
    x = int(phi / TWO_PI * env_w)
    if x > env_w - 1:
        x = env_w - 1
    y = int(theta / np.pi * env_h)
    if y > env_h - 1:
        y = env_h - 1
    return y * env_w + x


@njit(cache=True)
def env_bilinear(env_img, dx, dy, dz):
    """Bilinear lat-long lookup (azimuth wraps, rows clamp at the poles)."""
    h, w = env_img.shape[0], env_img.shape[1]
    phi = np.arctan2(dy, dx)
    if phi < 0.0:
        phi += TWO_PI
    ct = dz
    if ct > 1.0:
        ct = 1.0
    if ct < -1.0:
        ct = -1.0
    theta = np.arccos(ct)
    u = phi / TWO_PI * w - 0.5
    v = theta / np.pi * h - 0.5
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    fx = u - x0
    fy = v - y0
    x1 = (x0 + 1) % w
    x0 = x0 % w
    if y0 < 0:
        y0 = 0
    y1 = y0 + 1
    if y1 > h - 1:
        y1 = h - 1
    if y0 > h - 1:
        y0 = h - 1
    r = (1 - fy) * ((1 - fx) * env_img[y0, x0, 0] + fx * env_img[y0, x1, 0]) + fy * (
        (1 - fx) * env_img[y1, x0, 0] + fx * env_img[y1, x1, 0]
    )
    g = (1 - fy) * ((1 - fx) * env_img[y0, x0, 1] + fx * env_img[y0, x1, 1]) + fy * (
        (1 - fx) * env_img[y1, x0, 1] + fx * env_img[y1, x1, 1]
    )
    b = (1 - fy) * ((1 - fx) * env_img[y0, x0, 2] + fx * env_img[y0, x1, 2]) + fy * (
        (1 - fx) * env_img[y1, x0, 2] + fx * env_img[y1, x1, 2]
    )
    return r, g, b


@njit(cache=True)
def env_sample_texel(cdf, u):
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo

"""Path-tracing kernels.

One path implementation (`_trace_record`) backs every estimator so the
renderer, the OLAT synthesizer and the gradient replay always walk identical
paths for identical (seed, pixel, sample) keys:

* normal mode: next-event estimation towards the environment map with
  balance-heuristic MIS against BSDF sampling;
* deterministic-light-sum mode: at every vertex the direct term is summed
  over all texels (no light sampling), which makes the image exactly linear
  in the environment map for a fixed seed.

Sampling decisions always use the "sample" parameter set (w_s, alpha_s,
envmap CDF); radiance and gradients use the "eval" set. In ordinary
rendering the two coincide; keeping them separate is what makes
frozen-sample finite-difference checks and inverse-rendering gradients
well defined.

Bounce k contributes light paths with exactly k surface vertices; paths are
cut at max_bounces with no Russian roulette. Draw counters advance by a fixed
amount per vertex, so a path prefix is invariant to max_bounces and to any
eval-parameter perturbation.
"""

from __future__ import annotations

import numpy as np

from ..accel import njit, prange
from ..rng import stream64, rand_u01
from . import geom as g
from . import shade as sh

REC_W = 36
# record slots per path vertex
_X = 0  # hit position (3)
_G = 3  # offset-side geometric normal (3)
_N = 6  # shading normal (3)
_WO = 9  # outgoing direction (3)
_WI = 12  # sampled continuation direction (3)
_PDFB = 15  # frozen continuation pdf
_U = 16  # uv (2)
_CI = 18  # wi . n
_T = 19  # throughput prefix before this vertex (3)
_NEE = 22  # sampled texel index (-1 when none/invisible)
_WL = 23  # frozen NEE weight: mis * cos / pdf_L
_ALIVE = 24  # continuation sampled successfully
_FC = 25  # continuation factor f * ci / pdf (3)
_D = 28  # direct radiance at vertex, per unit throughput (3)
_ESC = 31  # on the last vertex: 1 + escape texel index (0 when absorbed)
_ESC_MIS = 32  # frozen MIS weight of the escape contribution
_WI_NEE = 33  # sampled direction inside the NEE texel (3)


@njit(cache=True)
def _texel_sample_dir(env_w, env_h, ti, ua, ub):
    """Uniform solid-angle direction inside lat-long texel ``ti``.

    The light model is piecewise constant over texels, so next-event
    estimation samples a continuous direction within the chosen texel
    (density prob/solid-angle); evaluating only the texel center would bias
    horizon-straddling texels.
    """
    y = ti // env_w
    x = ti % env_w
    ct_top = np.cos(np.pi * y / env_h)
    ct_bot = np.cos(np.pi * (y + 1) / env_h)
    ct = ct_top + ub * (ct_bot - ct_top)
    if ct > 1.0:
        ct = 1.0
    if ct < -1.0:
        ct = -1.0
    st = np.sqrt(1.0 - ct * ct)
    phi = 2.0 * np.pi * (x + ua) / env_w
    return st * np.cos(phi), st * np.sin(phi), ct


@njit(cache=True)
def _trace_record(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
    env_img, env_flat, texel_dirs, texel_omega, cdf, pdf_sr, env_w, env_h,
    w_s, alpha_s, w_e, alpha_e, albedo,
    ox, oy, oz, dx, dy, dz,
    max_bounces, det_mode, t_eps, state, rec,
):
    """Trace one path, filling per-vertex records.

    Returns (r, g, b, n_vertices). Primary misses return the background
    radiance with n_vertices = 0.
    """
    n_e = texel_dirs.shape[0]
    k_tri, t_hit, bu, bv = g.bvh_nearest(
        node_min, node_max, node_left, node_right, node_first, node_count,
        v0, v1, v2, ox, oy, oz, dx, dy, dz, 0.0,
    )
    if k_tri < 0:
        br, bg, bb = sh.env_bilinear(env_img, dx, dy, dz)
        return br, bg, bb, 0

    acc_r = 0.0
    acc_g = 0.0
    acc_b = 0.0
    tr_r = 1.0
    tr_g = 1.0
    tr_b = 1.0
    ctr = 0
    nv = 0

    for bounce in range(1, max_bounces + 1):
        nx, ny, nz, gx, gy, gz, uu, vv = g.shading_basis(
            v0, v1, v2, n0, n1, n2, uv0, uv1, uv2, k_tri, bu, bv, dx, dy, dz
        )
        px = ox + t_hit * dx
        py = oy + t_hit * dy
        pz = oz + t_hit * dz
        sx = px + gx * t_eps
        sy = py + gy * t_eps
        sz = pz + gz * t_eps
        wox = -dx
        woy = -dy
        woz = -dz

        r = rec[nv]
        r[_X] = px
        r[_X + 1] = py
        r[_X + 2] = pz
        r[_G] = gx
        r[_G + 1] = gy
        r[_G + 2] = gz
        r[_N] = nx
        r[_N + 1] = ny
        r[_N + 2] = nz
        r[_WO] = wox
        r[_WO + 1] = woy
        r[_WO + 2] = woz
        r[_U] = uu
        r[_U + 1] = vv
        r[_T] = tr_r
        r[_T + 1] = tr_g
        r[_T + 2] = tr_b
        r[_NEE] = -1.0
        r[_WL] = 0.0
        r[_ALIVE] = 0.0
        r[_ESC] = 0.0
        r[_ESC_MIS] = 0.0
        r[_FC] = 0.0
        r[_FC + 1] = 0.0
        r[_FC + 2] = 0.0
        d_r = 0.0
        d_g = 0.0
        d_b = 0.0

        if det_mode:
            for ti in range(n_e):
                # dark texels contribute exactly zero; skipping them keeps
                # single-texel (OLAT) renders cheap
                if (
                    env_flat[ti, 0] == 0.0
                    and env_flat[ti, 1] == 0.0
                    and env_flat[ti, 2] == 0.0
                ):
                    continue
                wix = texel_dirs[ti, 0]
                wiy = texel_dirs[ti, 1]
                wiz = texel_dirs[ti, 2]
                ci = wix * nx + wiy * ny + wiz * nz
                if ci <= 0.0:
                    continue
                if g.bvh_occluded(
                    node_min, node_max, node_left, node_right, node_first,
                    node_count, v0, v1, v2,
                    sx, sy, sz, wix, wiy, wiz, t_eps, g.INF,
                ):
                    continue
                fr, fg, fb = sh.bsdf_eval(
                    w_e, alpha_e, albedo, uu, vv,
                    nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
                )
                wgt = ci * texel_omega[ti]
                d_r += fr * wgt * env_flat[ti, 0]
                d_g += fg * wgt * env_flat[ti, 1]
                d_b += fb * wgt * env_flat[ti, 2]
        else:
            u_l = rand_u01(state, ctr)
            u_a = rand_u01(state, ctr + 1)
            u_b = rand_u01(state, ctr + 2)
            ctr += 3
            ti = sh.env_sample_texel(cdf, u_l)
            pdf_l = pdf_sr[ti]
            wix, wiy, wiz = _texel_sample_dir(env_w, env_h, ti, u_a, u_b)
            ci = wix * nx + wiy * ny + wiz * nz
            if ci > 0.0 and pdf_l > 0.0:
                if not g.bvh_occluded(
                    node_min, node_max, node_left, node_right, node_first,
                    node_count, v0, v1, v2,
                    sx, sy, sz, wix, wiy, wiz, t_eps, g.INF,
                ):
                    pdf_b_here = sh.bsdf_pdf(
                        w_s, alpha_s, nx, ny, nz, wix, wiy, wiz, wox, woy, woz
                    )
                    mis = pdf_l / (pdf_l + pdf_b_here)
                    wl = mis * ci / pdf_l
                    fr, fg, fb = sh.bsdf_eval(
                        w_e, alpha_e, albedo, uu, vv,
                        nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
                    )
                    r[_NEE] = ti
                    r[_WL] = wl
                    r[_WI_NEE] = wix
                    r[_WI_NEE + 1] = wiy
                    r[_WI_NEE + 2] = wiz
                    d_r = fr * wl * env_flat[ti, 0]
                    d_g = fg * wl * env_flat[ti, 1]
                    d_b = fb * wl * env_flat[ti, 2]

        r[_D] = d_r
        r[_D + 1] = d_g
        r[_D + 2] = d_b
        acc_r += tr_r * d_r
        acc_g += tr_g * d_g
        acc_b += tr_b * d_b

        u1 = rand_u01(state, ctr)
        u2 = rand_u01(state, ctr + 1)
        u3 = rand_u01(state, ctr + 2)
        ctr += 3
        wix, wiy, wiz, pdf_b = sh.sample_bsdf_dir(
            w_s, alpha_s, nx, ny, nz, wox, woy, woz, u1, u2, u3
        )
        nv += 1
        if pdf_b <= 0.0:
            break
        ci = wix * nx + wiy * ny + wiz * nz
        fr, fg, fb = sh.bsdf_eval(
            w_e, alpha_e, albedo, uu, vv,
            nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
        )
        scale = ci / pdf_b
        r[_ALIVE] = 1.0
        r[_WI] = wix
        r[_WI + 1] = wiy
        r[_WI + 2] = wiz
        r[_PDFB] = pdf_b
        r[_CI] = ci
        r[_FC] = fr * scale
        r[_FC + 1] = fg * scale
        r[_FC + 2] = fb * scale
        tr_r *= fr * scale
        tr_g *= fg * scale
        tr_b *= fb * scale

        k_tri, t_hit, bu, bv = g.bvh_nearest(
            node_min, node_max, node_left, node_right, node_first, node_count,
            v0, v1, v2, sx, sy, sz, wix, wiy, wiz, t_eps,
        )
        if k_tri < 0:
            if not det_mode:
                et = sh.env_texel_of_dir(env_w, env_h, wix, wiy, wiz)
                pdf_l_at = pdf_sr[et]
                mis = pdf_b / (pdf_b + pdf_l_at)
                acc_r += tr_r * mis * env_flat[et, 0]
                acc_g += tr_g * mis * env_flat[et, 1]
                acc_b += tr_b * mis * env_flat[et, 2]
                r[_ESC] = 1.0 + et
                r[_ESC_MIS] = mis
            break
        ox = sx
        oy = sy
        oz = sz
        dx = wix
        dy = wiy
        dz = wiz

    return acc_r, acc_g, acc_b, nv


@njit(cache=True)
def _pixel_dir(cam_rot, tan_x, tan_y, img_w, img_h, ix, iy, jx, jy):
    cx = ((ix + jx) / img_w * 2.0 - 1.0) * tan_x
    cy = (1.0 - (iy + jy) / img_h * 2.0) * tan_y
    dx = cam_rot[0, 0] * cx + cam_rot[0, 1] * cy - cam_rot[0, 2]
    dy = cam_rot[1, 0] * cx + cam_rot[1, 1] * cy - cam_rot[1, 2]
    dz = cam_rot[2, 0] * cx + cam_rot[2, 1] * cy - cam_rot[2, 2]
    ln = np.sqrt(dx * dx + dy * dy + dz * dz)
    return dx / ln, dy / ln, dz / ln


@njit(cache=True, parallel=True)
def trace_pixels(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
    cam_o, cam_rot, tan_x, tan_y, img_w, img_h,
    pixels,
    env_img, env_flat, texel_dirs, texel_omega, cdf, pdf_sr, env_w, env_h,
    w_s, alpha_s, w_e, alpha_e, albedo,
    spp, max_bounces, det_mode, t_eps, seed,
    tile, out, bad,
):
    """Mean radiance over spp paths for each listed pixel.

    Primary rays pass through pixel centers (no subpixel jitter) so that a
    pixel is lit iff its center ray is foreground, keeping renders consistent
    with the center-ray masks. ``out`` is (K, 3); ``bad`` flags non-finite
    estimates per pixel. Work is split over fixed-size tiles of the pixel
    list, so results do not depend on the worker count.
    """
    k_tot = pixels.shape[0]
    n_tiles = (k_tot + tile - 1) // tile
    for tidx in prange(n_tiles):
        rec = np.empty((max_bounces, REC_W), dtype=np.float64)
        lo = tidx * tile
        hi = min(lo + tile, k_tot)
        for k in range(lo, hi):
            pid = pixels[k]
            iy = pid // img_w
            ix = pid % img_w
            dx, dy, dz = _pixel_dir(cam_rot, tan_x, tan_y, img_w, img_h, ix, iy, 0.5, 0.5)
            sr = 0.0
            sg = 0.0
            sb = 0.0
            for s in range(spp):
                state = stream64(seed, pid, s)
                r, g_, b, nv = _trace_record(
                    node_min, node_max, node_left, node_right, node_first,
                    node_count, v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
                    env_img, env_flat, texel_dirs, texel_omega, cdf, pdf_sr,
                    env_w, env_h,
                    w_s, alpha_s, w_e, alpha_e, albedo,
                    cam_o[0], cam_o[1], cam_o[2], dx, dy, dz,
                    max_bounces, det_mode, t_eps, state, rec,
                )
                sr += r
                sg += g_
                sb += b
            inv = 1.0 / spp
            out[k, 0] = sr * inv
            out[k, 1] = sg * inv
            out[k, 2] = sb * inv
            if not (
                np.isfinite(out[k, 0]) and np.isfinite(out[k, 1]) and np.isfinite(out[k, 2])
            ):
                bad[k] = 1


@njit(cache=True)
def _accum_bsdf_grads(
    w_e, alpha_e, albedo, uu, vv,
    nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
    cr, cg, cb, gw, ga, g_albedo,
):
    """Scatter d(loss)/d(bsdf params) for one BSDF evaluation weighted by the
    per-channel chain value (cr, cg, cb). Returns updated (gw, ga)."""
    fr, fg, fb, spec, dspec, ar, ag, ab = sh.bsdf_eval_parts(
        w_e, alpha_e, albedo, uu, vv,
        nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
    )
    ci = nx * wix + ny * wiy + nz * wiz
    co = nx * wox + ny * woy + nz * woz
    if ci <= 0.0 or co <= 0.0:
        return gw, ga
    inv_pi = 1.0 / np.pi
    gw += cr * (spec - ar * inv_pi) + cg * (spec - ag * inv_pi) + cb * (spec - ab * inv_pi)
    ga += (cr + cg + cb) * w_e * dspec
    kd = (1.0 - w_e) * inv_pi
    h, w = albedo.shape[0], albedo.shape[1]
    x0, y0, x1, y1, w00, w10, w01, w11 = sh.albedo_corners(h, w, uu, vv)
    g_albedo[y0, x0, 0] += cr * kd * w00
    g_albedo[y0, x1, 0] += cr * kd * w10
    g_albedo[y1, x0, 0] += cr * kd * w01
    g_albedo[y1, x1, 0] += cr * kd * w11
    g_albedo[y0, x0, 1] += cg * kd * w00
    g_albedo[y0, x1, 1] += cg * kd * w10
    g_albedo[y1, x0, 1] += cg * kd * w01
    g_albedo[y1, x1, 1] += cg * kd * w11
    g_albedo[y0, x0, 2] += cb * kd * w00
    g_albedo[y0, x1, 2] += cb * kd * w10
    g_albedo[y1, x0, 2] += cb * kd * w01
    g_albedo[y1, x1, 2] += cb * kd * w11
    return gw, ga


@njit(cache=True)
def _backward_sample(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2,
    env_flat, texel_dirs, texel_omega,
    w_e, alpha_e, albedo,
    det_mode, t_eps,
    rec, nv, wr, wg, wb,
    gw_box, ga_box, g_albedo, g_env,
):
    """Reverse sweep over one recorded path.

    (wr, wg, wb) is d(loss)/d(sample radiance) per channel. Gradients
    accumulate into gw_box/ga_box (1-element arrays) and the dense per-tile
    g_albedo / g_env buffers. Radiance-to-go R_k is rebuilt from the stored
    per-vertex direct terms and continuation factors:
    R_k = d_k + fc_k * R_{k+1}.
    """
    gw = gw_box[0]
    ga = ga_box[0]
    rx_next = 0.0
    ry_next = 0.0
    rz_next = 0.0
    for kk in range(nv - 1, -1, -1):
        r = rec[kk]
        t_r = r[_T]
        t_g = r[_T + 1]
        t_b = r[_T + 2]
        nx = r[_N]
        ny = r[_N + 1]
        nz = r[_N + 2]
        wox = r[_WO]
        woy = r[_WO + 1]
        woz = r[_WO + 2]
        uu = r[_U]
        vv = r[_U + 1]
        if kk == nv - 1 and r[_ESC] > 0.0:
            et = int(r[_ESC] - 1.0)
            mis_esc = r[_ESC_MIS]
            g_env[et, 0] += wr * t_r * r[_FC] * mis_esc
            g_env[et, 1] += wg * t_g * r[_FC + 1] * mis_esc
            g_env[et, 2] += wb * t_b * r[_FC + 2] * mis_esc
            rx_next = mis_esc * env_flat[et, 0]
            ry_next = mis_esc * env_flat[et, 1]
            rz_next = mis_esc * env_flat[et, 2]
        if r[_ALIVE] > 0.0 and (rx_next != 0.0 or ry_next != 0.0 or rz_next != 0.0):
            scale = r[_CI] / r[_PDFB]
            cr = wr * t_r * rx_next * scale
            cg = wg * t_g * ry_next * scale
            cb = wb * t_b * rz_next * scale
            gw, ga = _accum_bsdf_grads(
                w_e, alpha_e, albedo, uu, vv,
                nx, ny, nz, r[_WI], r[_WI + 1], r[_WI + 2], wox, woy, woz,
                cr, cg, cb, gw, ga, g_albedo,
            )
        if det_mode:
            sx = r[_X] + r[_G] * t_eps
            sy = r[_X + 1] + r[_G + 1] * t_eps
            sz = r[_X + 2] + r[_G + 2] * t_eps
            for ti in range(texel_dirs.shape[0]):
                wix = texel_dirs[ti, 0]
                wiy = texel_dirs[ti, 1]
                wiz = texel_dirs[ti, 2]
                ci = wix * nx + wiy * ny + wiz * nz
                if ci <= 0.0:
                    continue
                if g.bvh_occluded(
                    node_min, node_max, node_left, node_right, node_first,
                    node_count, v0, v1, v2,
                    sx, sy, sz, wix, wiy, wiz, t_eps, g.INF,
                ):
                    continue
                wl = ci * texel_omega[ti]
                fr, fg, fb, spec, dspec, ar, ag, ab = sh.bsdf_eval_parts(
                    w_e, alpha_e, albedo, uu, vv,
                    nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
                )
                g_env[ti, 0] += wr * t_r * fr * wl
                g_env[ti, 1] += wg * t_g * fg * wl
                g_env[ti, 2] += wb * t_b * fb * wl
                cr = wr * t_r * wl * env_flat[ti, 0]
                cg = wg * t_g * wl * env_flat[ti, 1]
                cb = wb * t_b * wl * env_flat[ti, 2]
                if cr != 0.0 or cg != 0.0 or cb != 0.0:
                    gw, ga = _accum_bsdf_grads(
                        w_e, alpha_e, albedo, uu, vv,
                        nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
                        cr, cg, cb, gw, ga, g_albedo,
                    )
        else:
            ti = int(r[_NEE])
            if ti >= 0:
                wl = r[_WL]
                wix = r[_WI_NEE]
                wiy = r[_WI_NEE + 1]
                wiz = r[_WI_NEE + 2]
                fr, fg, fb, spec, dspec, ar, ag, ab = sh.bsdf_eval_parts(
                    w_e, alpha_e, albedo, uu, vv,
                    nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
                )
                g_env[ti, 0] += wr * t_r * fr * wl
                g_env[ti, 1] += wg * t_g * fg * wl
                g_env[ti, 2] += wb * t_b * fb * wl
                cr = wr * t_r * wl * env_flat[ti, 0]
                cg = wg * t_g * wl * env_flat[ti, 1]
                cb = wb * t_b * wl * env_flat[ti, 2]
                if cr != 0.0 or cg != 0.0 or cb != 0.0:
                    gw, ga = _accum_bsdf_grads(
                        w_e, alpha_e, albedo, uu, vv,
                        nx, ny, nz, wix, wiy, wiz, wox, woy, woz,
                        cr, cg, cb, gw, ga, g_albedo,
                    )
        rx_next = r[_D] + r[_FC] * rx_next * r[_ALIVE]
        ry_next = r[_D + 1] + r[_FC + 1] * ry_next * r[_ALIVE]
        rz_next = r[_D + 2] + r[_FC + 2] * rz_next * r[_ALIVE]
    gw_box[0] = gw
    ga_box[0] = ga


@njit(cache=True, parallel=True)
def trace_pixels_grad(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
    cam_o, cam_rot, tan_x, tan_y, img_w, img_h,
    pixels, targets,
    env_img, env_flat, texel_dirs, texel_omega, cdf, pdf_sr, env_w, env_h,
    w_s, alpha_s, w_e, alpha_e, albedo,
    spp, max_bounces, det_mode, t_eps, seed,
    loss_scale,
    out, bad, loss_tile, gw_tile, ga_tile, genv_tile, galb_tile,
):
    """Estimates, squared-error loss and frozen-sample parameter gradients
    for a batch of pixels with per-pixel targets.

    loss = loss_scale * sum_{pixel,channel} (est - target)^2, with
    loss_scale normally 1/(K*3). Per-tile partial results land in
    loss_tile / gw_tile / ga_tile / genv_tile / galb_tile and are reduced in
    tile order by the caller, keeping results independent of thread count.
    Each pixel is traced twice with identical streams: once for the estimate,
    once re-recorded for the reverse sweep weighted by the loss residual.
    """
    k_tot = pixels.shape[0]
    n_tiles = gw_tile.shape[0]
    tile_sz = (k_tot + n_tiles - 1) // n_tiles
    for tidx in prange(n_tiles):
        rec = np.empty((max_bounces, REC_W), dtype=np.float64)
        gw_box = np.zeros(1, dtype=np.float64)
        ga_box = np.zeros(1, dtype=np.float64)
        lo = tidx * tile_sz
        hi = min(lo + tile_sz, k_tot)
        for k in range(lo, hi):
            pid = pixels[k]
            iy = pid // img_w
            ix = pid % img_w
            dx, dy, dz = _pixel_dir(cam_rot, tan_x, tan_y, img_w, img_h, ix, iy, 0.5, 0.5)
            sr = 0.0
            sg = 0.0
            sb = 0.0
            for s in range(spp):
                state = stream64(seed, pid, s)
                r, g_, b, nv = _trace_record(
                    node_min, node_max, node_left, node_right, node_first,
                    node_count, v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
                    env_img, env_flat, texel_dirs, texel_omega, cdf, pdf_sr,
                    env_w, env_h,
                    w_s, alpha_s, w_e, alpha_e, albedo,
                    cam_o[0], cam_o[1], cam_o[2], dx, dy, dz,
                    max_bounces, det_mode, t_eps, state, rec,
                )
                sr += r
                sg += g_
                sb += b
            inv = 1.0 / spp
            er = sr * inv
            eg = sg * inv
            eb = sb * inv
            out[k, 0] = er
            out[k, 1] = eg
            out[k, 2] = eb
            if not (np.isfinite(er) and np.isfinite(eg) and np.isfinite(eb)):
                bad[k] = 1
                continue
            res_r = er - targets[k, 0]
            res_g = eg - targets[k, 1]
            res_b = eb - targets[k, 2]
            loss_tile[tidx] += loss_scale * (
                res_r * res_r + res_g * res_g + res_b * res_b
            )
            wr = 2.0 * loss_scale * res_r * inv
            wg = 2.0 * loss_scale * res_g * inv
            wb = 2.0 * loss_scale * res_b * inv
            for s in range(spp):
                state = stream64(seed, pid, s)
                r, g_, b, nv = _trace_record(
                    node_min, node_max, node_left, node_right, node_first,
                    node_count, v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
                    env_img, env_flat, texel_dirs, texel_omega, cdf, pdf_sr,
                    env_w, env_h,
                    w_s, alpha_s, w_e, alpha_e, albedo,
                    cam_o[0], cam_o[1], cam_o[2], dx, dy, dz,
                    max_bounces, det_mode, t_eps, state, rec,
                )
                if nv > 0:
                    _backward_sample(
                        node_min, node_max, node_left, node_right, node_first,
                        node_count, v0, v1, v2,
                        env_flat, texel_dirs, texel_omega,
                        w_e, alpha_e, albedo,
                        det_mode, t_eps,
                        rec, nv, wr, wg, wb,
                        gw_box, ga_box, galb_tile[tidx], genv_tile[tidx],
                    )
        gw_tile[tidx] = gw_box[0]
        ga_tile[tidx] = ga_box[0]


@njit(cache=True, parallel=True)
def primary_hits(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
    cam_o, cam_rot, tan_x, tan_y, img_w, img_h,
    pixels,
    hit, pos, nrm, gn, wo, uv,
):
    """Center-ray hit cache for a pixel list: flags plus per-pixel position,
    shading normal, offset normal, outgoing direction and UV."""
    n = pixels.shape[0]
    for k in prange(n):
        pid = pixels[k]
        iy = pid // img_w
        ix = pid % img_w
        dx, dy, dz = _pixel_dir(cam_rot, tan_x, tan_y, img_w, img_h, ix, iy, 0.5, 0.5)
        kt, t_hit, bu, bv = g.bvh_nearest(
            node_min, node_max, node_left, node_right, node_first, node_count,
            v0, v1, v2, cam_o[0], cam_o[1], cam_o[2], dx, dy, dz, 0.0,
        )
        if kt < 0:
            hit[k] = 0
            continue
        hit[k] = 1
        nx, ny, nz, gx, gy, gz, uu, vv = g.shading_basis(
            v0, v1, v2, n0, n1, n2, uv0, uv1, uv2, kt, bu, bv, dx, dy, dz
        )
        pos[k, 0] = cam_o[0] + t_hit * dx
        pos[k, 1] = cam_o[1] + t_hit * dy
        pos[k, 2] = cam_o[2] + t_hit * dz
        nrm[k, 0] = nx
        nrm[k, 1] = ny
        nrm[k, 2] = nz
        gn[k, 0] = gx
        gn[k, 1] = gy
        gn[k, 2] = gz
        wo[k, 0] = -dx
        wo[k, 1] = -dy
        wo[k, 2] = -dz
        uv[k, 0] = uu
        uv[k, 1] = vv

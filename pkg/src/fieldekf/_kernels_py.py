"""Pure numpy implementation of the per-pixel kernels.

Mirrors ``_kernels.pyx`` function for function. Arrays are flattened over
pixels: G is (N, m, k), phi is (N, k, m), z is (N, m), valid is (N,) uint8.
"""

import numpy as np


def gram_white(G, Sinv, valid, scale):
    Gv = G[valid.astype(bool)]
    if Gv.shape[2] == 0:
        return np.zeros((0, 0))
    if Gv.shape[1] == 1:
        g = Gv[:, 0, :]
        return (g.T @ g) * (Sinv[0, 0] * scale)
    W = np.einsum("ml,nlk->nmk", Sinv, Gv)
    return np.einsum("nmj,nmk->jk", Gv, W) * scale


def gram_general(phi, G, valid, scale):
    mask = valid.astype(bool)
    return np.einsum("nkm,nmj->kj", phi[mask], G[mask]) * scale


def project_white(G, Sinv, z, valid, scale):
    mask = valid.astype(bool)
    w = z[mask] @ Sinv.T
    return np.einsum("nmk,nm->k", G[mask], w) * scale


def project_general(phi, z, valid, scale):
    mask = valid.astype(bool)
    return np.einsum("nkm,nm->k", phi[mask], z[mask]) * scale


def _bilinear(raster, fu, fv, iu, iv):
    a = raster[iv, iu]
    b = raster[iv, iu + 1]
    c = raster[iv + 1, iu]
    d = raster[iv + 1, iu + 1]
    return (a * (1.0 - fu) + b * fu) * (1.0 - fv) + (c * (1.0 - fu) + d * fu) * fv


def sample_bilinear(raster, u, v):
    """Bilinear samples of ``raster`` at fractional (col, row) indices.

    Returns (values, inside) with zeros where the point is off the raster.
    """
    H, W = raster.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (u >= 0.0) & (u <= W - 1) & (v >= 0.0) & (v <= H - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    iu = np.minimum(np.floor(uc).astype(np.intp), max(W - 2, 0))
    iv = np.minimum(np.floor(vc).astype(np.intp), max(H - 2, 0))
    fu = uc - iu
    fv = vc - iv
    if W == 1 or H == 1:
        out = raster[iv, iu].astype(float)
    else:
        out = _bilinear(raster, fu, fv, iu, iv)
    return np.where(inside, out, 0.0), inside


def render_jacobian(C, Cx, Cy, map_origin, map_pitch, sensor_x, sensor_y,
                    px, py, height, theta, focal, elev_grad):
    """Render the expected image and its nonzero Jacobian columns.

    sensor_x, sensor_y are metric sensor coordinates per pixel (1-D over
    cols and rows). Returns (intensity (R, C), valid (R, C) uint8,
    G (R, C, 4)) with G columns ordered [rho_x, rho_y, rho_z, theta].
    """
    c, s = np.cos(theta), np.sin(theta)
    i1 = sensor_x[None, :]
    i2 = sensor_y[:, None]
    # q = R i / L_f, dq = dR/dtheta i / L_f
    q1 = (c * i1 - s * i2) / focal
    q2 = (s * i1 + c * i2) / focal
    p1 = px + q1 * height
    p2 = py + q2 * height
    u = (p1 - map_origin[1]) / map_pitch[1]
    v = (p2 - map_origin[0]) / map_pitch[0]
    value, inside = sample_bilinear(C, u, v)
    gx, _ = sample_bilinear(Cx, u, v)
    gy, _ = sample_bilinear(Cy, u, v)
    dq1 = -q2
    dq2 = q1
    gq = gx * q1 + gy * q2
    G = np.empty(value.shape + (4,))
    G[..., 0] = gx - elev_grad[0] * gq
    G[..., 1] = gy - elev_grad[1] * gq
    G[..., 2] = gq
    G[..., 3] = height * (gx * dq1 + gy * dq2)
    G[~inside] = 0.0
    return value, inside.astype(np.uint8), G

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels.

Same contracts as ``_kernels_py``. Every reduction walks pixels in index
order, so results are bit-reproducible for fixed inputs.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, floor

cnp.import_array()


def gram_white(const double[:, :, ::1] G, const double[:, ::1] Sinv,
               const unsigned char[::1] valid, double scale):
    cdef Py_ssize_t N = G.shape[0], m = G.shape[1], k = G.shape[2]
    cdef Py_ssize_t p, a, b, r, t
    out_arr = np.zeros((k, k))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] w = np.zeros(m)
    cdef double s0, wa
    with nogil:
        if m == 1:
            s0 = Sinv[0, 0]
            for p in range(N):
                if not valid[p]:
                    continue
                for a in range(k):
                    wa = G[p, 0, a]
                    if wa == 0.0:
                        continue
                    for b in range(a, k):
                        out[a, b] += wa * G[p, 0, b]
            for a in range(k):
                for b in range(a, k):
                    out[a, b] *= s0 * scale
                    out[b, a] = out[a, b]
        else:
            for p in range(N):
                if not valid[p]:
                    continue
                for b in range(k):
                    for r in range(m):
                        w[r] = 0.0
                        for t in range(m):
                            w[r] += Sinv[r, t] * G[p, t, b]
                    for a in range(k):
                        for r in range(m):
                            out[a, b] += G[p, r, a] * w[r]
            for a in range(k):
                for b in range(k):
                    out[a, b] *= scale
    return out_arr


def gram_general(const double[:, :, ::1] phi, const double[:, :, ::1] G,
                 const unsigned char[::1] valid, double scale):
    cdef Py_ssize_t N = G.shape[0], m = G.shape[1], k = G.shape[2]
    cdef Py_ssize_t p, a, b, r
    out_arr = np.zeros((k, k))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(N):
            if not valid[p]:
                continue
            for a in range(k):
                for r in range(m):
                    for b in range(k):
                        out[a, b] += phi[p, a, r] * G[p, r, b]
        for a in range(k):
            for b in range(k):
                out[a, b] *= scale
    return out_arr


def project_white(const double[:, :, ::1] G, const double[:, ::1] Sinv,
                  const double[:, ::1] z, const unsigned char[::1] valid, double scale):
    cdef Py_ssize_t N = G.shape[0], m = G.shape[1], k = G.shape[2]
    cdef Py_ssize_t p, a, r, t
    out_arr = np.zeros(k)
    cdef double[::1] out = out_arr
    cdef double[::1] w = np.zeros(m)
    with nogil:
        for p in range(N):
            if not valid[p]:
                continue
            for r in range(m):
                w[r] = 0.0
                for t in range(m):
                    w[r] += Sinv[r, t] * z[p, t]
            for a in range(k):
                for r in range(m):
                    out[a] += G[p, r, a] * w[r]
        for a in range(k):
            out[a] *= scale
    return out_arr


def project_general(const double[:, :, ::1] phi, const double[:, ::1] z,
                    const unsigned char[::1] valid, double scale):
    cdef Py_ssize_t N = phi.shape[0], k = phi.shape[1], m = phi.shape[2]
    cdef Py_ssize_t p, a, r
    out_arr = np.zeros(k)
    cdef double[::1] out = out_arr
    with nogil:
        for p in range(N):
            if not valid[p]:
                continue
            for a in range(k):
                for r in range(m):
                    out[a] += phi[p, a, r] * z[p, r]
        for a in range(k):
            out[a] *= scale
    return out_arr


cdef inline double _lerp2(const double[:, ::1] R, Py_ssize_t iv, Py_ssize_t iu,
                          double fu, double fv) noexcept nogil:
    return ((R[iv, iu] * (1.0 - fu) + R[iv, iu + 1] * fu) * (1.0 - fv)
            + (R[iv + 1, iu] * (1.0 - fu) + R[iv + 1, iu + 1] * fu) * fv)


def render_jacobian(const double[:, ::1] C, const double[:, ::1] Cx, const double[:, ::1] Cy,
                    map_origin, map_pitch,
                    const double[::1] sensor_x, const double[::1] sensor_y,
                    double px, double py, double height, double theta, double focal,
                    elev_grad):
    cdef Py_ssize_t H = C.shape[0], W = C.shape[1]
    cdef Py_ssize_t rows = sensor_y.shape[0], cols = sensor_x.shape[0]
    cdef double oy = map_origin[0], ox = map_origin[1]
    cdef double sy = map_pitch[0], sx = map_pitch[1]
    cdef double ex = elev_grad[0], ey = elev_grad[1]
    cdef double c = cos(theta), s = sin(theta)
    value_arr = np.zeros((rows, cols))
    valid_arr = np.zeros((rows, cols), dtype=np.uint8)
    G_arr = np.zeros((rows, cols, 4))
    cdef double[:, ::1] value = value_arr
    cdef unsigned char[:, ::1] valid = valid_arr
    cdef double[:, :, ::1] G = G_arr
    cdef Py_ssize_t r, q, iu, iv
    cdef double i1, i2, q1, q2, u, v, fu, fv, gx, gy, gq
    cdef double umax = W - 1, vmax = H - 1
    if H < 2 or W < 2:
        raise ValueError("map raster must be at least 2 x 2")
    with nogil:
        for r in range(rows):
            i2 = sensor_y[r]
            for q in range(cols):
                i1 = sensor_x[q]
                q1 = (c * i1 - s * i2) / focal
                q2 = (s * i1 + c * i2) / focal
                u = (px + q1 * height - ox) / sx
                v = (py + q2 * height - oy) / sy
                if u < 0.0 or u > umax or v < 0.0 or v > vmax:
                    continue
                iu = <Py_ssize_t> floor(u)
                iv = <Py_ssize_t> floor(v)
                if iu > W - 2:
                    iu = W - 2
                if iv > H - 2:
                    iv = H - 2
                fu = u - iu
                fv = v - iv
                valid[r, q] = 1
                value[r, q] = _lerp2(C, iv, iu, fu, fv)
                gx = _lerp2(Cx, iv, iu, fu, fv)
                gy = _lerp2(Cy, iv, iu, fu, fv)
                gq = gx * q1 + gy * q2
                G[r, q, 0] = gx - ex * gq
                G[r, q, 1] = gy - ey * gq
                G[r, q, 2] = gq
                G[r, q, 3] = height * (gy * q1 - gx * q2)
    return value_arr, valid_arr, G_arr

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray kernels. Same API and results as ``_kernels_py``."""

import numpy as np
from libc.math cimport sqrt, fabs

cdef double T_EPS = 1e-7
cdef double RECT_EPS = 1e-9


cdef inline double _hit(double px, double py, double pz, double dx, double dy, double dz,
                        const double[:, ::1] o, const double[:, ::1] u, const double[:, ::1] v,
                        const double[:, ::1] n, const double[::1] uu, const double[::1] vv,
                        Py_ssize_t s, double tmin, double tmax) noexcept nogil:
    """Ray parameter of the hit on surface ``s`` in (tmin, tmax), or -1."""
    cdef double denom = n[s, 0] * dx + n[s, 1] * dy + n[s, 2] * dz
    if fabs(denom) < 1e-14:
        return -1.0
    cdef double t = (n[s, 0] * (o[s, 0] - px) + n[s, 1] * (o[s, 1] - py) + n[s, 2] * (o[s, 2] - pz)) / denom
    if t <= tmin or t >= tmax:
        return -1.0
    cdef double wx = px + t * dx - o[s, 0]
    cdef double wy = py + t * dy - o[s, 1]
    cdef double wz = pz + t * dz - o[s, 2]
    cdef double a = (wx * u[s, 0] + wy * u[s, 1] + wz * u[s, 2]) / uu[s]
    if a < -RECT_EPS or a > 1.0 + RECT_EPS:
        return -1.0
    cdef double b = (wx * v[s, 0] + wy * v[s, 1] + wz * v[s, 2]) / vv[s]
    if b < -RECT_EPS or b > 1.0 + RECT_EPS:
        return -1.0
    return t


def _norms(const double[:, ::1] u):
    out = np.einsum("ij,ij->i", np.asarray(u), np.asarray(u))
    return np.ascontiguousarray(out)


def launch(const double[::1] tx, const double[:, ::1] dirs, const double[:, ::1] o,
           const double[:, ::1] u, const double[:, ::1] v, const double[:, ::1] n,
           int max_bounces, double max_dist):
    """Bounce each unit ray specularly off the nearest surface up to ``max_bounces`` times.

    Returns ``(start, direction, length, hit, cumulative)`` with a leading
    ``(rays, max_bounces + 1)`` shape. ``hit`` is the surface ending the
    segment, -1 for none, -2 for segments never reached.
    """
    cdef Py_ssize_t nr = dirs.shape[0], ns = o.shape[0], nb = max_bounces + 1
    cdef double[::1] uu = _norms(u), vv = _norms(v)
    seg_p_arr = np.zeros((nr, nb, 3))
    seg_d_arr = np.zeros((nr, nb, 3))
    seg_len_arr = np.zeros((nr, nb))
    seg_hit_arr = np.full((nr, nb), -2, dtype=np.int32)
    seg_cum_arr = np.zeros((nr, nb))
    cdef double[:, :, ::1] seg_p = seg_p_arr, seg_d = seg_d_arr
    cdef double[:, ::1] seg_len = seg_len_arr, seg_cum = seg_cum_arr
    cdef int[:, ::1] seg_hit = seg_hit_arr
    cdef Py_ssize_t i, j, s, best, prev
    cdef double px, py, pz, dx, dy, dz, t, tbest, cum, dn
    with nogil:
        for i in range(nr):
            px = tx[0]; py = tx[1]; pz = tx[2]
            dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
            cum = 0.0
            prev = -1
            for j in range(nb):
                tbest = max_dist - cum
                if tbest <= 0:
                    break
                best = -1
                for s in range(ns):
                    if s == prev:
                        continue
                    t = _hit(px, py, pz, dx, dy, dz, o, u, v, n, uu, vv, s, T_EPS, tbest)
                    if t > 0:
                        tbest = t
                        best = s
                seg_p[i, j, 0] = px; seg_p[i, j, 1] = py; seg_p[i, j, 2] = pz
                seg_d[i, j, 0] = dx; seg_d[i, j, 1] = dy; seg_d[i, j, 2] = dz
                seg_len[i, j] = tbest
                seg_cum[i, j] = cum
                seg_hit[i, j] = best
                if best < 0:
                    break
                px = px + tbest * dx; py = py + tbest * dy; pz = pz + tbest * dz
                cum = cum + tbest
                dn = 2.0 * (dx * n[best, 0] + dy * n[best, 1] + dz * n[best, 2])
                dx = dx - dn * n[best, 0]; dy = dy - dn * n[best, 1]; dz = dz - dn * n[best, 2]
                prev = best
    return seg_p_arr, seg_d_arr, seg_len_arr, seg_hit_arr, seg_cum_arr


cdef Py_ssize_t _detect(const double[:, :, ::1] seg_p, const double[:, :, ::1] seg_d,
                        const double[:, ::1] seg_len, const int[:, ::1] seg_hit,
                        const double[:, ::1] seg_cum, const double[:, ::1] rx,
                        double angle, double radius, int first,
                        int[::1] out_ray, int[::1] out_seg, int[::1] out_rx,
                        double[::1] out_ratio) noexcept nogil:
    cdef Py_ssize_t nr = seg_p.shape[0], nb = seg_p.shape[1], nm = rx.shape[0]
    cdef Py_ssize_t cap = out_ray.shape[0], count = 0, i, j, m
    cdef double wx, wy, wz, t, perp2, r
    for i in range(nr):
        for j in range(first, nb):
            if seg_hit[i, j] == -2:
                break
            for m in range(nm):
                wx = rx[m, 0] - seg_p[i, j, 0]
                wy = rx[m, 1] - seg_p[i, j, 1]
                wz = rx[m, 2] - seg_p[i, j, 2]
                t = wx * seg_d[i, j, 0] + wy * seg_d[i, j, 1] + wz * seg_d[i, j, 2]
                if t < 0 or t > seg_len[i, j]:
                    continue
                perp2 = wx * wx + wy * wy + wz * wz - t * t
                if perp2 < 0:
                    perp2 = 0
                r = radius if radius > 0 else angle * (seg_cum[i, j] + t)
                if perp2 <= r * r:
                    if count < cap:
                        out_ray[count] = <int>i
                        out_seg[count] = <int>j
                        out_rx[count] = <int>m
                        out_ratio[count] = sqrt(perp2) / r
                    count += 1
    return count


def detect(seg_p, seg_d, seg_len, seg_hit, seg_cum, rx, double angle, double radius, int first=1):
    """Segments passing within the reception radius of each receiver.

    Returns ``(ray, segment, rx_index, miss_ratio)`` where ``miss_ratio`` is
    the closest-approach distance divided by the reception radius.
    """
    rx = np.ascontiguousarray(rx, dtype=np.float64)
    cap = 4096
    while True:
        out_ray = np.empty(cap, dtype=np.int32)
        out_seg = np.empty(cap, dtype=np.int32)
        out_rx = np.empty(cap, dtype=np.int32)
        out_ratio = np.empty(cap)
        count = _detect(seg_p, seg_d, seg_len, seg_hit, seg_cum, rx, angle, radius, first,
                        out_ray, out_seg, out_rx, out_ratio)
        if count <= cap:
            return out_ray[:count], out_seg[:count], out_rx[:count], out_ratio[:count]
        cap = count


def occluded(const double[:, ::1] p, const double[:, ::1] q, const int[::1] skip_a,
             const int[::1] skip_b, const double[:, ::1] o, const double[:, ::1] u,
             const double[:, ::1] v, const double[:, ::1] n):
    """True where some surface (other than the two skipped) cuts the open segment p -> q."""
    cdef Py_ssize_t k, s, nk = p.shape[0], ns = o.shape[0]
    cdef double[::1] uu = _norms(u), vv = _norms(v)
    out_arr = np.zeros(nk, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    with nogil:
        for k in range(nk):
            for s in range(ns):
                if s == skip_a[k] or s == skip_b[k]:
                    continue
                if _hit(p[k, 0], p[k, 1], p[k, 2], q[k, 0] - p[k, 0], q[k, 1] - p[k, 1],
                        q[k, 2] - p[k, 2], o, u, v, n, uu, vv, s, T_EPS, 1.0 - T_EPS) > 0:
                    out[k] = 1
                    break
    return out_arr.astype(bool)


cdef Py_ssize_t _scatter(const double[:, ::1] hits, const int[::1] surf, const double[::1] src,
                         const double[:, ::1] rx, const double[:, ::1] o, const double[:, ::1] u,
                         const double[:, ::1] v, const double[:, ::1] n, const double[::1] uu,
                         const double[::1] vv, int[::1] out_h, int[::1] out_m) noexcept nogil:
    cdef Py_ssize_t nh = hits.shape[0], nm = rx.shape[0], ns = o.shape[0]
    cdef Py_ssize_t cap = out_h.shape[0], count = 0, h, m, s, sh
    cdef double side_src, side_rx, dx, dy, dz
    cdef bint blocked
    for h in range(nh):
        sh = surf[h]
        side_src = (n[sh, 0] * (src[0] - hits[h, 0]) + n[sh, 1] * (src[1] - hits[h, 1])
                    + n[sh, 2] * (src[2] - hits[h, 2]))
        for m in range(nm):
            dx = rx[m, 0] - hits[h, 0]
            dy = rx[m, 1] - hits[h, 1]
            dz = rx[m, 2] - hits[h, 2]
            side_rx = n[sh, 0] * dx + n[sh, 1] * dy + n[sh, 2] * dz
            if side_rx * side_src <= 0:
                continue
            blocked = False
            for s in range(ns):
                if s == sh:
                    continue
                if _hit(hits[h, 0], hits[h, 1], hits[h, 2], dx, dy, dz, o, u, v, n, uu, vv,
                        s, T_EPS, 1.0 - T_EPS) > 0:
                    blocked = True
                    break
            if not blocked:
                if count < cap:
                    out_h[count] = <int>h
                    out_m[count] = <int>m
                count += 1
    return count


def scatter_visible(hits, surf, src, rx, o, u, v, n):
    """Pairs (hit, rx) where rx lies on the lit side of the hit surface and sees the hit point."""
    hits = np.ascontiguousarray(hits, dtype=np.float64)
    surf = np.ascontiguousarray(surf, dtype=np.int32)
    src = np.ascontiguousarray(src, dtype=np.float64)
    rx = np.ascontiguousarray(rx, dtype=np.float64)
    uu, vv = _norms(u), _norms(v)
    cap = 4096
    while True:
        out_h = np.empty(cap, dtype=np.int32)
        out_m = np.empty(cap, dtype=np.int32)
        count = _scatter(hits, surf, src, rx, o, u, v, n, uu, vv, out_h, out_m)
        if count <= cap:
            return out_h[:count], out_m[:count]
        cap = count

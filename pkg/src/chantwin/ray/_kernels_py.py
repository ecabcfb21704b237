"""Pure-numpy ray kernels. Same API and results as the compiled ``_kernels``."""

import numpy as np

T_EPS = 1e-7
RECT_EPS = 1e-9
CHUNK = 2048


def _hits(p, d, o, u, v, n, tmin, tmax):
    """Ray parameters ``(k, s)`` of each ray against each surface, ``inf`` where missed.

    ``p``, ``d`` are ``(k, 3)``; ``tmax`` is scalar or ``(k,)``.
    """
    denom = d @ n.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (np.einsum("sj,sj->s", n, o)[None, :] - p @ n.T) / denom
    tmax = np.broadcast_to(np.asarray(tmax, dtype=np.float64), (p.shape[0],))[:, None]
    ok = (np.abs(denom) >= 1e-14) & (t > tmin) & (t < tmax)
    t = np.where(ok, t, 0.0)
    w = p[:, None, :] + t[..., None] * d[:, None, :] - o[None, :, :]
    a = np.einsum("ksj,sj->ks", w, u) / np.einsum("sj,sj->s", u, u)
    b = np.einsum("ksj,sj->ks", w, v) / np.einsum("sj,sj->s", v, v)
    ok &= (a >= -RECT_EPS) & (a <= 1 + RECT_EPS) & (b >= -RECT_EPS) & (b <= 1 + RECT_EPS)
    return np.where(ok, t, np.inf)


def launch(tx, dirs, o, u, v, n, max_bounces, max_dist):
    dirs = np.asarray(dirs, dtype=np.float64)
    nr, nb = dirs.shape[0], max_bounces + 1
    seg_p = np.zeros((nr, nb, 3))
    seg_d = np.zeros((nr, nb, 3))
    seg_len = np.zeros((nr, nb))
    seg_hit = np.full((nr, nb), -2, dtype=np.int32)
    seg_cum = np.zeros((nr, nb))
    for lo in range(0, nr, CHUNK):
        idx = np.arange(lo, min(lo + CHUNK, nr))
        p = np.tile(np.asarray(tx, dtype=np.float64), (len(idx), 1))
        d = dirs[idx].copy()
        cum = np.zeros(len(idx))
        prev = np.full(len(idx), -1)
        alive = np.ones(len(idx), dtype=bool)
        for j in range(nb):
            alive &= (max_dist - cum) > 0
            if not alive.any():
                break
            a = np.nonzero(alive)[0]
            t = _hits(p[a], d[a], o, u, v, n, T_EPS, max_dist - cum[a])
            rows = np.arange(len(a))
            t[rows[prev[a] >= 0], prev[a][prev[a] >= 0]] = np.inf
            if t.shape[1]:
                best = np.argmin(t, axis=1)
                tb = t[rows, best]
            else:
                best = np.zeros(len(a), dtype=np.int64)
                tb = np.full(len(a), np.inf)
            missed = ~np.isfinite(tb)
            tb = np.where(missed, max_dist - cum[a], tb)
            best = np.where(missed, -1, best)
            gi = idx[a]
            seg_p[gi, j] = p[a]
            seg_d[gi, j] = d[a]
            seg_len[gi, j] = tb
            seg_cum[gi, j] = cum[a]
            seg_hit[gi, j] = best
            hit = ~missed
            ah = a[hit]
            p[ah] = p[ah] + tb[hit, None] * d[ah]
            cum[ah] = cum[ah] + tb[hit]
            nn = n[best[hit]]
            d[ah] = d[ah] - 2.0 * np.sum(d[ah] * nn, axis=1, keepdims=True) * nn
            prev[ah] = best[hit]
            alive[a[missed]] = False
    return seg_p, seg_d, seg_len, seg_hit, seg_cum


def detect(seg_p, seg_d, seg_len, seg_hit, seg_cum, rx, angle, radius, first=1):
    rx = np.asarray(rx, dtype=np.float64)
    nr, nb = seg_len.shape
    out = []
    for j in range(first, nb):
        active = np.nonzero(seg_hit[:, j] != -2)[0]
        for lo in range(0, len(active), CHUNK):
            i = active[lo:lo + CHUNK]
            w = rx[None, :, :] - seg_p[i, j][:, None, :]
            t = np.einsum("kmj,kj->km", w, seg_d[i, j])
            perp2 = np.maximum(np.einsum("kmj,kmj->km", w, w) - t * t, 0.0)
            r = radius if radius > 0 else angle * (seg_cum[i, j][:, None] + t)
            ok = (t >= 0) & (t <= seg_len[i, j][:, None]) & (perp2 <= r * r)
            k, m = np.nonzero(ok)
            rr = r[k, m] if np.ndim(r) else np.full(len(k), float(r))
            out.append((i[k], np.full(len(k), j), m, np.sqrt(perp2[k, m]) / rr))
    if not out:
        e = np.zeros(0, dtype=np.int32)
        return e, e, e, np.zeros(0)
    ray, seg, m, ratio = (np.concatenate(c) for c in zip(*out))
    order = np.lexsort((m, seg, ray))
    return (ray[order].astype(np.int32), seg[order].astype(np.int32), m[order].astype(np.int32),
            ratio[order])


def occluded(p, q, skip_a, skip_b, o, u, v, n):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros(len(p), dtype=bool)
    s_idx = np.arange(o.shape[0])
    for lo in range(0, len(p), CHUNK):
        sl = slice(lo, lo + CHUNK)
        t = _hits(p[sl], q[sl] - p[sl], o, u, v, n, T_EPS, 1.0 - T_EPS)
        skip = (s_idx[None, :] == np.asarray(skip_a)[sl, None]) | (s_idx[None, :] == np.asarray(skip_b)[sl, None])
        out[sl] = np.any(np.isfinite(t) & ~skip, axis=1)
    return out


def scatter_visible(hits, surf, src, rx, o, u, v, n):
    hits = np.asarray(hits, dtype=np.float64)
    surf = np.asarray(surf)
    rx = np.asarray(rx, dtype=np.float64)
    nh, nm = len(hits), len(rx)
    side_src = np.einsum("hj,hj->h", n[surf], np.asarray(src)[None, :] - hits)
    out_h, out_m = [], []
    for lo in range(0, nh, max(1, CHUNK // max(nm, 1))):
        h = np.arange(lo, min(lo + max(1, CHUNK // max(nm, 1)), nh))
        hh, mm = np.repeat(h, nm), np.tile(np.arange(nm), len(h))
        side_rx = np.einsum("kj,kj->k", n[surf[hh]], rx[mm] - hits[hh])
        front = side_rx * side_src[hh] > 0
        hh, mm = hh[front], mm[front]
        skip = surf[hh].astype(np.int32)
        vis = ~occluded(hits[hh], rx[mm], skip, skip, o, u, v, n)
        out_h.append(hh[vis])
        out_m.append(mm[vis])
    if not out_h:
        e = np.zeros(0, dtype=np.int32)
        return e, e
    return np.concatenate(out_h).astype(np.int32), np.concatenate(out_m).astype(np.int32)

"""Shooting-and-bouncing-rays tracer with exact specular refinement.

Pipeline per scene and receiver set:

1. Line of sight, added deterministically when unobstructed.
2. Rays uniform on the sphere are bounced specularly. A ray segment that
   passes within the reception radius of a receiver registers the
   reflection sequence it followed. Each distinct sequence is then
   recomputed exactly by the image method, so the ray count decides
   *which* specular paths are found, not their delay or gain.
3. Single knife-edge diffraction over every wall edge whose two legs are
   clear. Edges bounding a roof include the roof-reflected wave that
   reaches the edge alongside the direct one.
4. Diffuse scattering from the first hit of each ray (Lambertian lobe).

The reception radius is ``reception_angle`` times the unfolded ray length
unless a fixed ``reception_radius`` is given. Rays are drawn in fixed-size
chunks from per-chunk seeds, so the first ``n`` rays of a larger launch are
exactly the rays of a launch of ``n``.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from . import kernels
from .physics import C0, edge_coefficient, fresnel_parameter, fresnel_reflection

REFLECTION, DIFFRACTION, SCATTER = 1, 2, 3
KIND_NAMES = {REFLECTION: "reflection", DIFFRACTION: "diffraction", SCATTER: "scatter"}
RAY_CHUNK = 4096
LAUNCH_BLOCK = 16 * RAY_CHUNK

TIERS = {"LF": 1_000, "MF": 10_000, "HF": 100_000}
DESK_TIERS = {"LF": 100, "MF": 1_000, "HF": 10_000}
REFERENCE_RAYS = 1_000_000


@dataclass(frozen=True)
class TraceConfig:
    ray_count: int = 10_000
    max_reflections: int = 3
    enable_los: bool = True
    enable_diffraction: bool = True
    enable_scattering: bool = True
    reception_angle: float = 0.03  # rad
    reception_radius: float = None  # m; overrides reception_angle when set
    seed: int = 0
    scatter_rays: int = 10_000  # rays whose first hit re-radiates diffusely
    max_distance: float = 5_000.0

    def __post_init__(self):
        if self.ray_count < 0 or self.max_reflections < 0 or self.scatter_rays < 0:
            raise ValidationError("ray_count, max_reflections and scatter_rays must be non-negative")
        if self.reception_radius is not None:
            if not self.reception_radius > 0:
                raise ValidationError("reception_radius must be positive")
        elif not self.reception_angle > 0:
            raise ValidationError("reception_angle must be positive")


@dataclass
class PathList:
    """Traced paths for one receiver, sorted by delay then interaction trace.

    ``kinds``/``ids`` are ``(paths, max_events)``; unused slots hold 0/-1.
    ``ids`` are surface indices for reflection and scatter events and edge
    indices for diffraction. ``ray`` is the launching ray behind SBR paths
    (-1 for deterministic ones).
    """

    delay: np.ndarray
    amplitude: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray
    kinds: np.ndarray
    ids: np.ndarray
    ray: np.ndarray

    def __len__(self):
        return len(self.delay)

    @classmethod
    def empty(cls, max_events=1):
        z = np.zeros(0)
        return cls(z, z.astype(complex), z, z, np.zeros((0, max_events), np.int8),
                   np.full((0, max_events), -1, np.int32), np.zeros(0, np.int32))

    def trace(self, i):
        return tuple((KIND_NAMES[int(k)], int(s)) for k, s in zip(self.kinds[i], self.ids[i]) if k)

    def keys(self):
        """Hashable identity per path: the trace, plus the ray for scattered paths."""
        out = []
        for i in range(len(self)):
            t = self.trace(i)
            out.append(t + ((int(self.ray[i]),) if any(k == SCATTER for k in self.kinds[i]) else ()))
        return out

    def is_los(self):
        return ~np.any(self.kinds != 0, axis=1)

    def select(self, mask):
        return PathList(self.delay[mask], self.amplitude[mask], self.azimuth[mask],
                        self.elevation[mask], self.kinds[mask], self.ids[mask], self.ray[mask])

    def sorted(self):
        keys = [self.ray] + [self.ids[:, j] for j in range(self.ids.shape[1] - 1, -1, -1)]
        keys += [self.kinds[:, j] for j in range(self.kinds.shape[1] - 1, -1, -1)] + [self.delay]
        return self.select(np.lexsort(keys))

    def departure(self):
        ce = np.cos(self.elevation)
        return np.column_stack([ce * np.cos(self.azimuth), ce * np.sin(self.azimuth), np.sin(self.elevation)])


def _angles(vec):
    vec = vec / np.linalg.norm(vec, axis=-1, keepdims=True)
    return np.arctan2(vec[..., 1], vec[..., 0]), np.arcsin(np.clip(vec[..., 2], -1.0, 1.0))


def ray_directions(count, seed, start=0):
    """Unit vectors uniform on the sphere, nested across counts for a fixed seed."""
    out = np.empty((max(count - start, 0), 3))
    first_chunk, pos = start // RAY_CHUNK, 0
    for chunk in range(first_chunk, (count + RAY_CHUNK - 1) // RAY_CHUNK):
        lo = chunk * RAY_CHUNK
        n = min(RAY_CHUNK, count - lo)
        g = np.random.default_rng(np.random.SeedSequence([seed, chunk]))
        d = g.standard_normal((n, 3))
        d = d[max(start - lo, 0):]
        out[pos:pos + len(d)] = d
        pos += len(d)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


class _Builder:
    """Collects path components for many receivers before splitting them."""

    def __init__(self, n_rx, max_events):
        self.n_rx = n_rx
        self.e = max_events
        self.parts = []

    def add(self, rx_idx, delay, amp, direction, kinds, ids, ray=None):
        k = len(rx_idx)
        if not k:
            return
        az, el = _angles(np.asarray(direction, dtype=np.float64))
        kk = np.zeros((k, self.e), np.int8)
        ii = np.full((k, self.e), -1, np.int32)
        kinds = np.asarray(kinds).reshape(k, np.size(kinds) // k)
        ids = np.asarray(ids).reshape(k, np.size(ids) // k)
        kk[:, :kinds.shape[1]] = kinds
        ii[:, :ids.shape[1]] = ids
        ray = np.full(k, -1, np.int32) if ray is None else np.asarray(ray, np.int32)
        self.parts.append((np.asarray(rx_idx), delay, amp, az, el, kk, ii, ray))

    def build(self):
        if not self.parts:
            return [PathList.empty(self.e) for _ in range(self.n_rx)]
        rx, *cols = (np.concatenate(c) for c in zip(*self.parts))
        order = np.argsort(rx, kind="stable")
        rx = rx[order]
        cols = [c[order] for c in cols]
        bounds = np.searchsorted(rx, np.arange(self.n_rx + 1))
        out = []
        for m in range(self.n_rx):
            sl = slice(bounds[m], bounds[m + 1])
            out.append(PathList(*(c[sl] for c in cols)).sorted())
        return out


def _coefficient(material, horizontal, cos_inc, frequency):
    """Reflection coefficient for a vertically polarized wave."""
    theta = np.arccos(np.clip(cos_inc, 0.0, 1.0))
    if horizontal:
        return -fresnel_reflection(material, theta, frequency, "TM")
    return fresnel_reflection(material, theta, frequency, "TE")


def _occluded(geo, p, q, skip_a=None, skip_b=None):
    k = len(p)
    sa = np.full(k, -1, np.int32) if skip_a is None else np.broadcast_to(np.asarray(skip_a, np.int32), (k,)).copy()
    sb = np.full(k, -1, np.int32) if skip_b is None else np.broadcast_to(np.asarray(skip_b, np.int32), (k,)).copy()
    if k == 0:
        return np.zeros(0, dtype=bool)
    return kernels.occluded(np.ascontiguousarray(p, dtype=np.float64), np.ascontiguousarray(q, dtype=np.float64),
                            sa, sb, *geo.arrays())


def _mirror(point, o, n):
    return point - 2.0 * np.dot(point - o, n) * n


def specular_paths(geo, sequence, tx, rx, frequency):
    """Exact image-method path through ``sequence`` of surfaces for each receiver.

    Returns
    -------
    valid : bool array
    length : unfolded path length per receiver
    gain : complex product of reflection factors per receiver
    first : first interaction point (or the receiver) per receiver, for the departure direction
    """
    o, u, v, n = geo.arrays()
    rx = np.atleast_2d(np.asarray(rx, dtype=np.float64))
    k = len(rx)
    images = [np.asarray(tx, dtype=np.float64)]
    for s in sequence:
        images.append(_mirror(images[-1], o[s], n[s]))
    valid = np.ones(k, dtype=bool)
    target = rx.copy()
    points = [None] * len(sequence)
    for i in range(len(sequence) - 1, -1, -1):
        s = sequence[i]
        img = images[i + 1]
        d = target - img
        denom = d @ n[s]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.dot(o[s] - img, n[s]) / denom
        valid &= (np.abs(denom) > 1e-12) & (t > 0) & (t < 1)
        t = np.where(valid, t, 0.5)
        r = img + t[:, None] * d
        w = r - o[s]
        a = w @ u[s] / (u[s] @ u[s])
        b = w @ v[s] / (v[s] @ v[s])
        valid &= (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        points[i] = r
        target = r
    chain = [np.broadcast_to(images[0], rx.shape)] + points + [rx]
    surf_seq = [-1] + list(sequence) + [-1]
    gain = np.ones(k, dtype=complex)
    for i in range(len(chain) - 1):
        idx = np.nonzero(valid)[0]
        if not len(idx):
            break
        blocked = _occluded(geo, chain[i][idx], chain[i + 1][idx], surf_seq[i], surf_seq[i + 1])
        valid[idx[blocked]] = False
    for i, s in enumerate(sequence):
        inc = chain[i + 1] - chain[i]
        cos_inc = np.abs(inc @ n[s]) / np.maximum(np.linalg.norm(inc, axis=1), 1e-300)
        mat = geo.materials[s]
        gain *= _coefficient(mat, geo.horizontal[s], cos_inc, frequency) * np.sqrt(1.0 - mat.scattering ** 2)
    length = np.linalg.norm(rx - images[-1], axis=1)
    first = points[0] if points else rx
    return valid, length, gain, first


def _segment_hits_surface(geo, p, q, s):
    """Whether each segment p -> q crosses surface ``s``."""
    o, u, v, n = geo.arrays()
    from ._kernels_py import _hits
    t = _hits(p, q - p, o[s:s + 1], u[s:s + 1], v[s:s + 1], n[s:s + 1], 1e-9, 1 - 1e-9)
    return np.isfinite(t[:, 0])


def _edge_faces(geo, edge, e):
    """Faces meeting at ``edge`` and their unit directions away from it, normal to the edge."""
    faces = list(edge.surfaces[:1]) + ([edge.roof] if edge.roof >= 0 else list(edge.surfaces[1:2]))
    mid = 0.5 * (np.asarray(edge.a, dtype=np.float64) + np.asarray(edge.b, dtype=np.float64))
    dirs = []
    for f in faces:
        c = geo.origin[f] + 0.5 * geo.u[f] + 0.5 * geo.v[f] - mid
        c = c - (c @ e) * e
        dirs.append(c / np.linalg.norm(c))
    return faces, dirs


def _inside_wedge(geo, edge, e, points):
    """True where ``points`` lie strictly inside the solid wedge between the edge's two faces.

    Each face leaves the edge towards its own centroid; the wedge is the cone
    spanned by those two directions (building corners are convex).
    """
    faces, dirs = _edge_faces(geo, edge, e)
    if len(faces) < 2:
        return np.zeros(len(points), dtype=bool)
    f1, f2 = dirs
    w = points - np.asarray(edge.a, dtype=np.float64)
    w = w - (w @ e)[:, None] * e
    # solve w = alpha f1 + beta f2 in the plane normal to the edge
    g = np.array([[f1 @ f1, f1 @ f2], [f1 @ f2, f2 @ f2]])
    if abs(np.linalg.det(g)) < 1e-12:
        return np.zeros(len(points), dtype=bool)
    coef = np.linalg.solve(g, np.stack([w @ f1, w @ f2]))
    return (coef[0] > 1e-9) & (coef[1] > 1e-9)


def _face_illumination(geo, edge, e, tx, d_pt, d1, frequency):
    """Product of (1 + reflection coefficient) over the edge faces lit by ``tx``.

    The field at a point on a lit face is the incident wave plus its
    reflection, so the face material sets how strongly the edge is excited.
    """
    faces, dirs = _edge_faces(geo, edge, e)
    out = np.ones(len(d_pt), dtype=np.complex128)
    if len(faces) < 2:
        return out
    a = np.asarray(edge.a, dtype=np.float64)
    for f, other in ((faces[0], dirs[1]), (faces[1], dirs[0])):
        n = geo.normal[f]
        side = (tx - a) @ n
        if side * (other @ n) >= 0 or abs(side) < 1e-9:
            continue
        cos_inc = np.abs((tx - d_pt) @ n) / d1
        out = out * (1.0 + _coefficient(geo.materials[f], f == edge.roof, cos_inc, frequency))
    return out


def _diffraction(geo, builder, tx, rx, frequency):
    lam = C0 / frequency
    k = 2 * np.pi / lam
    direct = np.linalg.norm(rx - tx, axis=1)
    n_rx = len(rx)
    for e_idx, edge in enumerate(geo.edges):
        a = np.asarray(edge.a, dtype=np.float64)
        b = np.asarray(edge.b, dtype=np.float64)
        ln = np.linalg.norm(b - a)
        e = (b - a) / ln
        ap = (tx - a) @ e
        rp = np.linalg.norm((tx - a) - ap * e)
        aq = (rx - a) @ e
        rq = np.linalg.norm((rx - a) - aq[:, None] * e, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(rp + rq > 0, (ap * rq + aq * rp) / (rp + rq), 0.0)
        d_pt = a + np.clip(s, 0.0, ln)[:, None] * e
        d1 = np.linalg.norm(d_pt - tx, axis=1)
        d2 = np.linalg.norm(rx - d_pt, axis=1)
        line = rx - tx
        t = np.einsum("ij,ij->i", d_pt - tx, line) / np.einsum("ij,ij->i", line, line)
        ok = (d1 > 1e-6) & (d2 > 1e-6) & (t > 0) & (t < 1)
        if _inside_wedge(geo, edge, e, tx[None, :])[0]:
            continue
        ok &= ~_inside_wedge(geo, edge, e, rx)
        idx = np.nonzero(ok)[0]
        if not len(idx):
            continue
        skip_a = edge.surfaces[0]
        skip_b = edge.roof if edge.roof >= 0 else (edge.surfaces[1] if len(edge.surfaces) > 1 else -1)
        clear = ~_occluded(geo, np.broadcast_to(tx, (len(idx), 3)), d_pt[idx], skip_a, skip_b)
        idx = idx[clear]
        clear = ~_occluded(geo, d_pt[idx], rx[idx], skip_a, skip_b)
        idx = idx[clear]
        if not len(idx):
            continue
        if edge.top:
            height = tx[2] + t[idx] * line[idx, 2]
            shadowed = d_pt[idx, 2] > height
        else:
            shadowed = np.zeros(len(idx), dtype=bool)
            for w in edge.surfaces:
                shadowed |= _segment_hits_surface(geo, np.broadcast_to(tx, (len(idx), 3)), rx[idx], w)
        excess = d1[idx] + d2[idx] - direct[idx]
        nu = fresnel_parameter(excess, lam, shadowed)
        coef = edge_coefficient(nu)
        coef = coef * _face_illumination(geo, edge, e, tx, d_pt[idx], d1[idx], frequency)
        mag = np.abs(coef)
        coef = np.where(mag > 1.0, coef / np.maximum(mag, 1e-300), coef)
        length = d1[idx] + d2[idx]
        amp = lam / (4 * np.pi * length) * coef * np.exp(-1j * k * length)
        builder.add(idx, length / C0, amp, d_pt[idx] - tx, np.full(len(idx), DIFFRACTION),
                    np.full(len(idx), e_idx))


def _pack(hits, base):
    key = np.zeros(hits.shape[0], dtype=np.int64)
    for j in range(hits.shape[1] - 1, -1, -1):
        key = key * base + (hits[:, j].astype(np.int64) + 1)
    return key


def _unpack(key, base):
    seq = []
    while key:
        seq.append(int(key % base) - 1)
        key //= base
    return tuple(seq)


def trace_many(scene, cfg: TraceConfig, rx_positions, geometry=None):
    """Trace one transmitter to many receivers; returns one :class:`PathList` per receiver."""
    geo = geometry or scene.geometry()
    tx = np.asarray(scene.tx, dtype=np.float64)
    rx = np.atleast_2d(np.asarray(rx_positions, dtype=np.float64))
    n_rx = len(rx)
    freq = scene.frequency
    lam = C0 / freq
    k = 2 * np.pi / lam
    o, u, v, n = geo.arrays()
    n_events = max(cfg.max_reflections, 1)
    builder = _Builder(n_rx, n_events)

    if cfg.enable_los:
        d = np.linalg.norm(rx - tx, axis=1)
        clear = np.nonzero(~_occluded(geo, np.broadcast_to(tx, rx.shape), rx))[0]
        builder.add(clear, d[clear] / C0, lam / (4 * np.pi * d[clear]) * np.exp(-1j * k * d[clear]),
                    rx[clear] - tx, np.zeros((len(clear), 0)), np.zeros((len(clear), 0)))

    n_surf = geo.count
    need_sbr = cfg.max_reflections > 0 and n_surf > 0
    n_scatter = min(cfg.scatter_rays, cfg.ray_count) if cfg.enable_scattering and n_surf > 0 else 0
    base = n_surf + 1
    if need_sbr and float(base) ** cfg.max_reflections >= 2.0 ** 62:
        raise ValidationError("too many surfaces or reflections to key reflection sequences")
    found = None  # (rx, key, ratio, ray)
    scatter_parts = []
    n_launch = cfg.ray_count if need_sbr else n_scatter
    bounces = cfg.max_reflections if need_sbr else 0
    radius = cfg.reception_radius if cfg.reception_radius is not None else -1.0
    for lo in range(0, n_launch, LAUNCH_BLOCK):
        hi = min(lo + LAUNCH_BLOCK, n_launch)
        dirs = ray_directions(hi, cfg.seed, start=lo)
        seg_p, seg_d, seg_len, seg_hit, seg_cum = kernels.launch(tx, dirs, o, u, v, n, bounces, cfg.max_distance)
        if need_sbr:
            ray, seg, m, ratio = kernels.detect(seg_p, seg_d, seg_len, seg_hit, seg_cum, rx,
                                                cfg.reception_angle, radius, 1)
            if len(ray):
                hits = seg_hit[ray].copy()
                hits[np.arange(hits.shape[1])[None, :] >= seg[:, None]] = -1
                cand = (m.astype(np.int64), _pack(hits, base), ratio, ray.astype(np.int64) + lo)
                if found is not None:
                    cand = tuple(np.concatenate([a, b]) for a, b in zip(found, cand))
                order = np.lexsort((cand[3], cand[2], cand[1], cand[0]))
                cand = tuple(c[order] for c in cand)
                first = np.ones(len(order), dtype=bool)
                first[1:] = (np.diff(cand[0]) != 0) | (np.diff(cand[1]) != 0)
                found = tuple(c[first] for c in cand)
        if lo < n_scatter:
            ns = min(hi, n_scatter) - lo
            scatter_parts.append((lo, seg_p[:ns, 0], seg_d[:ns, 0], seg_len[:ns, 0], seg_hit[:ns, 0]))

    if found is not None:
        m_all, key_all, _, ray_all = found
        for key in np.unique(key_all):
            sel = np.nonzero(key_all == key)[0]
            seq = _unpack(int(key), base)
            valid, length, gain, first = specular_paths(geo, seq, tx, rx[m_all[sel]], freq)
            sel, length, gain, first = sel[valid], length[valid], gain[valid], first[valid]
            amp = lam / (4 * np.pi * length) * gain * np.exp(-1j * k * length)
            builder.add(m_all[sel], length / C0, amp, first - tx,
                        np.full((len(sel), len(seq)), REFLECTION), np.tile(seq, (len(sel), 1)), ray_all[sel])

    if cfg.enable_diffraction and geo.edges:
        _diffraction(geo, builder, tx, rx, freq)

    if n_scatter:
        d_omega = 4 * np.pi / n_scatter
        for lo, p0, d0, l0, h0 in scatter_parts:
            hit_idx = np.nonzero(h0 >= 0)[0]
            s_coef = np.array([geo.materials[s].scattering for s in h0[hit_idx]])
            hit_idx = hit_idx[s_coef > 0]
            if not len(hit_idx):
                continue
            q = p0[hit_idx] + l0[hit_idx, None] * d0[hit_idx]
            surf = h0[hit_idx]
            hh, mm = kernels.scatter_visible(q, surf, tx, rx, o, u, v, n)
            if not len(hh):
                continue
            s_hit = surf[hh]
            to_rx = rx[mm] - q[hh]
            d2 = np.linalg.norm(to_rx, axis=1)
            d1 = l0[hit_idx[hh]]
            nrm = n[s_hit]
            cos_s = np.abs(np.einsum("ij,ij->i", to_rx, nrm)) / d2
            cos_i = np.abs(np.einsum("ij,ij->i", d0[hit_idx[hh]], nrm))
            gamma = np.empty(len(hh))
            scat = np.empty(len(hh))
            for s in np.unique(s_hit):
                sel = s_hit == s
                mat = geo.materials[s]
                gamma[sel] = np.abs(_coefficient(mat, geo.horizontal[s], cos_i[sel], freq))
                scat[sel] = mat.scattering
            mag = lam / (4 * np.pi * d2) * gamma * scat * np.sqrt(d_omega * cos_s / np.pi)
            mag = np.minimum(mag, lam / (4 * np.pi * (d1 + d2)))
            length = d1 + d2
            builder.add(mm, length / C0, mag * np.exp(-1j * k * length), d0[hit_idx[hh]],
                        np.full(len(hh), SCATTER), s_hit, hit_idx[hh] + lo)

    return builder.build()


def trace(scene, cfg: TraceConfig, geometry=None):
    """Trace the scene's own transmitter/receiver pair."""
    return trace_many(scene, cfg, [scene.rx], geometry)[0]

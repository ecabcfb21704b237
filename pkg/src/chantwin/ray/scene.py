"""2.5D scenes: vertical walls and horizontal roofs over an optional flat ground.

Scene file format (``#`` starts a comment)::

    ctw-scene 1
    freq <hz>
    ground <material>
    tx <x> <y> <z> [array_azimuth_deg]
    rx <x> <y> <z>
    material <name> <a> <b> <c> <d> <scattering> [pec]
    wall <id> <x1> <y1> <x2> <y2> <height> <material> [role]
    roof <id> <x1> <y1> <x2> <y2> <height> <material> [role]
    route <x1> <y1> <x2> <y2>

Walls stand on the ground (z = 0) along the footprint segment. Roofs are
axis-aligned rectangles at the given height. ``material`` records override
the registry. Roles drive :func:`material_choice`: ``wall``, ``roof``,
``ground_or_road``, ``clutter``; ``-`` means untagged. ``route`` records
are street segments used to place receivers.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ParseError, ValidationError
from .materials import load_materials, parse_material

SCENE_HEADER = "ctw-scene 1"
DEFAULT_FREQUENCY = 751e6
ROLES = ("wall", "roof", "ground_or_road", "clutter", "-")
GROUND_HALF_WIDTH = 1e5

# ground/roads, building walls, building roofs
MATERIAL_CHOICES = {
    "MC1": ("itu_concrete", "itu_marble", "itu_metal"),
    "MC2": ("itu_concrete", "itu_marble", "itu_wood"),
    "MC3": ("itu_concrete", "itu_brick", "itu_wood"),
}


@dataclass(frozen=True)
class Surface:
    id: str
    kind: str  # "wall" or "roof"
    x1: float
    y1: float
    x2: float
    y2: float
    height: float
    material: str
    role: str = "-"

    def check(self):
        if self.kind not in ("wall", "roof"):
            raise ValidationError(f"{self.id}: unknown surface kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValidationError(f"{self.id}: unknown role {self.role!r}")
        vals = (self.x1, self.y1, self.x2, self.y2, self.height)
        if not all(np.isfinite(vals)):
            raise ValidationError(f"{self.id}: non-finite coordinate")
        if self.kind == "wall":
            if np.hypot(self.x2 - self.x1, self.y2 - self.y1) <= 1e-9 or self.height <= 0:
                raise ValidationError(f"degenerate wall {self.id!r}")
        elif abs(self.x2 - self.x1) <= 1e-9 or abs(self.y2 - self.y1) <= 1e-9 or self.height <= 0:
            raise ValidationError(f"degenerate roof {self.id!r}")

    def to_line(self):
        nums = " ".join(repr(float(v)) for v in (self.x1, self.y1, self.x2, self.y2, self.height))
        return f"{self.kind} {self.id} {nums} {self.material} {self.role}"


@dataclass
class Scene:
    surfaces: list
    tx: tuple
    rx: tuple
    ground: str = None
    frequency: float = DEFAULT_FREQUENCY
    tx_azimuth: float = 0.0  # degrees, orientation of the transmit array axis
    materials: dict = field(default_factory=dict)
    routes: list = field(default_factory=list)

    def __post_init__(self):
        self.tx = tuple(float(v) for v in self.tx)
        self.rx = tuple(float(v) for v in self.rx)
        self.surfaces = list(self.surfaces)
        self.routes = [tuple(float(v) for v in r) for r in self.routes]
        self.validate()

    @property
    def walls(self):
        return [s for s in self.surfaces if s.kind == "wall"]

    @property
    def roofs(self):
        return [s for s in self.surfaces if s.kind == "roof"]

    @property
    def wavelength(self):
        return 299_792_458.0 / self.frequency

    def validate(self):
        if len(self.tx) != 3 or len(self.rx) != 3:
            raise ValidationError("tx and rx need three coordinates")
        if np.allclose(self.tx, self.rx, rtol=0, atol=1e-9):
            raise ValidationError("tx and rx coincide")
        if not self.frequency > 0:
            raise ValidationError("carrier frequency must be positive")
        seen = set()
        for s in self.surfaces:
            if s.id in seen:
                raise ValidationError(f"duplicate surface id {s.id!r}")
            seen.add(s.id)
            s.check()
            if s.material not in self.materials:
                raise ValidationError(f"{s.id}: unknown material {s.material!r}")
        if self.ground is not None and self.ground not in self.materials:
            raise ValidationError(f"ground: unknown material {self.ground!r}")
        for name in self.used_materials():
            self.materials[name].permittivity(self.frequency)

    def used_materials(self):
        names = {s.material for s in self.surfaces}
        if self.ground is not None:
            names.add(self.ground)
        return sorted(names)

    def with_rx(self, rx):
        return replace(self, rx=tuple(rx), materials=dict(self.materials),
                       surfaces=list(self.surfaces), routes=list(self.routes))

    def __eq__(self, other):
        return isinstance(other, Scene) and dumps_scene(self) == dumps_scene(other)

    def geometry(self):
        return SceneGeometry.from_scene(self)

    def route_points(self, count, height=1.5):
        """``count`` receiver positions evenly spaced along the concatenated routes."""
        if not self.routes:
            raise ValidationError("scene has no routes")
        segs = np.asarray(self.routes, dtype=np.float64)
        lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
        total = lengths.sum()
        s = (np.arange(count) + 0.5) * total / count
        edges = np.concatenate([[0.0], np.cumsum(lengths)])
        idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(segs) - 1)
        frac = (s - edges[idx]) / lengths[idx]
        x = segs[idx, 0] + frac * (segs[idx, 2] - segs[idx, 0])
        y = segs[idx, 1] + frac * (segs[idx, 3] - segs[idx, 1])
        return np.column_stack([x, y, np.full(count, float(height))])


# --------------------------------------------------------------------------
# text format


def _floats(fields, n, line):
    if len(fields) != n:
        raise ParseError(f"expected {n} numbers, got {len(fields)}", line)
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite number", line)
    return vals


def loads_scene(text, materials=None):
    """Parse scene text. ``materials`` defaults to :func:`load_materials`."""
    registry = dict(load_materials() if materials is None else materials)
    surfaces, routes = [], []
    tx = rx = ground = None
    azimuth, freq = 0.0, DEFAULT_FREQUENCY
    header_seen = False
    ids = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line != SCENE_HEADER:
                raise ParseError(f"expected header {SCENE_HEADER!r}", i)
            header_seen = True
            continue
        key, *rest = line.split()
        if key == "freq":
            (freq,) = _floats(rest, 1, i)
        elif key == "ground":
            if len(rest) != 1:
                raise ParseError("expected 'ground <material>'", i)
            ground = rest[0]
        elif key == "tx":
            vals = _floats(rest, len(rest) if len(rest) in (3, 4) else 3, i)
            tx, azimuth = vals[:3], (vals[3] if len(vals) == 4 else 0.0)
        elif key == "rx":
            rx = _floats(rest, 3, i)
        elif key == "material":
            mat = parse_material(rest, i)
            registry[mat.name] = mat
        elif key in ("wall", "roof"):
            if len(rest) not in (7, 8):
                raise ParseError(f"expected '{key} id x1 y1 x2 y2 height material [role]'", i)
            sid = rest[0]
            if sid in ids:
                raise ParseError(f"duplicate surface id {sid!r} (first on line {ids[sid]})", i)
            ids[sid] = i
            x1, y1, x2, y2, h = _floats(rest[1:6], 5, i)
            role = rest[7] if len(rest) == 8 else "-"
            surf = Surface(sid, key, x1, y1, x2, y2, h, rest[6], role)
            try:
                surf.check()
            except ValidationError as exc:
                raise ParseError(str(exc), i) from None
            if surf.material not in registry:
                raise ParseError(f"{sid}: unknown material {surf.material!r}", i)
            surfaces.append(surf)
        elif key == "route":
            routes.append(_floats(rest, 4, i))
        else:
            raise ParseError(f"unknown record {key!r}", i)
    if not header_seen:
        raise ParseError("empty scene file")
    if tx is None or rx is None:
        raise ParseError("scene needs both a tx and an rx record")
    if ground is not None and ground not in registry:
        raise ParseError(f"ground: unknown material {ground!r}")
    used = {s.material for s in surfaces} | ({ground} if ground else set())
    mats = {name: registry[name] for name in used}
    return Scene(surfaces, tx, rx, ground, freq, azimuth, mats, routes)


def load_scene(path, materials=None):
    with open(path) as fh:
        return loads_scene(fh.read(), materials)


def dumps_scene(scene):
    """Canonical text: fixed record order, shortest round-trip floats."""
    r = repr
    out = [SCENE_HEADER, f"freq {r(float(scene.frequency))}"]
    if scene.ground is not None:
        out.append(f"ground {scene.ground}")
    out.append("tx " + " ".join(r(v) for v in scene.tx) + f" {r(float(scene.tx_azimuth))}")
    out.append("rx " + " ".join(r(v) for v in scene.rx))
    for name in scene.used_materials():
        out.append("material " + scene.materials[name].to_line())
    out.extend(s.to_line() for s in scene.surfaces)
    out.extend("route " + " ".join(r(v) for v in seg) for seg in scene.routes)
    return "\n".join(out) + "\n"


def save_scene(scene, path):
    with open(path, "w") as fh:
        fh.write(dumps_scene(scene))


# --------------------------------------------------------------------------
# geometry arrays for the tracer


@dataclass
class SceneGeometry:
    """Flat arrays describing every planar rectangle ``o + a u + b v``, 0 <= a, b <= 1.

    The ground, if present, is the last surface.
    """

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    normal: np.ndarray
    horizontal: np.ndarray  # bool per surface
    materials: list  # Material per surface
    ids: list
    edges: list  # Edge per diffracting edge

    @property
    def count(self):
        return len(self.ids)

    def arrays(self):
        return self.origin, self.u, self.v, self.normal

    @classmethod
    def from_scene(cls, scene):
        o, u, v, n, hz, mats, ids = [], [], [], [], [], [], []
        for s in scene.surfaces:
            if s.kind == "wall":
                o.append((s.x1, s.y1, 0.0))
                u.append((s.x2 - s.x1, s.y2 - s.y1, 0.0))
                v.append((0.0, 0.0, s.height))
                ln = np.hypot(s.x2 - s.x1, s.y2 - s.y1)
                n.append(((s.y2 - s.y1) / ln, -(s.x2 - s.x1) / ln, 0.0))
                hz.append(False)
            else:
                x1, x2 = sorted((s.x1, s.x2))
                y1, y2 = sorted((s.y1, s.y2))
                o.append((x1, y1, s.height))
                u.append((x2 - x1, 0.0, 0.0))
                v.append((0.0, y2 - y1, 0.0))
                n.append((0.0, 0.0, 1.0))
                hz.append(True)
            mats.append(scene.materials[s.material])
            ids.append(s.id)
        if scene.ground is not None:
            g = GROUND_HALF_WIDTH
            o.append((-g, -g, 0.0))
            u.append((2 * g, 0.0, 0.0))
            v.append((0.0, 2 * g, 0.0))
            n.append((0.0, 0.0, 1.0))
            hz.append(True)
            mats.append(scene.materials[scene.ground])
            ids.append("ground")
        f = lambda a: np.asarray(a, dtype=np.float64).reshape(-1, 3)
        geo = cls(f(o), f(u), f(v), f(n), np.asarray(hz, dtype=bool), mats, ids, [])
        geo.edges = _find_edges(scene, geo)
        return geo


@dataclass(frozen=True)
class Edge:
    """A straight diffracting edge from ``a`` to ``b``.

    ``surfaces`` are the (one or two) wall indices meeting at the edge.
    ``roof`` is the index of the roof bounded by a top edge, or -1.
    """

    a: tuple
    b: tuple
    top: bool
    surfaces: tuple
    roof: int = -1


def _find_edges(scene, geo, tol=0.5):
    top, side = {}, {}
    roofs = [(i, s) for i, s in enumerate(scene.surfaces) if s.kind == "roof"]
    for i, s in enumerate(scene.surfaces):
        if s.kind != "wall":
            continue
        h = s.height
        key = tuple(sorted([(round(s.x1, 6), round(s.y1, 6)), (round(s.x2, 6), round(s.y2, 6))])) + (round(h, 6),)
        top.setdefault(key, [(s.x1, s.y1, h), (s.x2, s.y2, h), []])[2].append(i)
        for x, y in ((s.x1, s.y1), (s.x2, s.y2)):
            k = (round(x, 6), round(y, 6), round(h, 6))
            side.setdefault(k, [(x, y, 0.0), (x, y, h), []])[2].append(i)
    edges = []
    for a, b, walls in top.values():
        mid = 0.5 * (np.asarray(a) + np.asarray(b))
        roof = -1
        for j, r in roofs:
            if abs(r.height - a[2]) > 1e-6:
                continue
            x1, x2 = sorted((r.x1, r.x2))
            y1, y2 = sorted((r.y1, r.y2))
            inside = x1 - tol <= mid[0] <= x2 + tol and y1 - tol <= mid[1] <= y2 + tol
            near = min(abs(mid[0] - x1), abs(mid[0] - x2), abs(mid[1] - y1), abs(mid[1] - y2)) <= tol
            if inside and near:
                roof = j
                break
        edges.append(Edge(a, b, True, tuple(walls[:2]), roof))
    for a, b, walls in side.values():
        edges.append(Edge(a, b, False, tuple(walls[:2]), -1))
    return edges


# --------------------------------------------------------------------------
# scene transforms


def box_surfaces(prefix, x1, y1, x2, y2, height, wall_material, roof_material,
                 wall_role="wall", roof_role="roof"):
    """Four walls (counter-clockwise, outward normals) and a roof for an axis-aligned box."""
    x1, x2 = sorted((x1, x2))
    y1, y2 = sorted((y1, y2))
    corners = [(x1, y1), (x2, y1), (x2, y2), (x1, y2)]
    out = []
    for k in range(4):
        (ax, ay), (bx, by) = corners[k], corners[(k + 1) % 4]
        out.append(Surface(f"{prefix}_w{k}", "wall", ax, ay, bx, by, height, wall_material, wall_role))
    out.append(Surface(f"{prefix}_roof", "roof", x1, y1, x2, y2, height, roof_material, roof_role))
    return out


FACES_PER_BOX = 5


@dataclass(frozen=True)
class PerturbationConfig:
    clutter_count: int = 0
    clutter_size_range: tuple = (2.0, 6.0)
    material_jitter: float = 0.0
    geometry_jitter: float = 0.0
    seed: int = 0
    clutter_materials: tuple = ("itu_metal", "itu_concrete", "itu_wood")

    def __post_init__(self):
        if self.clutter_count < 0 or self.material_jitter < 0 or self.geometry_jitter < 0:
            raise ValidationError("perturbation sizes must be non-negative")
        lo, hi = self.clutter_size_range
        if not 0 < lo <= hi:
            raise ValidationError("clutter_size_range must satisfy 0 < lo <= hi")
        if self.material_jitter >= 1:
            raise ValidationError("material_jitter must be below 1")


CLUTTER_ATTEMPTS = 200
CLUTTER_CLEARANCE = 1.0  # meters kept free around routes, buildings and the transmitter


def _footprint(s):
    return (min(s.x1, s.x2), min(s.y1, s.y2), max(s.x1, s.x2), max(s.y1, s.y2))


def _segment_hits_box(seg, box):
    """Liang-Barsky test: does the 2D segment touch the axis-aligned box?"""
    x1, y1, x2, y2 = seg
    dx, dy = x2 - x1, y2 - y1
    t0, t1 = 0.0, 1.0
    for p_, q_ in ((-dx, x1 - box[0]), (dx, box[2] - x1), (-dy, y1 - box[1]), (dy, box[3] - y1)):
        if p_ == 0.0:
            if q_ < 0.0:
                return False
            continue
        r = q_ / p_
        if p_ < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


def _box_is_clear(box, segs, taken, tx):
    m = CLUTTER_CLEARANCE
    grown = (box[0] - m, box[1] - m, box[2] + m, box[3] + m)
    if any(_segment_hits_box(seg, grown) for seg in segs):
        return False
    if grown[0] <= tx[0] <= grown[2] and grown[1] <= tx[1] <= grown[3]:
        return False
    return not any(grown[0] < b[2] and b[0] < grown[2] and grown[1] < b[3] and b[1] < grown[3] for b in taken)


def perturb_scene(scene, p: PerturbationConfig, materials=None):
    """A "real world" variant of ``scene``: jittered materials and corners plus clutter boxes.

    Deterministic in ``p.seed``. The transmitter, receiver, carrier, ground
    and routes are unchanged. Clutter boxes stand beside the routes and keep
    clear of routes, buildings, other clutter and the transmitter.
    """
    rng = np.random.default_rng(p.seed)
    mats = dict(scene.materials)
    if p.material_jitter > 0:
        for name in sorted(mats):
            fe, fs = 1.0 + p.material_jitter * rng.uniform(-1.0, 1.0, size=2)
            m = mats[name]
            if m.pec:
                continue
            # keep eps_r >= 1 at the carrier
            fe = max(float(fe), 1.0 / m.permittivity(scene.frequency))
            mats[name] = m.scaled(fe, float(fs))

    surfaces = list(scene.surfaces)
    if p.geometry_jitter > 0:
        verts = sorted({(s.x1, s.y1) for s in surfaces} | {(s.x2, s.y2) for s in surfaces})
        offs = rng.uniform(-p.geometry_jitter, p.geometry_jitter, size=(len(verts), 2))
        shift = {vtx: off for vtx, off in zip(verts, offs)}
        moved = []
        for s in surfaces:
            (dx1, dy1), (dx2, dy2) = shift[(s.x1, s.y1)], shift[(s.x2, s.y2)]
            moved.append(replace(s, x1=s.x1 + dx1, y1=s.y1 + dy1, x2=s.x2 + dx2, y2=s.y2 + dy2))
        surfaces = moved

    if p.clutter_count:
        registry = load_materials() if materials is None else materials
        for name in p.clutter_materials:
            if name not in mats:
                mats[name] = registry[name]
        lo, hi = p.clutter_size_range
        segs = np.asarray(scene.routes, dtype=np.float64).reshape(-1, 4)
        lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]) if len(segs) else None
        taken = [_footprint(s) for s in surfaces if s.kind == "roof"]
        for k in range(p.clutter_count):
            for _ in range(CLUTTER_ATTEMPTS):
                w, l, h = rng.uniform(lo, hi, size=3)
                if lengths is not None:
                    j = rng.choice(len(segs), p=lengths / lengths.sum())
                    t = rng.uniform()
                    x1, y1, x2, y2 = segs[j]
                    d = np.array([x2 - x1, y2 - y1]) / lengths[j]
                    side = 1.0 if rng.uniform() < 0.5 else -1.0
                    lateral = side * (3.0 + 0.5 * max(w, l) + rng.uniform(0.0, 4.0))
                    cx = x1 + t * (x2 - x1) - lateral * d[1]
                    cy = y1 + t * (y2 - y1) + lateral * d[0]
                else:
                    cx, cy = rng.uniform(-50.0, 50.0, size=2)
                mat = p.clutter_materials[int(rng.integers(len(p.clutter_materials)))]
                box = (cx - w / 2, cy - l / 2, cx + w / 2, cy + l / 2)
                if _box_is_clear(box, segs, taken, scene.tx):
                    break
            else:
                raise ValidationError(f"no free spot for clutter box {k} after {CLUTTER_ATTEMPTS} attempts")
            taken.append(box)
            surfaces.extend(box_surfaces(f"clutter{k}", *box, h, mat, mat, "clutter", "clutter"))
    return Scene(surfaces, scene.tx, scene.rx, scene.ground, scene.frequency, scene.tx_azimuth,
                 mats, list(scene.routes))


def material_choice(scene, choice, materials=None):
    """Reassign ground/road, wall and roof materials per the named choice.

    Clutter keeps its material. Any untagged surface is an error.
    """
    if choice not in MATERIAL_CHOICES:
        raise ValidationError(f"unknown material choice {choice!r}")
    ground_m, wall_m, roof_m = MATERIAL_CHOICES[choice]
    registry = load_materials() if materials is None else materials
    by_role = {"ground_or_road": ground_m, "wall": wall_m, "roof": roof_m}
    out = []
    for s in scene.surfaces:
        if s.role == "-":
            raise ValidationError(f"surface {s.id!r} has no role tag")
        out.append(replace(s, material=by_role[s.role]) if s.role in by_role else s)
    mats = {k: v for k, v in scene.materials.items()}
    for name in (ground_m, wall_m, roof_m):
        mats[name] = registry[name]
    ground = ground_m if scene.ground is not None else None
    used = {s.material for s in out} | ({ground} if ground else set())
    return Scene(out, scene.tx, scene.rx, ground, scene.frequency, scene.tx_azimuth,
                 {k: v for k, v in mats.items() if k in used}, list(scene.routes))


def demo_scene_path():
    from importlib import resources
    return str(resources.files("chantwin.ray").joinpath("data/demo_scene.txt"))


def load_demo_scene(materials=None):
    """The bundled ten-building street block (an invented layout)."""
    return load_scene(demo_scene_path(), materials)

"""Chamber model from mapping sites, activation times and 2-D fusion."""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .camera import ProjectionMatrix, Variant
from .errors import DegenerateInput, InvalidConfig, NoDeflection, ShapeMismatch

HULL_EPS = 1e-9


# --- convex hull -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HullModel:
    """``faces`` index into ``points`` and are wound counter-clockwise seen
    from outside."""

    points: np.ndarray
    vertex_indices: np.ndarray
    faces: np.ndarray

    @property
    def vertices(self) -> np.ndarray:
        return self.points[self.vertex_indices]

    def plane(self, f: int):
        a, b, c = self.points[self.faces[f]]
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        return n, float(n @ a)

    def signed_distances(self, X) -> np.ndarray:
        """``(n_points, n_faces)`` distances, positive outside."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = self.points[self.faces[:, 0]]
        n = np.cross(self.points[self.faces[:, 1]] - a, self.points[self.faces[:, 2]] - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return X @ n.T - np.sum(n * a, axis=1)


def _initial_simplex(P, eps):
    i0 = 0
    d = np.linalg.norm(P - P[i0], axis=1)
    i1 = int(np.argmax(d))
    if d[i1] <= eps:
        raise DegenerateInput("all points coincide")
    u = (P[i1] - P[i0]) / d[i1]
    rel = P - P[i0]
    perp = rel - np.outer(rel @ u, u)
    dl = np.linalg.norm(perp, axis=1)
    i2 = int(np.argmax(dl))
    if dl[i2] <= eps:
        raise DegenerateInput("points are collinear")
    n = np.cross(P[i1] - P[i0], P[i2] - P[i0])
    n /= np.linalg.norm(n)
    dp = rel @ n
    i3 = int(np.argmax(np.abs(dp)))
    if abs(dp[i3]) <= eps:
        raise DegenerateInput("points are coplanar")
    return i0, i1, i2, i3


def convex_hull3(points, eps: float = HULL_EPS) -> HullModel:
    """Incremental convex hull.

    Points within ``eps`` of the current hull are treated as inside, so
    they never become vertices.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ShapeMismatch("points must have shape (n, 3)")
    if P.shape[0] < 4 or not np.all(np.isfinite(P)):
        raise DegenerateInput("need at least four finite points")
    simplex = _initial_simplex(P, eps)
    inner = P[list(simplex)].mean(axis=0)

    faces: dict[int, tuple[int, int, int]] = {}
    planes: dict[int, tuple[np.ndarray, float]] = {}
    next_id = 0

    def add_face(a, b, c):
        nonlocal next_id
        n = np.cross(P[b] - P[a], P[c] - P[a])
        n /= np.linalg.norm(n)
        off = float(n @ P[a])
        if n @ inner - off > 0:
            b, c = c, b
            n, off = -n, -off
        faces[next_id] = (a, b, c)
        planes[next_id] = (n, off)
        next_id += 1

    i0, i1, i2, i3 = simplex
    for tri in ((i0, i1, i2), (i0, i1, i3), (i0, i2, i3), (i1, i2, i3)):
        add_face(*tri)

    for p in range(P.shape[0]):
        if p in simplex:
            continue
        x = P[p]
        visible = [fid for fid, (n, off) in planes.items() if n @ x - off > eps]
        if not visible:
            continue
        vis = set(visible)
        # directed edges of visible faces; a horizon edge has no visible twin
        edges = {}
        for fid in visible:
            a, b, c = faces[fid]
            for e in ((a, b), (b, c), (c, a)):
                edges[e] = fid
        horizon = [e for e in edges if (e[1], e[0]) not in edges]
        for fid in vis:
            del faces[fid]
            del planes[fid]
        for a, b in horizon:
            add_face(a, b, p)

    tri = np.array([faces[k] for k in sorted(faces)], dtype=np.int64)
    verts = np.unique(tri)
    return HullModel(P.copy(), verts, tri)


def hull_edges(hull: HullModel) -> list[tuple[int, int]]:
    out = set()
    for a, b, c in hull.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            out.add((min(u, v), max(u, v)))
    return sorted(out)


# --- activation times --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Electrogram:
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        s = np.array(self.samples, dtype=float).ravel()
        if not self.fs > 0:
            raise InvalidConfig("sampling rate must be positive")
        if s.size < 3:
            raise InvalidConfig("an electrogram needs at least three samples")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "fs", float(self.fs))


def steepest_downstroke(eg: Electrogram) -> int:
    """Sample index of the most negative dV/dt (central differences)."""
    d = np.gradient(eg.samples)
    i = int(np.argmin(d))
    if i == 0 or i == d.size - 1:
        raise NoDeflection("steepest negative deflection lies on the signal boundary")
    return i


def detect_lat(ref: Electrogram, sig: Electrogram) -> float:
    """Activation time of ``sig`` relative to ``ref`` in milliseconds."""
    if ref.fs != sig.fs:
        raise InvalidConfig(f"sampling rates differ ({ref.fs} vs {sig.fs})")
    return (steepest_downstroke(sig) - steepest_downstroke(ref)) * 1000.0 / ref.fs


@dataclass(frozen=True)
class ActivationSample:
    site_id: str
    position: tuple[float, float, float]
    lat_ms: float


@dataclass(frozen=True, eq=False)
class ActivationMap:
    hull: HullModel
    vertex_lat: np.ndarray  # aligned with hull.vertex_indices
    site_ids: tuple[str, ...]
    site_to_vertex: dict[str, str]

    def lat_of_point(self, idx: int) -> float:
        pos = np.flatnonzero(self.hull.vertex_indices == idx)
        if pos.size == 0:
            raise KeyError(idx)
        return float(self.vertex_lat[pos[0]])


def build_activation_map(samples) -> ActivationMap:
    samples = list(samples)
    ids = tuple(str(s.site_id) for s in samples)
    if len(set(ids)) != len(ids):
        raise InvalidConfig("site ids must be unique")
    pos = np.array([s.position for s in samples], dtype=float).reshape(-1, 3)
    lat = np.array([s.lat_ms for s in samples], dtype=float)
    if not np.all(np.isfinite(pos)):
        raise InvalidConfig("site positions must be finite")
    hull = convex_hull3(pos)
    vidx = hull.vertex_indices
    table = {}
    for i, sid in enumerate(ids):
        if i in set(vidx.tolist()):
            table[sid] = sid
        else:
            d = np.linalg.norm(pos[vidx] - pos[i], axis=1)
            table[sid] = ids[int(vidx[int(np.argmin(d))])]
    return ActivationMap(hull, lat[vidx], ids, table)


# --- 2-D fusion --------------------------------------------------------------

PALETTES = ("bluered", "rainbow")
LEGEND_WIDTH = 16
LEGEND_GAP = 4
MARKER_RADIUS = 3
EDGE_COLOR = (255, 255, 255)


def palette_table(name: str = "bluered") -> np.ndarray:
    """``(256, 3)`` uint8 colours, earliest first."""
    t = np.linspace(0.0, 1.0, 256)
    if name == "bluered":
        rgb = np.column_stack([t, np.zeros_like(t), 1.0 - t])
    elif name == "rainbow":
        rgb = np.array([colorsys.hsv_to_rgb((2.0 / 3.0) * (1.0 - x), 1.0, 1.0) for x in t])
    else:
        raise InvalidConfig(f"unknown palette {name!r}; choose from {PALETTES}")
    return np.rint(rgb * 255.0).astype(np.uint8)


def lat_colors(lats, palette: str = "bluered") -> np.ndarray:
    lats = np.asarray(lats, dtype=float)
    table = palette_table(palette)
    lo, hi = float(np.min(lats)), float(np.max(lats))
    if hi - lo <= 0:
        return np.repeat(table[:1], lats.size, axis=0)
    idx = np.rint((lats - lo) / (hi - lo) * 255.0).astype(int)
    return table[idx]


@dataclass
class Overlay:
    rgb: np.ndarray
    vertex_px: np.ndarray
    out_of_frame: list[int]


def _draw_line(rgb, p, q, color):
    h, w = rgb.shape[:2]
    n = int(np.ceil(max(abs(q[0] - p[0]), abs(q[1] - p[1])))) + 1
    for s in np.linspace(0.0, 1.0, n):
        u = int(np.rint(p[0] + s * (q[0] - p[0])))
        v = int(np.rint(p[1] + s * (q[1] - p[1])))
        if 0 <= u < w and 0 <= v < h:
            rgb[v, u] = color


def _draw_disk(rgb, c, r, color):
    h, w = rgb.shape[:2]
    cu, cv = int(np.rint(c[0])), int(np.rint(c[1]))
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            if du * du + dv * dv <= r * r:
                u, v = cu + du, cv + dv
                if 0 <= u < w and 0 <= v < h:
                    rgb[v, u] = color


def render_overlay(img, P: ProjectionMatrix, points, lats, edges=(), palette: str = "bluered") -> Overlay:
    """Colour-coded markers (and optional edges) over a grey frame, with a
    legend strip on the right running from latest (top) to earliest."""
    if P.variant is not Variant.FULL:
        raise InvalidConfig("fusion needs a full perspective projection")
    gray = np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    if gray.ndim != 2:
        raise ShapeMismatch("background image must be 2-D")
    h, w = gray.shape
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    colors = lat_colors(lats, palette)
    hom = pts @ P.M[:, :3].T + P.M[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = hom[:, :2] / hom[:, 2:3]
    bad = [i for i, (u, v) in enumerate(uv) if not (hom[i, 2] > 0 and -0.5 <= u < w - 0.5 and -0.5 <= v < h - 0.5)]

    canvas = np.repeat(gray[:, :, None], 3, axis=2)
    for a, b in edges:
        if np.all(np.isfinite(uv[[a, b]])):
            _draw_line(canvas, uv[a], uv[b], EDGE_COLOR)
    for i in range(pts.shape[0]):
        if np.all(np.isfinite(uv[i])):
            _draw_disk(canvas, uv[i], MARKER_RADIUS, colors[i])

    table = palette_table(palette)
    rows = np.rint(np.linspace(255, 0, h)).astype(int)
    legend = np.zeros((h, LEGEND_GAP + LEGEND_WIDTH, 3), dtype=np.uint8)
    legend[:, LEGEND_GAP:] = table[rows][:, None, :]
    return Overlay(np.concatenate([canvas, legend], axis=1), uv, bad)


def fuse_overlay(amap: ActivationMap, P: ProjectionMatrix, img, palette: str = "bluered") -> Overlay:
    """Project the hull and its vertex activation times onto one frame.

    Vertices falling outside the frame are listed in ``out_of_frame``
    (indices into ``amap.hull.vertex_indices``) and clipped while drawing.
    """
    hull = amap.hull
    local = {int(g): i for i, g in enumerate(hull.vertex_indices)}
    edges = [(local[a], local[b]) for a, b in hull_edges(hull)]
    return render_overlay(img, P, hull.vertices, amap.vertex_lat, edges, palette)


# --- synthetic phantom -------------------------------------------------------

def synthetic_electrogram(n_samples: int, fs: float, onset_idx: int, amplitude_mv: float = 1.0,
                          width_samples: float = 3.0) -> Electrogram:
    """Smooth baseline with one sharp downstroke centred on ``onset_idx``.

    The downstroke is a tanh step, symmetric about the onset, so the
    central-difference derivative has its minimum exactly there.
    """
    i = np.arange(n_samples, dtype=float)
    x = (i - onset_idx) / width_samples
    v = -amplitude_mv * np.tanh(x) + 0.2 * amplitude_mv * np.exp(-x * x / 50.0)
    return Electrogram(v, fs)


@dataclass(frozen=True)
class SitePhantom:
    positions: np.ndarray
    lat_ms: np.ndarray
    pacing_index: int


def make_site_phantom(n_sites: int = 20, seed: int = 0, semi_axes_mm=(30.0, 25.0, 20.0),
                      ms_per_mm: float = 1.2, offset_ms: float = 10.0, fs: float = 1000.0) -> SitePhantom:
    """Sites on an ellipsoid around the isocentre; activation spreads from
    site 0 at constant speed, quantised to the sampling interval."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_sites, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pos = d * np.asarray(semi_axes_mm, dtype=float)
    dist = np.linalg.norm(pos - pos[0], axis=1)
    step = 1000.0 / fs
    lat = np.rint((offset_ms + ms_per_mm * dist) / step) * step
    return SitePhantom(pos, lat, 0)

"""Synthetic catheter experiment: a helix under repeated rigid motion, seen
by two C-arm gantries, plus rendered fluoroscopy-like frames."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import GantryConfig, default_gantry, full_projection, project
from .errors import InvalidConfig, OutOfFrame, ShapeMismatch

NOISE_SCOPES = ("apriori", "all")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class HelixSpec:
    n_points: int = 30
    radius_mm: float = 5.0
    pitch_mm: float = 10.0
    turns: float = 1.5
    center_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # 30 degrees off the world Z axis, tilted towards +Y
    axis: tuple[float, float, float] = (0.0, 0.5, float(np.sqrt(3.0) / 2.0))

    def __post_init__(self):
        if self.n_points < 2:
            raise InvalidConfig("a helix needs at least two points")
        if not self.radius_mm > 0:
            raise InvalidConfig("helix radius must be positive")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise InvalidConfig("helix axis must be a unit vector")

    @classmethod
    def tilted(cls, tilt_deg: float = 30.0, **kw) -> "HelixSpec":
        a = np.deg2rad(tilt_deg)
        axis = _unit([0.0, np.sin(a), np.cos(a)])
        return cls(axis=tuple(float(x) for x in axis), **kw)


@dataclass(frozen=True)
class RigidMotion:
    theta_deg: float = 0.5
    phi_deg: float = 0.5
    psi_deg: float = 0.5
    T_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def rotation(self) -> np.ndarray:
        return euler_rotation(self.theta_deg, self.phi_deg, self.psi_deg)


def _active(axis: str, deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_rotation(theta_deg: float, phi_deg: float, psi_deg: float) -> np.ndarray:
    """``Rz(psi) @ Ry(phi) @ Rx(theta)``, active rotations."""
    return _active("z", psi_deg) @ _active("y", phi_deg) @ _active("x", theta_deg)


def make_helix(spec: HelixSpec = HelixSpec()) -> np.ndarray:
    s = np.linspace(0.0, 1.0, spec.n_points)
    ang = 2.0 * np.pi * spec.turns * s
    local = np.column_stack([
        spec.radius_mm * np.cos(ang),
        spec.radius_mm * np.sin(ang),
        spec.pitch_mm * spec.turns * s,
    ])
    axis = _unit(spec.axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(helper, axis))
    e2 = np.cross(axis, e1)
    pts = local @ np.vstack([e1, e2, axis])
    pts -= pts.mean(axis=0)
    return pts + np.asarray(spec.center_mm, dtype=float)


def rigid_transform(pts, motion: RigidMotion) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ motion.rotation.T + np.asarray(motion.T_mm, dtype=float)


@dataclass
class Frame:
    truth3d: np.ndarray
    noisy3d: np.ndarray
    tracks: dict[str, np.ndarray]


@dataclass
class SyntheticSequence:
    frames: list[Frame]
    gantries: tuple[GantryConfig, GantryConfig]
    seed: int
    noise_mm: float = 0.0
    noise_scope: str = "apriori"
    params: dict = field(default_factory=dict)

    @property
    def views(self) -> tuple[str, str]:
        return self.gantries[0].name, self.gantries[1].name

    def truth(self) -> np.ndarray:
        return np.stack([f.truth3d for f in self.frames])

    def track(self, view: str) -> np.ndarray:
        """``(n_frames, n_points, 2)`` pixel track for one view."""
        return np.stack([f.tracks[view] for f in self.frames])

    def gantry(self, view: str) -> GantryConfig:
        for g in self.gantries:
            if g.name == view:
                return g
        raise KeyError(view)


def default_gantries() -> tuple[GantryConfig, GantryConfig]:
    """Posterior-anterior (primary 90 deg) and left lateral (primary 0 deg)."""
    return default_gantry(90.0, "PA"), default_gantry(0.0, "LAT")


def generate_sequence(
    spec: HelixSpec = HelixSpec(),
    motion: RigidMotion = RigidMotion(),
    n_frames: int = 6,
    gantries: tuple[GantryConfig, GantryConfig] | None = None,
    noise_mm: float = 0.0,
    seed: int = 0,
    noise_scope: str = "apriori",
) -> SyntheticSequence:
    """Frame ``i`` is the helix moved ``i`` times by ``motion``.

    Uniform per-axis noise on ``[-noise_mm, noise_mm]`` perturbs the 3-D
    coordinates before projection: only frame 0 (the one the a priori model
    is triangulated from) when ``noise_scope == "apriori"``, every frame
    when ``"all"``. Noise for all frames is always drawn, so frame 0 is the
    same under both scopes.
    """
    if n_frames < 2:
        raise InvalidConfig("n_frames must be at least 2")
    if noise_scope not in NOISE_SCOPES:
        raise InvalidConfig(f"noise_scope must be one of {NOISE_SCOPES}")
    if noise_mm < 0:
        raise InvalidConfig("noise_mm must be non-negative")
    gantries = default_gantries() if gantries is None else tuple(gantries)
    if len({g.name for g in gantries}) != 2:
        raise InvalidConfig("the two gantries need distinct names")

    rng = np.random.default_rng(seed)
    pts = make_helix(spec)
    noise = rng.uniform(-noise_mm, noise_mm, size=(n_frames,) + pts.shape) if noise_mm > 0 else np.zeros((n_frames,) + pts.shape)
    if noise_scope == "apriori":
        noise[1:] = 0.0
    Ps = {g.name: full_projection(g.intrinsics, g.extrinsics) for g in gantries}

    frames = []
    current = pts
    for i in range(n_frames):
        if i:
            current = rigid_transform(current, motion)
        noisy = current + noise[i]
        frames.append(Frame(current.copy(), noisy, {v: project(P, noisy) for v, P in Ps.items()}))
    params = {
        "helix": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(spec).items()},
        "motion": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(motion).items()},
        "n_frames": n_frames,
        "noise_mm": noise_mm,
        "noise_scope": noise_scope,
        "seed": seed,
    }
    return SyntheticSequence(frames, gantries, seed, noise_mm, noise_scope, params)


def interframe_displacements(seq: SyntheticSequence, view: str) -> np.ndarray:
    """``(n_frames - 1, n_points, 2)`` pixel motion between consecutive frames."""
    return np.diff(seq.track(view), axis=0)


# --- rendering ---------------------------------------------------------------

def _texture(shape, rng) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    tex = np.zeros(shape)
    for _ in range(3):
        fx, fy = rng.uniform(0.3, 2.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        tex += np.cos(2 * np.pi * (fx * xx + fy * yy) + ph)
    return tex / 3.0


def render_frame(
    tracks,
    image_size=(512, 512),
    electrode_radius_px: float = 6.0,
    noise_sigma: float = 0.05,
    seed: int = 0,
    contrast: float = 0.55,
    background: float = 0.75,
    texture_amplitude: float = 0.08,
    blur_px: float = 1.0,
) -> np.ndarray:
    """Render dark electrode disks on a slowly varying bright background.

    Disks attenuate the background multiplicatively, are Gaussian blurred
    and receive additive Gaussian noise of standard deviation
    ``noise_sigma`` (unit intensity range). Returns floats in ``[0, 1]``.
    """
    tracks = np.atleast_2d(np.asarray(tracks, dtype=float))
    w, h = (int(x) for x in np.broadcast_to(np.asarray(image_size), (2,)))
    outside = (tracks[:, 0] < 0) | (tracks[:, 0] > w - 1) | (tracks[:, 1] < 0) | (tracks[:, 1] > h - 1)
    if np.any(outside):
        raise OutOfFrame(f"electrodes {np.flatnonzero(outside).tolist()} fall outside the {w}x{h} frame")
    rng = np.random.default_rng(seed)
    bg = background + texture_amplitude * _texture((h, w), rng)

    occ = np.zeros((h, w))
    r = float(electrode_radius_px)
    pad = int(np.ceil(r)) + 2
    for u, v in tracks:
        u0, u1 = max(int(np.floor(u)) - pad, 0), min(int(np.ceil(u)) + pad + 1, w)
        v0, v1 = max(int(np.floor(v)) - pad, 0), min(int(np.ceil(v)) + pad + 1, h)
        yy, xx = np.mgrid[v0:v1, u0:u1]
        d = np.hypot(xx - u, yy - v)
        cover = np.clip(r + 0.5 - d, 0.0, 1.0)
        occ[v0:v1, u0:u1] = np.maximum(occ[v0:v1, u0:u1], cover)
    if blur_px > 0:
        occ = ndimage.gaussian_filter(occ, blur_px, mode="nearest")
    img = bg * (1.0 - contrast * occ)
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


# --- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class RmsReport:
    mean: float
    min: float
    max: float
    rms_accumulated: float
    per_frame_rms: tuple[float, ...] = ()

    def as_row(self) -> tuple[float, float, float, float]:
        return self.mean, self.min, self.max, self.rms_accumulated


def rms3d_report(est, truth) -> RmsReport:
    """Pool per-point Euclidean errors over the given frames; the accumulated
    RMS is the sum of each frame's RMS error."""
    est = [np.asarray(e, dtype=float) for e in est]
    truth = [np.asarray(t, dtype=float) for t in truth]
    if len(est) != len(truth) or not est or any(e.shape != t.shape for e, t in zip(est, truth)):
        raise ShapeMismatch("estimate and truth frames differ in count or shape")
    errs = [np.linalg.norm(e - t, axis=-1) for e, t in zip(est, truth)]
    pooled = np.concatenate(errs)
    per_frame = tuple(float(np.sqrt(np.mean(e ** 2))) for e in errs)
    return RmsReport(float(pooled.mean()), float(pooled.min()), float(pooled.max()), float(sum(per_frame)), per_frame)

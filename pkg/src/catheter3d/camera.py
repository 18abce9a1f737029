"""C-arm projection geometry.

World lengths are millimetres, pixel coordinates have their origin at the
centre of the top-left pixel with ``u`` to the right and ``v`` downwards.
Three projection models are provided: full perspective, parallel (affine)
and weak perspective.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DegenerateProjection, InvalidConfig, NonPositiveDepth

_W_EPS = 1e-12


def _as_pair(value) -> tuple[float, float]:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (2,))
    return float(arr[0]), float(arr[1])


@dataclass(frozen=True)
class Intrinsics:
    """Detector geometry.

    ``k`` is the pixel density in px/mm on the intensifier and ``f`` the
    source-to-detector distance in mm, so ``k * f`` is the focal length in
    pixels.
    """

    f: float
    k: float
    u0: float
    v0: float
    image_size: tuple[int, int]
    intensifier_size: tuple[float, float]

    def __post_init__(self):
        if not self.f > 0 or not self.k > 0:
            raise InvalidConfig(f"focal length and pixel density must be positive (f={self.f}, k={self.k})")
        w, h = self.image_size
        if not (0 <= self.u0 < w and 0 <= self.v0 < h):
            raise InvalidConfig(f"principal point ({self.u0}, {self.v0}) outside a {w}x{h} image")

    @classmethod
    def from_detector(cls, f_mm: float, image_px, intensifier_mm, u0=None, v0=None) -> "Intrinsics":
        """Build intrinsics from the physical detector; the principal point
        defaults to the image centre."""
        w, h = (int(x) for x in np.broadcast_to(np.asarray(image_px), (2,)))
        iw, ih = _as_pair(intensifier_mm)
        kx, ky = w / iw, h / ih
        if not np.isclose(kx, ky, rtol=1e-12):
            raise InvalidConfig("non-square pixels are not supported")
        u0 = (w - 1) / 2.0 if u0 is None else float(u0)
        v0 = (h - 1) / 2.0 if v0 is None else float(v0)
        return cls(float(f_mm), kx, u0, v0, (w, h), (iw, ih))

    @property
    def kf(self) -> float:
        return self.k * self.f

    @property
    def resolution(self) -> float:
        """Millimetres per pixel on the intensifier."""
        return 1.0 / self.k

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.kf, 0.0, self.u0], [0.0, self.kf, self.v0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """World to camera transform, ``X_cam = R @ X_world + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-10 or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise InvalidConfig("R is not a proper rotation")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def inverse(self) -> "Extrinsics":
        return Extrinsics(self.R.T, -self.R.T @ self.t)


@dataclass(frozen=True)
class GantryPose:
    primary_deg: float
    secondary_deg: float
    source_to_object_mm: float


class Variant(str, Enum):
    FULL = "full"
    AFFINE = "affine"
    WEAK = "weak"


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    M: np.ndarray
    variant: Variant = Variant.FULL
    z_avg: float | None = None

    def __post_init__(self):
        M = np.array(self.M, dtype=float).reshape(3, 4)
        M.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "variant", Variant(self.variant))

    def scaled(self, s: float) -> "ProjectionMatrix":
        return ProjectionMatrix(self.M * s, self.variant, self.z_avg)


@dataclass(frozen=True)
class GantryConfig:
    """Contents of a ``.cfg`` gantry file."""

    intrinsics: Intrinsics
    pose: GantryPose
    name: str = field(default="", compare=False)

    @property
    def extrinsics(self) -> Extrinsics:
        return extrinsics_from_gantry(self.pose)

    def projection(self) -> ProjectionMatrix:
        return full_projection(self.intrinsics, self.extrinsics)


def frame_rotation(axis: str, deg: float) -> np.ndarray:
    """Matrix taking coordinates into a frame rotated by ``deg`` about ``axis``.

    This is the transpose of the usual active rotation matrix.
    """
    a = np.deg2rad(deg % 360.0)
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
    if axis == "y":
        return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    if axis == "z":
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown axis {axis!r}")


def extrinsics_from_gantry(pose: GantryPose) -> Extrinsics:
    """World frame at the isocentre; primary angle about world Y, secondary
    about world X, the camera looking down its own +Z axis."""
    if not pose.source_to_object_mm > 0:
        raise InvalidConfig("source_to_object_mm must be positive")
    R = frame_rotation("y", pose.primary_deg) @ frame_rotation("x", pose.secondary_deg)
    return Extrinsics(R, np.array([0.0, 0.0, float(pose.source_to_object_mm)]))


def full_projection(intr: Intrinsics, extr: Extrinsics) -> ProjectionMatrix:
    return ProjectionMatrix(intr.matrix @ extr.matrix, Variant.FULL)


def affine_projection(intr: Intrinsics, extr: Extrinsics) -> ProjectionMatrix:
    k = intr.k
    M = np.zeros((3, 4))
    M[0, :3] = k * extr.R[0]
    M[1, :3] = k * extr.R[1]
    M[0, 3] = k * extr.t[0] + intr.u0
    M[1, 3] = k * extr.t[1] + intr.v0
    M[2, 3] = 1.0
    return ProjectionMatrix(M, Variant.AFFINE)


def average_depth(extr: Extrinsics, centroid) -> float:
    return float(extr.R[2] @ np.asarray(centroid, dtype=float) + extr.t[2])


def weak_projection(intr: Intrinsics, extr: Extrinsics, centroid) -> ProjectionMatrix:
    """Weak perspective about the depth of ``centroid`` (world coordinates)."""
    z_avg = average_depth(extr, centroid)
    if not z_avg > 0:
        raise NonPositiveDepth(f"average depth {z_avg} mm is not in front of the source")
    kf = intr.kf
    M = np.zeros((3, 4))
    M[0, :3] = kf * extr.R[0]
    M[1, :3] = kf * extr.R[1]
    M[0, 3] = kf * extr.t[0] + intr.u0 * z_avg
    M[1, 3] = kf * extr.t[1] + intr.v0 * z_avg
    M[2, 3] = z_avg
    return ProjectionMatrix(M, Variant.WEAK, z_avg)


def project(P: ProjectionMatrix, X) -> np.ndarray:
    """Project one point ``(3,)`` or many ``(n, 3)`` to pixel coordinates."""
    X = np.asarray(X, dtype=float)
    pts = np.atleast_2d(X)
    h = pts @ P.M[:, :3].T + P.M[:, 3]
    w = h[:, 2]
    if np.any(np.abs(w) < _W_EPS):
        raise DegenerateProjection("point projects to infinity (|w| < 1e-12)")
    uv = h[:, :2] / w[:, None]
    return uv[0] if X.ndim == 1 else uv


_CFG_KEYS = (
    "focal_length_mm",
    "image_px",
    "intensifier_mm",
    "primary_deg",
    "secondary_deg",
    "source_to_object_mm",
)


def gantry_from_mapping(values: dict[str, str], name: str = "") -> GantryConfig:
    unknown = sorted(set(values) - set(_CFG_KEYS))
    if unknown:
        raise InvalidConfig(f"unknown gantry keys: {', '.join(unknown)}")
    missing = [k for k in _CFG_KEYS if k not in values]
    if missing:
        raise InvalidConfig(f"missing gantry keys: {', '.join(missing)}")
    try:
        f = float(values["focal_length_mm"])
        px = int(values["image_px"])
        mm = float(values["intensifier_mm"])
        pose = GantryPose(
            float(values["primary_deg"]),
            float(values["secondary_deg"]),
            float(values["source_to_object_mm"]),
        )
    except ValueError as exc:
        raise InvalidConfig(f"bad gantry value: {exc}") from None
    if not 0 < pose.source_to_object_mm < f:
        raise InvalidConfig("the object must lie between source and detector")
    return GantryConfig(Intrinsics.from_detector(f, px, mm), pose, name)


def load_gantry(path) -> GantryConfig:
    from .io import read_kv

    path = Path(path)
    first = path.read_text(encoding="utf-8").split("\n", 1)[0].strip()
    name = first[len("# gantry "):].strip() if first.startswith("# gantry ") else ""
    return gantry_from_mapping(read_kv(path), name or path.stem)


def dump_gantry(cfg: GantryConfig) -> str:
    intr, pose = cfg.intrinsics, cfg.pose
    if intr.image_size[0] != intr.image_size[1]:
        raise InvalidConfig("gantry files describe square images only")
    lines = [
        f"focal_length_mm={intr.f:g}",
        f"image_px={intr.image_size[0]}",
        f"intensifier_mm={intr.intensifier_size[0]:g}",
        f"primary_deg={pose.primary_deg:g}",
        f"secondary_deg={pose.secondary_deg:g}",
        f"source_to_object_mm={pose.source_to_object_mm:g}",
    ]
    header = f"# gantry {cfg.name}\n" if cfg.name else ""
    return header + "\n".join(lines) + "\n"


def default_gantry(primary_deg: float, name: str = "", secondary_deg: float = 0.0) -> GantryConfig:
    """1 m source-to-detector, 512 px on a 178 mm intensifier, object at 500 mm."""
    return GantryConfig(
        Intrinsics.from_detector(1000.0, 512, 178.0),
        GantryPose(primary_deg, secondary_deg, 500.0),
        name,
    )

"""Electrode enhancement and segmentation.

Images are 2-D float arrays (rows = ``v``, columns = ``u``) with a nominal
unit intensity range. Electrodes are radio-opaque and therefore dark.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import DegenerateHistogram, InvalidConfig

LOG_FLOOR = 1e-4


@dataclass(frozen=True)
class HomomorphicParams:
    # strong low-frequency cut flattens the background texture; the small
    # cutoff keeps electrode-scale frequencies at full gain
    gamma_L: float = 0.1
    gamma_H: float = 1.5
    c: float = 1.0
    D0: float = 15.0


@dataclass(frozen=True)
class PeronaMalikParams:
    K: float = 0.3
    iterations: int = 15
    dt: float = 0.2


@dataclass(frozen=True)
class ShockParams:
    # the arctan slope scales with intensity range; 500 suits unit-range images
    a: float = 500.0
    lambda_mag: float = 0.1
    lambda_phase: float = np.pi / 1000
    lambda_tilde: float = 0.05
    iterations: int = 10
    dt: float = 0.1


@dataclass(frozen=True)
class MorphParams:
    disk_radius_px: int = 3


@dataclass(frozen=True)
class SegmentParams:
    electrode_radius_px: float = 6.0


@dataclass(frozen=True)
class FilterParams:
    homomorphic: HomomorphicParams = field(default_factory=HomomorphicParams)
    pm: PeronaMalikParams = field(default_factory=PeronaMalikParams)
    shock: ShockParams = field(default_factory=ShockParams)
    morph: MorphParams = field(default_factory=MorphParams)
    segment: SegmentParams = field(default_factory=SegmentParams)

    def __post_init__(self):
        hp = self.homomorphic
        if not hp.gamma_L <= 1.0 <= hp.gamma_H or hp.D0 <= 0:
            raise InvalidConfig("homomorphic filter needs gamma_L <= 1 <= gamma_H and D0 > 0")
        if not (0 < self.pm.dt <= 0.25) or self.pm.K <= 0 or self.pm.iterations < 0:
            raise InvalidConfig("Perona-Malik needs 0 < dt <= 0.25, K > 0")
        if self.shock.dt <= 0 or self.shock.iterations < 0:
            raise InvalidConfig("shock filter needs dt > 0")
        if self.morph.disk_radius_px < 1:
            raise InvalidConfig("disk radius must be at least 1 px")

    def with_overrides(self, values: dict[str, str]) -> "FilterParams":
        """Apply namespaced ``section.key`` overrides (``pm.K=0.05``)."""
        sections = {f.name: getattr(self, f.name) for f in fields(self)}
        aliases = {"homomorphic": "homomorphic", "hom": "homomorphic", "pm": "pm", "perona_malik": "pm",
                   "shock": "shock", "morph": "morph", "segment": "segment"}
        for key, raw in values.items():
            if "." not in key:
                raise InvalidConfig(f"filter key {key!r} is not namespaced")
            sec, name = key.split(".", 1)
            sec = aliases.get(sec)
            if sec is None or name not in {f.name for f in fields(sections[sec])}:
                raise InvalidConfig(f"unknown filter parameter {key!r}")
            current = getattr(sections[sec], name)
            try:
                value = int(raw) if isinstance(current, int) else float(raw)
            except ValueError:
                raise InvalidConfig(f"bad value for {key}: {raw!r}") from None
            sections[sec] = replace(sections[sec], **{name: value})
        return FilterParams(**sections)


# --- homomorphic -------------------------------------------------------------

def homomorphic_transfer(shape, p: HomomorphicParams) -> np.ndarray:
    """High-emphasis transfer function on the unshifted DFT grid."""
    h, w = shape
    fv = np.fft.fftfreq(h) * h
    fu = np.fft.fftfreq(w) * w
    D2 = fv[:, None] ** 2 + fu[None, :] ** 2
    return (p.gamma_H - p.gamma_L) * (1.0 - np.exp(-p.c * D2 / p.D0 ** 2)) + p.gamma_L


def homomorphic(img, p: HomomorphicParams = HomomorphicParams()) -> np.ndarray:
    img = np.maximum(np.asarray(img, dtype=float), LOG_FLOOR)
    H = homomorphic_transfer(img.shape, p)
    spec = np.fft.fft2(np.log(img))
    return np.exp(np.real(np.fft.ifft2(H * spec)))


# --- Perona-Malik ------------------------------------------------------------

def perona_malik(img, p: PeronaMalikParams = PeronaMalikParams()) -> np.ndarray:
    """Explicit anisotropic diffusion, 4-neighbour fluxes, zero-flux borders."""
    return kernels.perona_malik(np.asarray(img, dtype=float), p.K, p.dt, p.iterations)


# --- complex shock -----------------------------------------------------------

def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def complex_shock(img, p: ShockParams = ShockParams()) -> np.ndarray:
    """Complex shock filter; the imaginary part of the evolving field acts
    as a smoothed second-derivative detector that steers the shock."""
    I = np.asarray(img, dtype=float).astype(complex)
    lam = p.lambda_mag * np.exp(1j * p.lambda_phase)
    theta = p.lambda_phase
    for _ in range(int(p.iterations)):
        P = np.pad(I, 1, mode="edge")
        c = P[1:-1, 1:-1]
        n, s = P[:-2, 1:-1], P[2:, 1:-1]
        wv, e = P[1:-1, :-2], P[1:-1, 2:]
        Ix = (e - wv) / 2.0
        Iy = (s - n) / 2.0
        Ixx = e - 2.0 * c + wv
        Iyy = s - 2.0 * c + n
        Ixy = (P[2:, 2:] - P[2:, :-2] - P[:-2, 2:] + P[:-2, :-2]) / 4.0
        gx, gy = Ix.real, Iy.real
        g2 = gx * gx + gy * gy
        flat = g2 < 1e-20
        g2s = np.where(flat, 1.0, g2)
        I_eta = np.where(flat, 0.5 * (Ixx + Iyy), (Ixx * gx * gx + 2 * Ixy * gx * gy + Iyy * gy * gy) / g2s)
        I_xi = np.where(flat, 0.5 * (Ixx + Iyy), (Ixx * gy * gy - 2 * Ixy * gx * gy + Iyy * gx * gx) / g2s)
        cr = c.real
        dxp = (e.real - cr)
        dxm = (cr - wv.real)
        dyp = (s.real - cr)
        dym = (cr - n.real)
        grad = np.sqrt(_minmod(dxp, dxm) ** 2 + _minmod(dyp, dym) ** 2)
        shock = -(2.0 / np.pi) * np.arctan(p.a * c.imag / theta) * grad
        I = c + p.dt * (shock + lam * I_eta + p.lambda_tilde * I_xi)
    return I.real


# --- morphology --------------------------------------------------------------

def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def morph_suppress(img, disk_radius_px: int = 3) -> np.ndarray:
    """Grey opening by a flat disk: bright structures narrower than the
    disk vanish, dark structures are kept. Pixels outside the image never
    take part, which keeps the opening idempotent."""
    if disk_radius_px < 1:
        raise InvalidConfig("disk radius must be at least 1 px")
    fp = disk(disk_radius_px)
    img = np.asarray(img, dtype=float)
    eroded = ndimage.grey_erosion(img, footprint=fp, mode="constant", cval=np.inf)
    return ndimage.grey_dilation(eroded, footprint=fp, mode="constant", cval=-np.inf)


# --- threshold and labeling --------------------------------------------------

@dataclass(frozen=True)
class OtsuResult:
    threshold: int
    binary: np.ndarray


def quantize8(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.int64)


def between_class_variance(hist: np.ndarray) -> np.ndarray:
    """Between-class variance for every split ``level <= t`` vs ``> t``."""
    hist = np.asarray(hist, dtype=float)
    p = hist / hist.sum()
    levels = np.arange(hist.size, dtype=float)
    w0 = np.cumsum(p)
    m0 = np.cumsum(p * levels)
    mt = m0[-1]
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        sb = (mt * w0 - m0) ** 2 / (w0 * w1)
    sb[(w0 <= 0) | (w1 <= 1e-15)] = 0.0
    return sb


def otsu_threshold(img) -> OtsuResult:
    """Otsu on the 8-bit histogram; dark pixels (``<= threshold``) are foreground."""
    q = quantize8(img)
    hist = np.bincount(q.ravel(), minlength=256)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("image has a single grey level")
    t = int(np.argmax(between_class_variance(hist)))
    return OtsuResult(t, q <= t)


@dataclass(frozen=True)
class Region:
    label: int
    area_px: int
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]


@dataclass
class LabeledRegions:
    labels: np.ndarray
    regions: list[Region]


def label_components(mask) -> LabeledRegions:
    """8-connected components with unweighted centroids ``(u, v)``."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = kernels.label8(mask)
    regions = []
    if n:
        idx = np.arange(1, n + 1)
        lab = labels.ravel()
        vv, uu = np.divmod(np.arange(lab.size), mask.shape[1])
        fg = lab > 0
        area = np.bincount(lab[fg], minlength=n + 1)
        su = np.bincount(lab[fg], weights=uu[fg], minlength=n + 1)
        sv = np.bincount(lab[fg], weights=vv[fg], minlength=n + 1)
        slices = ndimage.find_objects(labels)
        for i in idx:
            sl = slices[i - 1]
            regions.append(Region(
                int(i), int(area[i]), (su[i] / area[i], sv[i] / area[i]),
                (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1),
            ))
    return LabeledRegions(labels, regions)


# --- pipeline ----------------------------------------------------------------

class Status(str, Enum):
    OK = "ok"
    NEEDS_MANUAL = "needs_manual"


@dataclass
class Segmentation:
    centroids: np.ndarray
    status: Status
    regions: list[Region]
    threshold: int
    enhanced: np.ndarray


def _normalize(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    if hi - lo < 1e-12:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def enhance(img, params: FilterParams = FilterParams()) -> np.ndarray:
    """Homomorphic, Perona-Malik, complex shock and morphological steps.

    The morphological opening runs on the inverted image, so it removes
    structures that are darker than their surroundings yet thinner than the
    disk (catheter shafts, speckle) while electrodes survive.
    """
    out = _normalize(homomorphic(img, params.homomorphic))
    out = perona_malik(out, params.pm)
    out = complex_shock(out, params.shock)
    out = 1.0 - morph_suppress(1.0 - out, params.morph.disk_radius_px)
    return _normalize(out)


def area_band(radius_px: float) -> tuple[float, float]:
    r = float(radius_px)
    return np.pi * max(r - 1.0, 0.0) ** 2, np.pi * (r + 3.0) ** 2


def segment_electrodes(img, params: FilterParams = FilterParams(), expected_n: int | None = None) -> Segmentation:
    """Centroids of electrode-sized dark blobs, sorted by ``(v, u)``.

    The status is ``NEEDS_MANUAL`` whenever the count differs from
    ``expected_n``; no attempt is made to split or merge blobs.
    """
    enhanced = enhance(img, params)
    otsu = otsu_threshold(enhanced)
    lab = label_components(otsu.binary)
    lo, hi = area_band(params.segment.electrode_radius_px)
    keep = [r for r in lab.regions if lo <= r.area_px <= hi]
    keep.sort(key=lambda r: (r.centroid[1], r.centroid[0]))
    cents = np.array([r.centroid for r in keep], dtype=float).reshape(-1, 2)
    status = Status.OK if expected_n is None or len(keep) == expected_n else Status.NEEDS_MANUAL
    return Segmentation(cents, status, keep, otsu.threshold, enhanced)

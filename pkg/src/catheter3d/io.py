"""File formats: key=value configs, binary PGM/PPM rasters and the CSV tables."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidConfig


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidConfig(f"{source}:{lineno}: empty key")
        if key in values:
            raise InvalidConfig(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), str(path))


# --- rasters -----------------------------------------------------------------

def _read_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise FormatError(f"not a {magic.decode()} file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        fields.append(data[start:pos])
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise FormatError("only 8-bit rasters (maxval 255) are supported")
    return width, height, pos + 1


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantise a unit-range image to 8 bits."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    data = to_uint8(img)
    if data.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 file as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    w, h, off = _read_header(raw, b"P5")
    if len(raw) - off < w * h:
        raise FormatError("truncated pixel data")
    body = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=off)
    return body.reshape(h, w).astype(float) / 255.0


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM needs an (h, w, 3) uint8 array")
    h, w = rgb.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, off = _read_header(raw, b"P6")
    if len(raw) - off < w * h * 3:
        raise FormatError("truncated pixel data")
    body = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=off)
    return body.reshape(h, w, 3).copy()


# --- tables ------------------------------------------------------------------

def _f6(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _reader(path, header: list[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != header:
        raise FormatError(f"{path}: expected header {','.join(header)}")
    return [r for r in rows[1:] if r]


def _writer(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


TRACK_HEADER = ["frame", "electrode", "u_px", "v_px"]
POINTS_HEADER = ["electrode", "x_mm", "y_mm", "z_mm"]
RECON_HEADER = ["frame", "electrode", "x_mm", "y_mm", "z_mm", "converged", "residual_norm"]
ACTIVATION_HEADER = ["site", "x_mm", "y_mm", "z_mm", "lat_ms"]
ELECTROGRAM_HEADER = ["t_s", "mv"]
REPORT_HEADER = ["dz_init", "n_images", "view", "mean", "min", "max", "rms_accumulated"]


def write_tracks(path, tracks: np.ndarray, frames=None) -> None:
    """``tracks`` has shape ``(n_frames, n_electrodes, 2)``."""
    tracks = np.asarray(tracks, dtype=float)
    frames = range(tracks.shape[0]) if frames is None else frames
    rows = [
        [str(fi), str(e), _f6(uv[0]), _f6(uv[1])]
        for fi, frame in zip(frames, tracks)
        for e, uv in enumerate(frame)
    ]
    _writer(path, TRACK_HEADER, rows)


def read_tracks(path) -> dict[int, np.ndarray]:
    """Return ``{frame: (n_electrodes, 2)}`` ordered by electrode index."""
    frames: dict[int, dict[int, tuple[float, float]]] = {}
    try:
        for r in _reader(path, TRACK_HEADER):
            frames.setdefault(int(r[0]), {})[int(r[1])] = (float(r[2]), float(r[3]))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    out = {}
    for fi in sorted(frames):
        pts = frames[fi]
        if sorted(pts) != list(range(len(pts))):
            raise FormatError(f"{path}: frame {fi} electrode ids are not 0..n-1")
        out[fi] = np.array([pts[e] for e in range(len(pts))])
    return out


def tracks_array(frames: dict[int, np.ndarray], indices=None) -> np.ndarray:
    from .errors import CountMismatch

    keys = sorted(frames) if indices is None else list(indices)
    missing = [k for k in keys if k not in frames]
    if missing:
        raise CountMismatch(f"frames missing from track file: {missing}")
    counts = {frames[k].shape[0] for k in keys}
    if len(counts) != 1:
        raise CountMismatch(f"electrode counts differ between frames: {sorted(counts)}")
    return np.stack([frames[k] for k in keys])


def write_points(path, pts: np.ndarray) -> None:
    rows = [[str(e), _f6(p[0]), _f6(p[1]), _f6(p[2])] for e, p in enumerate(np.asarray(pts, float))]
    _writer(path, POINTS_HEADER, rows)


def read_points(path) -> np.ndarray:
    try:
        rows = sorted(_reader(path, POINTS_HEADER), key=lambda r: int(r[0]))
        return np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows]).reshape(-1, 3)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_recon(path, positions: np.ndarray, converged, residual_norm) -> None:
    """``positions`` has shape ``(n_frames, n_electrodes, 3)``."""
    rows = []
    for fi, frame in enumerate(np.asarray(positions, float)):
        for e, p in enumerate(frame):
            rows.append([
                str(fi), str(e), _f6(p[0]), _f6(p[1]), _f6(p[2]),
                "1" if converged[e] else "0", f"{float(residual_norm[e]):.6e}",
            ])
    _writer(path, RECON_HEADER, rows)


def read_recon(path) -> np.ndarray:
    rows = _reader(path, RECON_HEADER)
    n_frames = 1 + max(int(r[0]) for r in rows)
    n_el = 1 + max(int(r[1]) for r in rows)
    out = np.full((n_frames, n_el, 3), np.nan)
    for r in rows:
        out[int(r[0]), int(r[1])] = [float(r[2]), float(r[3]), float(r[4])]
    return out


def write_activation(path, site_ids, positions, lats) -> None:
    rows = [
        [str(s), _f6(p[0]), _f6(p[1]), _f6(p[2]), _f6(lat)]
        for s, p, lat in zip(site_ids, np.asarray(positions, float), lats)
    ]
    _writer(path, ACTIVATION_HEADER, rows)


def read_activation(path):
    """Return ``(site_ids, positions (n, 3), lats (n,))``."""
    try:
        rows = _reader(path, ACTIVATION_HEADER)
        ids = [r[0] for r in rows]
        pos = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows]).reshape(-1, 3)
        lat = np.array([float(r[4]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate site ids")
    return ids, pos, lat


def write_electrogram(path, samples, fs: float) -> None:
    rows = [[f"{i / fs:.9f}", f"{float(v):.6f}"] for i, v in enumerate(samples)]
    _writer(path, ELECTROGRAM_HEADER, rows)


def read_electrogram(path):
    from .mapping import Electrogram

    rows = _reader(path, ELECTROGRAM_HEADER)
    t = np.array([float(r[0]) for r in rows])
    mv = np.array([float(r[1]) for r in rows])
    if t.size < 3:
        raise FormatError(f"{path}: need at least 3 samples")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 or dt[0] <= 0:
        raise FormatError(f"{path}: samples are not uniformly spaced")
    # round-trip the 9-decimal timestamps back to the nominal rate
    fs = 1.0 / dt[0]
    fs_round = round(fs)
    if abs(fs - fs_round) < 1e-6 * fs:
        fs = float(fs_round)
    return Electrogram(mv, fs)


def write_report(path, rows) -> None:
    """Tab separated Table-1 style report; ``rows`` are dicts or tuples
    ordered like ``REPORT_HEADER``."""
    lines = ["\t".join(REPORT_HEADER)]
    for r in rows:
        if isinstance(r, dict):
            r = [r[k] for k in REPORT_HEADER]
        dz, n, view, *vals = r
        lines.append("\t".join([f"{float(dz):g}", str(int(n)), str(view)] + [f"{float(v):.6f}" for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != REPORT_HEADER:
        raise FormatError(f"{path}: expected header {' '.join(REPORT_HEADER)}")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        c = line.split("\t")
        out.append({
            "dz_init": float(c[0]), "n_images": int(c[1]), "view": c[2],
            "mean": float(c[3]), "min": float(c[4]), "max": float(c[5]), "rms_accumulated": float(c[6]),
        })
    return out

"""Command-line driver.

Every command reads and writes plain files so runs can be chained and
compared byte for byte. Exit codes: 0 success, 2 invalid configuration,
3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .camera import Extrinsics, dump_gantry, full_projection, load_gantry
from .errors import Catheter3DError, FormatError, InvalidConfig, NumericalError
from .experiment import DZ_VALUES, FRAME_COUNTS, sweep
from .filters import FilterParams, Status, segment_electrodes
from .mapping import (
    ActivationSample, PALETTES, build_activation_map, detect_lat, fuse_overlay, make_site_phantom,
    synthetic_electrogram,
)
from .reconstruct import (
    INIT_MODES, AprioriModel, LmOptions, monoplane_reconstruct, select_diastolic_frame, to_camera_frame,
    triangulate,
)
from .simulate import NOISE_SCOPES, HelixSpec, RigidMotion, generate_sequence, render_frame

log = logging.getLogger("catheter3d")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
DEFAULT_SEED = 0
VIEW_FILES = ("a", "b")


# --- config ------------------------------------------------------------------

def _parse_list(text: str, cast=float) -> list:
    try:
        return [cast(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise InvalidConfig(f"bad list {text!r}") from None


def _cast_like(current, raw: str):
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.split(","))
        return float(raw)
    except ValueError:
        raise InvalidConfig(f"bad value {raw!r}") from None


def _override(obj, prefix: str, values: dict[str, str]):
    names = {f.name: getattr(obj, f.name) for f in fields(obj)}
    kw = {}
    for key, raw in values.items():
        if key not in names:
            raise InvalidConfig(f"unknown {prefix} parameter {key!r}")
        kw[key] = _cast_like(names[key], raw)
    return replace(obj, **kw) if kw else obj


FILTER_SECTIONS = ("hom", "homomorphic", "pm", "perona_malik", "shock", "morph", "segment")


class RunConfig:
    """Parameters from ``--config``: ``lm.*``, ``helix.*``, ``motion.*`` and
    filter keys (``pm.K``, optionally prefixed ``filter.``) override the
    library defaults."""

    def __init__(self, values: dict[str, str] | None = None):
        groups: dict[str, dict[str, str]] = {"filter": {}, "lm": {}, "helix": {}, "motion": {}}
        for key, raw in (values or {}).items():
            head, _, rest = key.partition(".")
            if head in FILTER_SECTIONS:
                head, rest = "filter", key
            if head not in groups or not rest:
                raise InvalidConfig(f"unknown config key {key!r}")
            groups[head][rest] = raw
        self.filter = FilterParams().with_overrides(groups["filter"])
        self.lm = _override(LmOptions(), "lm", groups["lm"])
        self.helix = _override(HelixSpec(), "helix", groups["helix"])
        self.motion = _override(RigidMotion(), "motion", groups["motion"])

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls(fio.read_kv(path) if path else None)


# --- sequence directory ------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def simulate_params(args, cfg: RunConfig) -> dict:
    return {
        "version": __version__,
        "seed": int(args.seed),
        "n_frames": int(args.frames),
        "noise_mm": float(args.noise_mm),
        "noise_scope": args.noise_scope,
        "helix": asdict(cfg.helix),
        "motion": asdict(cfg.motion),
        "render": bool(args.render),
        "render_radius_px": float(args.render_radius),
        "render_noise_sigma": float(args.render_noise),
        "sites": int(args.sites),
    }


def write_sequence(out: Path, params: dict) -> None:
    helix = HelixSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in params["helix"].items()})
    motion = RigidMotion(**{k: tuple(v) if isinstance(v, list) else v for k, v in params["motion"].items()})
    seq = generate_sequence(helix, motion, params["n_frames"], noise_mm=params["noise_mm"], seed=params["seed"],
                            noise_scope=params["noise_scope"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(exist_ok=True)
    for tag, g in zip(VIEW_FILES, seq.gantries):
        (out / f"gantry_{tag}.cfg").write_text(dump_gantry(g), encoding="utf-8")
        fio.write_tracks(out / f"tracks_{tag}.csv", seq.track(g.name))
    for i, fr in enumerate(seq.frames):
        fio.write_points(out / "truth" / f"frame_{i}.csv", fr.truth3d)
    if params["render"]:
        for k, (tag, g) in enumerate(zip(VIEW_FILES, seq.gantries)):
            d = out / f"frames_{tag}"
            d.mkdir(exist_ok=True)
            w, h = g.intrinsics.image_size
            for i, fr in enumerate(seq.frames):
                img = render_frame(fr.tracks[g.name], (w, h), params["render_radius_px"],
                                   params["render_noise_sigma"], seed=params["seed"] * 1000 + 100 * k + i)
                fio.write_pgm(d / f"frame_{i:03d}.pgm", img)
    if params["sites"]:
        ph = make_site_phantom(params["sites"], seed=params["seed"])
        fio.write_points(out / "sites.csv", ph.positions)
        eg_dir = out / "electrograms"
        eg_dir.mkdir(exist_ok=True)
        fs, ref_onset = 1000.0, 100
        ref = synthetic_electrogram(1000, fs, ref_onset)
        fio.write_electrogram(eg_dir / "ref.csv", ref.samples, fs)
        for j, lat in enumerate(ph.lat_ms):
            eg = synthetic_electrogram(1000, fs, ref_onset + int(round(lat * fs / 1000.0)))
            fio.write_electrogram(eg_dir / f"site_{j:02d}.csv", eg.samples, fs)
    _write_json(out / "manifest.json", params)


# --- commands ----------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def cmd_simulate(args, cfg: RunConfig) -> int:
    if args.manifest:
        params = json.loads(_require(args.manifest, "manifest").read_text(encoding="utf-8"))
    else:
        if args.frames < 2:
            raise InvalidConfig("--frames must be at least 2")
        params = simulate_params(args, cfg)
    out = _out_dir(args)
    write_sequence(out, params)
    print(f"wrote {params['n_frames']} frames x 2 views to {out}")
    return EXIT_OK


def _frame_paths(d) -> list[Path]:
    paths = sorted(_require(d, "frames directory").glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm frames in {d}")
    return paths


def cmd_segment(args, cfg: RunConfig) -> int:
    paths = _frame_paths(args.frames_dir)
    out = _out_dir(args)
    imgs = [fio.read_pgm(p) for p in paths]
    rows, manual = [], []
    for i, img in enumerate(imgs):
        seg = segment_electrodes(img, cfg.filter, args.expected)
        if seg.status is Status.OK:
            rows.extend([str(i), str(e), fio._f6(c[0]), fio._f6(c[1])] for e, c in enumerate(seg.centroids))
        else:
            manual.append(f"{i}\t{paths[i].name}\t{len(seg.centroids)}")
    fio._writer(out / "tracks.csv", fio.TRACK_HEADER, rows)
    (out / "manual_needed.txt").write_text("".join(m + "\n" for m in manual), encoding="utf-8")
    diastolic = select_diastolic_frame(imgs) if len(imgs) >= 2 else 0
    (out / "diastolic.txt").write_text(f"{diastolic}\n", encoding="utf-8")
    print(f"segmented {len(imgs) - len(manual)}/{len(imgs)} frames; diastolic frame {diastolic}")
    return EXIT_OK


def _frame_choice(args) -> int:
    if args.frame != "diastolic":
        try:
            return int(args.frame)
        except ValueError:
            raise InvalidConfig("--frame must be an integer or 'diastolic'") from None
    if not args.frames_dir:
        raise InvalidConfig("--frame diastolic needs --frames-dir")
    return select_diastolic_frame([fio.read_pgm(p) for p in _frame_paths(args.frames_dir)])


def cmd_triangulate(args, cfg: RunConfig) -> int:
    ga = load_gantry(_require(args.gantry_a, "gantry"))
    gb = load_gantry(_require(args.gantry_b, "gantry"))
    ta = fio.read_tracks(_require(args.tracks_a, "tracks"))
    tb = fio.read_tracks(_require(args.tracks_b, "tracks"))
    frame = _frame_choice(args)
    both = fio.tracks_array({0: fio.tracks_array(ta, [frame])[0], 1: fio.tracks_array(tb, [frame])[0]})
    tri = triangulate(ga.projection(), gb.projection(), both[0], both[1])
    cam = ga if args.camera == "a" else gb
    out = _out_dir(args)
    fio.write_points(out / "points3d.csv", to_camera_frame(tri.points, cam.extrinsics))
    print(f"triangulated {tri.points.shape[0]} points at frame {frame}; "
          f"max reprojection {tri.reprojection_px.max():.3g} px")
    return EXIT_OK


def _truth_camera(truth_dir: Path, extr: Extrinsics, frames) -> np.ndarray:
    return np.stack([to_camera_frame(fio.read_points(truth_dir / f"frame_{i}.csv"), extr) for i in frames])


def cmd_monoplane(args, cfg: RunConfig) -> int:
    g = load_gantry(_require(args.gantry, "gantry"))
    tracks = fio.read_tracks(_require(args.tracks, "tracks"))
    apriori = AprioriModel(fio.read_points(_require(args.apriori, "a priori points")))
    dz_list = _parse_list(args.dz_init)
    n_list = _parse_list(args.frames, int)
    if not dz_list or not n_list:
        raise InvalidConfig("--dz-init and --frames must not be empty")
    if min(n_list) < 3:
        raise InvalidConfig("monoplane reconstruction needs at least 3 frames")
    P = full_projection(g.intrinsics, Extrinsics.identity())
    view = args.view or g.name
    out = _out_dir(args)
    rows, any_ok = [], False
    single = len(dz_list) == 1 and len(n_list) == 1
    for dz in dz_list:
        for n in n_list:
            idx = list(range(args.start, args.start + n))
            track = fio.tracks_array(tracks, idx)
            truth = _truth_camera(Path(args.truth_dir), g.extrinsics, idx) if args.truth_dir else None
            sol = monoplane_reconstruct(apriori, track, P, dz, cfg.lm, init=args.init, truth=truth)
            any_ok |= bool(sol.converged.any())
            name = "recon.csv" if single else f"recon_dz{dz:g}_n{n}.csv"
            fio.write_recon(out / name, sol.positions, sol.converged, sol.residual_norm)
            if sol.rms is not None:
                rows.append((dz, n, view) + sol.rms.as_row())
            if sol.frames_warning:
                log.warning("%d frames exceeds the validated range of 3..6", n)
    if rows:
        fio.write_report(out / "report.tsv", rows)
    print(f"{len(dz_list) * len(n_list)} monoplane run(s) for view {view}")
    return EXIT_OK if any_ok else EXIT_NUMERICAL


def _sort_rows(rows):
    return sorted(rows, key=lambda r: (r["dz_init"], r["n_images"], r["view"]))


def cmd_report(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    if args.sweep:
        rows = sweep(seeds=range(args.seed, args.seed + args.seeds), dz_values=_parse_list(args.dz_init),
                     frame_counts=_parse_list(args.frames, int), noise_mm=args.noise_mm, spec=cfg.helix,
                     motion=cfg.motion, opts=cfg.lm, init=args.init, noise_scope=args.noise_scope)
    else:
        if not args.inputs:
            raise InvalidConfig("give report TSVs to merge or --sweep")
        rows = [r for p in args.inputs for r in fio.read_report(_require(p, "report"))]
    fio.write_report(out / "table.tsv", _sort_rows(rows))
    print(f"{len(rows)} rows -> {out / 'table.tsv'}")
    return EXIT_OK


def cmd_fuse(args, cfg: RunConfig) -> int:
    ids, pos, lat = fio.read_activation(_require(args.activation, "activation table"))
    g = load_gantry(_require(args.gantry, "gantry"))
    img = fio.read_pgm(_require(args.image, "background image"))
    amap = build_activation_map(ActivationSample(i, tuple(p), l) for i, p, l in zip(ids, pos, lat))
    ov = fuse_overlay(amap, g.projection(), img, args.palette)
    out = _out_dir(args)
    fio.write_ppm(out / "overlay.ppm", ov.rgb)
    if ov.out_of_frame:
        log.warning("%d hull vertices fall outside the frame", len(ov.out_of_frame))
    print(f"overlay with {len(amap.vertex_lat)} vertices -> {out / 'overlay.ppm'}")
    return EXIT_OK


def cmd_lat(args, cfg: RunConfig) -> int:
    ref = fio.read_electrogram(_require(args.ref, "reference electrogram"))
    maps = [fio.read_electrogram(_require(p, "electrogram")) for p in args.map]
    lats = [detect_lat(ref, m) for m in maps]
    if args.positions:
        pos = fio.read_points(_require(args.positions, "site positions"))
        if pos.shape[0] != len(lats):
            raise InvalidConfig(f"{pos.shape[0]} site positions for {len(lats)} electrograms")
        out = _out_dir(args)
        fio.write_activation(out / "activation.csv", [str(i) for i in range(len(lats))], pos, lats)
    for p, v in zip(args.map, lats):
        print(f"{Path(p).name}\t{v:g}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default %(default)s)")
    common.add_argument("--config", help="key=value file with parameter overrides")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="catheter3d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="synthetic helix sequence")
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--noise-mm", type=float, default=2.0)
    p.add_argument("--noise-scope", choices=NOISE_SCOPES, default="apriori")
    p.add_argument("--render", action="store_true", help="also write PGM frames")
    p.add_argument("--render-radius", type=float, default=6.0)
    p.add_argument("--render-noise", type=float, default=0.05)
    p.add_argument("--sites", type=int, default=20, help="mapping sites in the activation phantom (0: none)")
    p.add_argument("--manifest", help="reproduce a previous run from its manifest.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("segment", parents=[common], help="electrode centroids from PGM frames")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--expected", type=int, required=True, help="number of electrodes per frame")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("triangulate", parents=[common], help="two-view a priori model")
    p.add_argument("--gantry-a", required=True)
    p.add_argument("--gantry-b", required=True)
    p.add_argument("--tracks-a", required=True)
    p.add_argument("--tracks-b", required=True)
    p.add_argument("--frame", default="diastolic", help="frame index or 'diastolic'")
    p.add_argument("--frames-dir", help="PGM frames used to pick the diastolic frame")
    p.add_argument("--camera", choices=VIEW_FILES, default="a", help="camera frame of the output")
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("monoplane", parents=[common], help="single-view reconstruction")
    p.add_argument("--gantry", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--apriori", required=True, help="points in this gantry's camera frame")
    p.add_argument("--dz-init", default="1")
    p.add_argument("--frames", default=",".join(map(str, FRAME_COUNTS)))
    p.add_argument("--start", type=int, default=0, help="track frame holding the a priori model")
    p.add_argument("--init", choices=INIT_MODES, default="ray")
    p.add_argument("--truth-dir", help="truth/frame_i.csv world points for an RMS report")
    p.add_argument("--view", help="view label in the report (default: gantry file stem)")
    p.set_defaults(func=cmd_monoplane)

    p = sub.add_parser("report", parents=[common], help="merge reports or run the full sweep")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--noise-mm", type=float, default=2.0)
    p.add_argument("--noise-scope", choices=NOISE_SCOPES, default="apriori")
    p.add_argument("--dz-init", default=",".join(map(str, DZ_VALUES)))
    p.add_argument("--frames", default=",".join(map(str, FRAME_COUNTS)))
    p.add_argument("--init", choices=INIT_MODES, default="ray")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fuse", parents=[common], help="overlay activation map on a frame")
    p.add_argument("--activation", required=True)
    p.add_argument("--gantry", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--palette", choices=PALETTES, default="bluered")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("lat", parents=[common], help="local activation times from electrograms")
    p.add_argument("--ref", required=True)
    p.add_argument("--map", required=True, nargs="+")
    p.add_argument("--positions", help="site points CSV; writes activation.csv")
    p.set_defaults(func=cmd_lat)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (Catheter3DError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

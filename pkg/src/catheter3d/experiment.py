"""The helix sweep: monoplane accuracy against initial depth guess and
number of frames, for both views, averaged over noise seeds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Extrinsics, ProjectionMatrix, full_projection
from .reconstruct import AprioriModel, LmOptions, monoplane_reconstruct, to_camera_frame, triangulate
from .simulate import HelixSpec, RigidMotion, SyntheticSequence, generate_sequence

DZ_VALUES = (0, 1, 2, 3, 4, 5)
FRAME_COUNTS = (3, 4, 5, 6)


@dataclass(frozen=True)
class ViewProblem:
    """One view's monoplane problem, expressed in that camera's frame."""

    view: str
    apriori: AprioriModel
    track: np.ndarray
    P: ProjectionMatrix
    truth: np.ndarray


def biplane_apriori(seq: SyntheticSequence, frame: int = 0) -> np.ndarray:
    """World coordinates triangulated from both views at ``frame``."""
    ga, gb = seq.gantries
    tri = triangulate(ga.projection(), gb.projection(), seq.frames[frame].tracks[ga.name],
                      seq.frames[frame].tracks[gb.name])
    return tri.points


def view_problems(seq: SyntheticSequence) -> list[ViewProblem]:
    world0 = biplane_apriori(seq)
    truth_world = seq.truth()
    out = []
    for g in seq.gantries:
        extr = g.extrinsics
        P = full_projection(g.intrinsics, Extrinsics.identity())
        out.append(ViewProblem(
            g.name,
            AprioriModel(to_camera_frame(world0, extr)),
            seq.track(g.name),
            P,
            to_camera_frame(truth_world, extr),
        ))
    return out


def sweep(seeds=range(20), dz_values=DZ_VALUES, frame_counts=FRAME_COUNTS, noise_mm: float = 2.0,
          spec: HelixSpec = HelixSpec(), motion: RigidMotion = RigidMotion(),
          opts: LmOptions = LmOptions(), init: str = "ray", noise_scope: str = "apriori") -> list[dict]:
    """Report rows averaged over ``seeds``, ordered by ``(dz_init, n_images, view)``."""
    n_max = max(frame_counts)
    acc: dict[tuple, list] = {}
    for seed in seeds:
        seq = generate_sequence(spec, motion, n_frames=n_max, noise_mm=noise_mm, seed=int(seed),
                                 noise_scope=noise_scope)
        for prob in view_problems(seq):
            for dz in dz_values:
                for n in frame_counts:
                    sol = monoplane_reconstruct(prob.apriori, prob.track[:n], prob.P, dz, opts, init=init,
                                                truth=prob.truth[:n])
                    acc.setdefault((dz, n, prob.view), []).append(sol.rms.as_row())
    rows = []
    for (dz, n, view), vals in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        m = np.mean(vals, axis=0)
        rows.append({"dz_init": dz, "n_images": n, "view": view, "mean": m[0], "min": m[1], "max": m[2],
                     "rms_accumulated": m[3]})
    return rows

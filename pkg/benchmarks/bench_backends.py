#!/usr/bin/env python3
"""Compare the numba kernels with their numpy fallbacks.

Benchmarks:
 - Perona-Malik diffusion on a 512x512 frame
 - 8-connected labeling of a thresholded frame
 - monoplane Levenberg-Marquardt for 30 electrodes, 6 frames

Usage:
  python benchmarks/bench_backends.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from catheter3d import kernels
from catheter3d.experiment import view_problems
from catheter3d.reconstruct import LmOptions, _solve_numpy, init_displacements, measured_distances
from catheter3d.simulate import generate_sequence, render_frame


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    tracks = rng.uniform(40, 470, size=(12, 2))
    img = render_frame(tracks, seed=0)
    mask = img < 0.5

    seq = generate_sequence(noise_mm=2.0, seed=0)
    prob = view_problems(seq)[0]
    x0 = init_displacements(prob.track, prob.apriori, prob.P, 1.0, "ray")
    x0 = x0 + 0.3  # start off the solution so the solver has work to do
    dm = measured_distances(prob.track)
    opts = LmOptions()

    cases = [
        ("perona_malik 512x512 x15",
         lambda: kernels.perona_malik_numba(img, 0.3, 0.2, 15),
         lambda: kernels.perona_malik_numpy(img, 0.3, 0.2, 15)),
        ("label8 512x512",
         lambda: kernels.label8_numba(mask),
         lambda: kernels.label8_numpy(mask)),
        ("monoplane LM 30 el x 6 frames",
         lambda: kernels.lm_monoplane_numba(prob.apriori.points0, prob.track, dm, prob.P.M, x0, opts),
         lambda: _solve_numpy(prob.apriori.points0, prob.track, dm, prob.P.M, x0, opts)),
    ]
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in cases:
        tn = best_of(fast, args.repeat)
        tp = best_of(slow, args.repeat)
        print(f"{name:34s} {tn * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()

"""Time the numba and numpy paths of the two hot kernels on a noisy cube.

    python benchmarks/bench_kernels.py [--n 10000] [--repeat 3]

Run with FPNORMAL_DISABLE_NUMBA=1 to time only the numpy path.
"""
import argparse
import time

import numpy as np

from fpnormal import _accel
from fpnormal.dataset import make_cloud
from fpnormal.filtering import FilterConfig, position_update
from fpnormal.geometry import SpatialIndex, average_spacing, covariances, frames_from_covariances, pca_normals
from fpnormal.ground_truth import cube_mesh
from fpnormal.heightmap import height_maps


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    _, pts, _ = make_cloud(cube_mesh(), args.n, 0.01, seed=1)
    r_avg = average_spacing(pts)
    params = FilterConfig().params(r_avg)
    index = SpatialIndex(pts)
    indptr, indices = index.radius_csr(pts, params.r)
    axes, _, _ = frames_from_covariances(covariances(pts, pts, indptr, indices))
    normals = pca_normals(pts, params.r, index)
    print("points %d, patch radius %.4g, mean patch size %.1f" % (len(pts), params.r, np.diff(indptr).mean()))

    backends = ["numpy"] + (["numba"] if _accel.use_numba() else [])
    kernels = {
        "height_maps": lambda b: height_maps(pts, pts, axes, indptr, indices, params, backend=b),
        "position_update": lambda b: position_update(pts, normals, csr=(indptr, indices), backend=b),
    }
    for name, run in kernels.items():
        results = {}
        for b in backends:
            if b == "numba":
                run(b)  # compile outside the timed region
            results[b] = best_of(lambda: run(b), args.repeat)
        line = "%-16s" % name + "".join("  %s %8.3f s" % (b, t) for b, (t, _) in results.items())
        if len(results) == 2:
            diff = np.max(np.abs(results["numpy"][1] - results["numba"][1]))
            line += "  speedup %5.1fx  max|diff| %.1e" % (results["numpy"][0] / results["numba"][0], diff)
        print(line)


if __name__ == "__main__":
    main()

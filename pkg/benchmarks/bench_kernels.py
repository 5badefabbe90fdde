"""Time the compiled and pure-Python kernel backends on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from conveyor_grasp.geometry import Pose
from conveyor_grasp.kernels import SpatialGrid, backend_module
from conveyor_grasp.modeldb import default_catalog
from conveyor_grasp.perception import CameraSpec, default_global_camera, render
from conveyor_grasp.registration import RegParams, register
from conveyor_grasp.sim_world import Scenario, generate_scenario


def _cases():
    world = generate_scenario(Scenario("P3", "C2", "A4"))
    cam = default_global_camera()
    spec = CameraSpec()
    rng = np.random.default_rng(0)
    ref = rng.normal(0, 0.1, size=(20_000, 3))
    queries = rng.normal(0, 0.12, size=(20_000, 3))
    grid = SpatialGrid(ref, 0.005)
    model = default_catalog().model("010_l_bracket").surface.points
    scene = Pose.from_axis_angle([1, 2, 0], 0.8, t=[0.2, 0.1, 0.0]).apply(model)[::2]
    params = RegParams(seed=4, ransac_iterations=1000)
    return {
        "render_depth": lambda b: render(world, cam, spec, backend=b),
        "nn_query": lambda b: grid.query(queries, 0.02, backend=b),
        "register": lambda b: register(model, scene, params, backend=b),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)
    try:
        backend_module("cython")
        backends = ("python", "cython")
    except ImportError:
        print("compiled kernels unavailable; timing the pure-Python backend only", file=sys.stderr)
        backends = ("python",)
    results = {}
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + ("     speed-up" if len(backends) == 2 else ""))
    for name, fn in _cases().items():
        fn(backends[0])  # warm caches shared by both backends
        best = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends}
        results[name] = best
        line = f"{name:<14}" + "".join(f"{1e3 * best[b]:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{best['python'] / best['cython']:>12.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

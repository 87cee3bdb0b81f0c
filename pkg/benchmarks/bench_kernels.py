"""Time the hot kernels under numba and under the plain-numpy fallback.

    python benchmarks/bench_kernels.py            # both backends, side by side
    python benchmarks/bench_kernels.py --single   # current backend only, JSON

The fallback is measured in a child process with BUMPERCAR_NO_NUMBA=1 because
the backend is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit


def _cases():
    from bumpercar.estimator import run_filter
    from bumpercar.harness import KinematicPredictor, NePredictor, generate_dataset, rich_profile, split_dataset
    from bumpercar.ident_ga import PairData, ga_fitness
    from bumpercar.ident_sindy import appendix_d_reference
    from bumpercar.params import NeParams

    data = generate_dataset(rich_profile(600.0, seed=11))
    _, val = split_dataset(data)
    val = val.with_(meta={**val.meta, "bounce": []})
    raw = data.slice(0, 1200).with_(velocities=None, kin_states=None)
    pairs = PairData.from_trajectory(data)
    ne, ks = NePredictor(), KinematicPredictor(appendix_d_reference(), "K-SINDy")
    p = NeParams()
    return {
        "ne rollout, 1100 steps": lambda: ne.run(val),
        "k-sindy rollout, 1100 steps": lambda: ks.run(val),
        "ga fitness, 6000 pairs": lambda: ga_fitness(p, pairs),
        "ekf pass, 1200 samples": lambda: run_filter(raw),
        "generate 60 s": lambda: generate_dataset(rich_profile(60.0, seed=2)),
    }


def measure(repeat):
    from bumpercar._accel import backend_name

    out = {}
    for name, fn in _cases().items():
        fn()  # warm-up, includes JIT compilation or cache load
        n = 3 if backend_name() == "numba" else 1
        out[name] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n * 1e3
    return backend_name(), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--single", action="store_true", help="measure the current backend only and print JSON")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if args.single:
        backend, times = measure(args.repeat)
        print(json.dumps({"backend": backend, "ms": times}))
        return 0
    backend, fast = measure(args.repeat)
    env = {**os.environ, "BUMPERCAR_NO_NUMBA": "1"}
    child = subprocess.run([sys.executable, __file__, "--single", "--repeat", str(args.repeat)], env=env,
                           check=True, capture_output=True, text=True)
    slow = json.loads(child.stdout.strip().splitlines()[-1])["ms"]
    width = max(map(len, fast))
    print(f"{'kernel':<{width}}  {backend + ' ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name, t in fast.items():
        print(f"{name:<{width}}  {t:10.2f}  {slow[name]:10.2f}  {slow[name] / t:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Compare the compiled and pure-Python forest backends.

Both backends grow the same trees from the same seed, so the benchmark also
checks that their predictions agree bit for bit.

    python3 benchmarks/bench_forest.py --n 1000 --trees 100 --repeat 3
"""

import argparse
import statistics
import sys
import time

import numpy as np

from geoharvest.model import forest
from geoharvest.model.features import FeatureSchema
from geoharvest.model.forest import ForestParams, fit_random_forest
from geoharvest.sitegen import SyntheticSiteSpec, synthetic_rows


def time_backend(backend, train, test, schema, params, seed, repeat):
    fit_s, pred_s = [], []
    model = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        model = fit_random_forest(train, params, seed=seed, schema=schema, backend=backend)
        t1 = time.perf_counter()
        pred = model.predict(test)
        t2 = time.perf_counter()
        fit_s.append(t1 - t0)
        pred_s.append(t2 - t1)
    return statistics.median(fit_s), statistics.median(pred_s), pred


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, default=1000, help="training rows")
    ap.add_argument("--test", type=int, default=2000, help="prediction rows")
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3, help="runs per backend; the median is reported")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    if forest._core is None:
        print("compiled backend not built; nothing to compare (build with: pip install -e . --no-build-isolation)")
        return 1

    rows = synthetic_rows(SyntheticSiteSpec(n_listings=args.n + args.test, seed=args.seed))
    train, test = rows[:args.n], rows[args.n:]
    schema = FeatureSchema.extended_for(rows)
    params = ForestParams(n_trees=args.trees)

    results = {}
    for backend in ("cython", "python"):
        results[backend] = time_backend(backend, train, test, schema, params, args.seed, args.repeat)

    print(f"forest benchmark: {args.n} training rows, {args.test} prediction rows, {args.trees} trees, "
          f"{len(schema.columns)} features, median of {args.repeat}")
    print(f"{'backend':<8} {'fit s':>9} {'predict s':>10}")
    for backend, (fit_s, pred_s, _) in results.items():
        print(f"{backend:<8} {fit_s:>9.3f} {pred_s:>10.3f}")
    c, p = results["cython"], results["python"]
    print(f"speed-up (python / cython): fit {p[0] / c[0]:.1f}x, predict {p[1] / c[1]:.1f}x")
    same = np.array_equal(c[2], p[2])
    print(f"predictions identical: {same}")
    return 0 if same else 2


if __name__ == "__main__":
    sys.exit(main())

"""Wall time of full-graph replicator dynamics against the localized solver.

Writes one CSV row per instance (ratio = full / fast) and prints the
per-size median ratio to stderr.

    python3 scripts/solver_speedup.py --sizes 100,500,1000,2000 --instances 3 > speedup.csv
"""
import argparse
import sys

from cdstrack.bench import BENCH_SIZES, rows_to_csv, run_speedup, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default=",".join(map(str, BENCH_SIZES)))
    ap.add_argument("--instances", type=int, default=3)
    ap.add_argument("--density", type=float, default=0.01)
    ap.add_argument("--alpha", choices=("exact", "fast"), default="fast")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run_speedup(sizes, args.instances, args.density, args.alpha, args.seed,
                       progress=lambda r: print(f"n={r.n} #{r.instance} ratio {r.ratio:.1f}", file=sys.stderr))
    sys.stdout.write(rows_to_csv(rows))
    for n, s in summarize(rows).items():
        print(f"n={n}: median ratio {s['median_ratio']:.1f}, "
              f"max objective gap {s['max_objective_gap']:.1e}", file=sys.stderr)


if __name__ == "__main__":
    main()

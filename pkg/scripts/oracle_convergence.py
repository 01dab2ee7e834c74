"""Point-particle engine against the classical oracle for lambda z^3 in desk units.

Prints, for each target epsilon, the residual of the first- and second-order
results relative to epsilon |phi1|.
"""
import argparse

from aiphase.acceptance import classical_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-6, 1e-5, 1e-4, 1e-3])
    ap.add_argument("--steps", type=int, default=4000, help="RK4 steps per segment")
    args = ap.parse_args()
    rows = classical_sweep(tuple(args.eps), args.steps)
    print(f"{'eps':>9} {'phi1':>12} {'res 1st':>10} {'res 2nd':>10} {'res1/(eps phi1)':>16} "
          f"{'oracle err':>10}")
    for r in rows:
        scaled = r["residual_first"] / (r["epsilon"] * abs(r["phi1"]))
        print(f"{r['epsilon']:9.2e} {r['phi1']:12.4e} {r['residual_first']:10.2e} "
              f"{r['residual_second']:10.2e} {scaled:16.3f} {r['oracle_error']:10.1e}")


if __name__ == "__main__":
    main()

"""Tabulate the cubic gravity-gradient corrections against the pulse separation T.

Writes a CSV (default: gradient_time_sweep.csv) with one row per T and prints the
ratio of the wave-packet term to the classical term.
"""
import argparse

import numpy as np

from aiphase import cli, config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", default="gradient_time_sweep.csv")
    ap.add_argument("--tmin", type=float, default=0.1)
    ap.add_argument("--tmax", type=float, default=2.0)
    ap.add_argument("-n", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    sc = config.load("gradient_time_sweep")
    values = np.linspace(args.tmin, args.tmax, args.n)
    text = cli.sweep(sc, "geometry.T_s", values, args.workers)
    with open(args.output, "w") as fh:
        fh.write(text)
    rows = [ln.split(",") for ln in text.splitlines()[1:]]
    print(f"{'T [s]':>8} {'phi1 classical':>16} {'phi1 wave packet':>18} {'ratio':>10}")
    for r in rows:
        cl, wp = float(r[2]), float(r[3])
        print(f"{float(r[0]):8.3f} {cl:16.6e} {wp:18.6e} {abs(wp / cl):10.2e}")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()

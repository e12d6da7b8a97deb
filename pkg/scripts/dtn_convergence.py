"""Flux coefficients of cos(n theta) on concentric disks against the closed form."""
import argparse

from electroperm.oracles import dtn_table, observed_order


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--modes", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--h", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    args = ap.parse_args()
    rows = dtn_table(args.modes, tuple(args.h))
    print(f"{'h':>8} {'n':>3} {'exact':>14} {'fem':>14} {'err':>10}")
    for r in rows:
        print(f"{r.h:8.4f} {r.n:3d} {r.exact:14.8f} {r.fem:14.8f} {r.err:10.2e}")
    for n in args.modes:
        if n == 0 or len(args.h) < 2:
            continue
        sel = [r for r in rows if r.n == n]
        print(f"mode {n}: observed order {observed_order([r.h for r in sel], [r.err for r in sel]):.3f}")


if __name__ == "__main__":
    main()

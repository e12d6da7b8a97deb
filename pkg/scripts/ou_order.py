"""Strong order of the v-update on the decoupled Ornstein-Uhlenbeck problem."""
import argparse

from electroperm.oracles import ou_strong_order

ap = argparse.ArgumentParser()
ap.add_argument("--levels", type=int, default=5)
ap.add_argument("--paths", type=int, default=4000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

res = ou_strong_order(levels=args.levels, n_paths=args.paths, seed=args.seed)
for dt, e in zip(res.dts, res.errors):
    print(f"dt={dt:.6f}  rms error={e:.4e}")
print(f"fitted order {res.order:.3f}")

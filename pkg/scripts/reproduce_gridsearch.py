"""Default 20x20x20 encoding sweep; reports where (70mV, 50mV, 3ms) ranks."""

import argparse
import sys

from memrc.device import standard_bank
from memrc.reservoir import ReservoirConfig
from memrc.search import GridSpec, evaluate_cell, grid_search
from memrc.tasks import gen_sonds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--points", type=int, default=20, help="points per axis")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--csv", default=None, help="write the ranked grid here")
    args = ap.parse_args()
    cfg = ReservoirConfig(standard_bank())
    train, test = gen_sonds(seed=args.seed)
    spec = GridSpec.default(args.points, args.points, args.points)
    rep = grid_search(cfg, spec, train, test, workers=args.workers,
                      progress=lambda i, n: print(f"\rslice {i}/{n}", end="", file=sys.stderr))
    print(file=sys.stderr)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(rep.to_csv())
    b = rep.best
    print(f"cells={len(rep.results)} failures={len(rep.failures)}")
    print(f"best gamma={b.gamma * 1e3:.1f}mV delta={b.delta * 1e3:.1f}mV dt={b.dt_hold * 1e3:.2f}ms "
          f"nmse_test={b.nmse_test:.3e}")
    cell = evaluate_cell(cfg, train, test, 0.070, 0.050, 3e-3)
    print(f"(70mV, 50mV, 3ms) nmse_test={cell.nmse_test:.3e}, beaten by {rep.percentile_of(cell.nmse_test):.1%} of cells")


if __name__ == "__main__":
    main()

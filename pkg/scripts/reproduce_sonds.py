"""SONDS benchmark: 5-device bank across seeds, plus the 1-device baseline."""

import argparse

from memrc.device import load_presets, standard_bank
from memrc.pipelines import sonds_experiment
from memrc.reservoir import ReservoirConfig
from memrc.tasks import EncodingParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", type=float, default=0.160, help="volts")
    ap.add_argument("--delta", type=float, default=0.090, help="volts")
    ap.add_argument("--dt-hold", type=float, default=3e-3, help="seconds")
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    enc = EncodingParams(args.gamma, args.delta, args.dt_hold)
    five = ReservoirConfig(standard_bank())
    one = ReservoirConfig([load_presets()["3.0uM"]])
    print(f"encoding gamma={args.gamma * 1e3:g}mV delta={args.delta * 1e3:g}mV dt={args.dt_hold * 1e3:g}ms")
    print("seed  nmse_test(5 dev)  nmse_test(3.0uM)  ratio")
    for seed in range(args.seeds):
        a = sonds_experiment(five, enc, seed).nmse_test
        b = sonds_experiment(one, enc, seed).nmse_test
        print(f"{seed:4d}  {a:16.3e}  {b:16.3e}  {a / b:5.2f}")


if __name__ == "__main__":
    main()

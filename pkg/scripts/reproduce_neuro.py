"""Neural-activity classification with three offset-biased 3.0 uM devices."""

import argparse

from memrc.device import load_presets
from memrc.pipelines import neuro_features, neuro_readout
from memrc.readout import TrainConfig
from memrc.reservoir import ReservoirConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--norm", default="log-zscore", choices=["none", "zscore", "max", "log-zscore"])
    ap.add_argument("--kernel", type=int, default=9)
    args = ap.parse_args()
    offsets = (0.085, 0.090, 0.095)
    p = load_presets()["3.0uM"]
    feats = neuro_features(ReservoirConfig([p] * 3, offsets), args.seed, norm=args.norm)
    for arch in ("fc", "convfc"):
        res = neuro_readout(feats, arch, args.kernel, TrainConfig(seed=args.seed))
        print(f"{arch:7s} params={res.model.n_params:5d} test={res.test_accuracy:.2%} train={res.train_accuracy:.2%}")
        print(res.confusion)
    # each device alone, to show what diversity buys
    for off in offsets:
        single = neuro_features(ReservoirConfig([p], (off,)), args.seed, norm=args.norm)
        res = neuro_readout(single, "convfc", min(args.kernel, 20), TrainConfig(seed=args.seed))
        print(f"single device @ {off * 1e3:g}mV: convfc test={res.test_accuracy:.2%}")


if __name__ == "__main__":
    main()

"""PPF table and characterize->fit round trip for every bundled preset."""

import argparse

from memrc.characterize import fit_device, ppf, synthetic_traces
from memrc.device import STANDARD_BANK, NoiseSpec, load_presets

FIELDS = ("n0", "ve", "tau01", "vtau1", "tau02", "vtau2", "vt")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--noise", type=float, default=0.8e-9, help="current noise RMS in amperes")
    args = ap.parse_args()
    presets = load_presets()
    print("PPF % at 170 mV, ipi 5 ms")
    for k in STANDARD_BANK:
        a = ppf(presets[k], pw=5e-3).ppf_percent
        b = ppf(presets[k], pw=20e-3).ppf_percent
        print(f"  {k:6s} pw=5ms {a:7.2f}   pw=20ms {b:7.2f}")
    print("fit relative error (noiseless | noisy)")
    for k in STANDARD_BANK:
        p = presets[k]
        clean = fit_device(*synthetic_traces(p), g_scale=p.g_scale).params
        noise = NoiseSpec(args.noise, seed=0)
        noisy = fit_device(*synthetic_traces(p, noise), g_scale=p.g_scale, noise_rms=args.noise).params
        row = " ".join(f"{f}={abs(getattr(clean, f) / getattr(p, f) - 1):.1%}" for f in FIELDS)
        print(f"  {k:6s} {row} | ve={abs(noisy.ve / p.ve - 1):.1%} tau01={abs(noisy.tau01 / p.tau01 - 1):.1%}")


if __name__ == "__main__":
    main()

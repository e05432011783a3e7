"""Coherence time versus number of refocusing pulses for 1/f^alpha noise.

For each alpha the noise amplitude is calibrated to the single-echo T2, then
T2(n) is extracted from the decay envelope and fitted to T2 ~ n^gamma.
"""

import argparse
import csv
from pathlib import Path

from quadtune.dynamics import NoiseModel, calibrate_amplitude, t2_versus_pulses
from quadtune.estimator import fit_scaling


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", nargs="+", default=["1:44e-3", "4:3.7e-3"],
                    help="alpha:T2 pairs, T2 in seconds for the single-pulse echo")
    ap.add_argument("--pulses", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    ap.add_argument("--low-cutoff", type=float, default=0.01, help="Hz")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(exist_ok=True)
    rows = []
    for case in args.cases:
        alpha, T2 = (float(x) for x in case.split(":"))
        noise = calibrate_amplitude(NoiseModel(alpha, 1.0, low_cutoff=2 * 3.141592653589793 * args.low_cutoff), T2)
        res = t2_versus_pulses(noise, args.pulses, guess=T2)
        fit = fit_scaling([(n, t2) for n, t2, _, _ in res])
        gamma = fit.estimates["exponent"]
        print(f"alpha = {alpha:g}: exponent {gamma:.3f} +- {fit.sigmas['exponent']:.3f}")
        for n, t2, _, _ in res:
            print(f"  n = {n:3d}  T2 = {t2 * 1e3:9.3f} ms")
            rows.append((alpha, n, t2, gamma))

    with open(out / "decay_scaling.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "n", "T2_s", "exponent"])
        w.writerows(rows)
    print(f"wrote {out / 'decay_scaling.csv'}")


if __name__ == "__main__":
    main()

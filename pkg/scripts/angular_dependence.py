"""Exact vs perturbative transition shifts versus field angle for several f_Q/f0 ratios.

Writes results/angular_dependence.csv and prints the worst residuals and the
zero crossings of the satellite splitting and the inner line.
"""

import argparse
import csv
import math
import warnings
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from quadtune.spincore import (PerturbationWarning, axial_hamiltonian, perturbative_shift_first,
                               perturbative_shift_second, transition_frequencies)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--f0", type=float, default=2.55e6)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.01, 0.05, 0.1])
    ap.add_argument("--points", type=int, default=181)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(exist_ok=True)
    thetas = np.radians(np.linspace(0, 90, args.points))
    rows = []
    warnings.simplefilter("ignore", PerturbationWarning)
    for ratio in args.ratios:
        f_Q = ratio * args.f0
        worst1 = worst2 = 0.0
        for th in thetas:
            for t in transition_frequencies(axial_hamiltonian(1.5, args.f0, f_Q, th)):
                exact = t.frequency - args.f0
                p1 = perturbative_shift_first(f_Q, th, t.m_hi)
                p2 = p1 + perturbative_shift_second(f_Q, args.f0, th, t.m_hi)
                worst1 = max(worst1, abs(exact - p1) / (f_Q ** 2 / args.f0))
                worst2 = max(worst2, abs(exact - p2) / (f_Q ** 3 / args.f0 ** 2))
                rows.append((ratio, math.degrees(th), t.label, exact, p1, p2))

        def split(th):
            t = transition_frequencies(axial_hamiltonian(1.5, args.f0, f_Q, th))
            return t.by_label("outer-").frequency - t.by_label("outer+").frequency

        def inner(th):
            return transition_frequencies(axial_hamiltonian(1.5, args.f0, f_Q, th)).by_label("inner").frequency - args.f0

        magic = math.degrees(brentq(split, 0.8, 1.1, xtol=1e-14))
        zero = math.degrees(brentq(inner, 1.0, 1.4, xtol=1e-14))
        print(f"f_Q/f0 = {ratio:g}: max|exact - 1st| = {worst1:.3f} f_Q^2/f0, "
              f"max|exact - 2nd| = {worst2:.3f} f_Q^3/f0^2, splitting zero {magic:.5f} deg, "
              f"inner zero {zero:.4f} deg")

    with open(out / "angular_dependence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ratio", "theta_deg", "transition", "exact_Hz", "first_order_Hz", "second_order_Hz"])
        w.writerows(rows)
    print(f"wrote {out / 'angular_dependence.csv'}")


if __name__ == "__main__":
    main()

"""Thermal-strain couplings for both stack orientations and the piezo tuning forecast.

Prints eps_perp and f_Q for the (100) and (111) stacks, the S44 implied by a
measured (111) coupling, and the outer-line shift versus applied strain.
"""

import argparse

import numpy as np

from quadtune.strainmap import (REFERENCE_S, biaxial_thermal_strain, coupling_fq, efg_from_strain, extract_S,
                                piezo_shift_forecast)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps-par", type=float, default=-3.8e-4)
    ap.add_argument("--measured-111", type=float, default=255e3, help="measured (111) f_Q in Hz")
    ap.add_argument("--perp-model", default="equal-100", choices=["elastic", "equal-100"])
    ap.add_argument("--max-strain", type=float, default=5e-5)
    args = ap.parse_args()

    e100 = biaxial_thermal_strain(args.eps_par, "100")
    e111 = biaxial_thermal_strain(args.eps_par, "111", perp_model=args.perp_model)
    f100 = coupling_fq(efg_from_strain(e100, REFERENCE_S)).f_Q
    f111 = coupling_fq(efg_from_strain(e111, REFERENCE_S)).f_Q
    print(f"eps_perp (100) = {e100.matrix[2, 2]:.4e}")
    print(f"f_Q (100) = {f100 / 1e3:.2f} kHz, f_Q (111) = {f111 / 1e3:.2f} kHz")
    S11, S44 = extract_S(f100, args.measured_111, e100, e111)
    print(f"S from measured couplings: S11 = {S11:.4e} V/m^2, S44 = {S44:.4e} V/m^2")
    print("applied strain    outer-line shift")
    for eps in np.linspace(0, args.max_strain, 6):
        shift = piezo_shift_forecast(eps, REFERENCE_S, "stack-111")
        print(f"  {eps:10.2e}    {shift / 1e3:8.2f} kHz")


if __name__ == "__main__":
    main()

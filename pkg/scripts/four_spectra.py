"""ENDOR spectra for the four ionization targets, unstrained and on the strained (111) stack.

Writes one CSV per spectrum and prints the dip positions.
"""

import argparse
import csv
from pathlib import Path

from quadtune.endor import EndorConfig, peak_positions, synthesize_four_spectra
from quadtune.spincore import ARSENIC_75, FieldConfig
from quadtune.strainmap import REFERENCE_S, STACK_NORMALS, biaxial_thermal_strain, efg_from_strain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--B0", type=float, default=0.35, help="tesla")
    ap.add_argument("--points", type=int, default=500)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(exist_ok=True)
    efg = efg_from_strain(biaxial_thermal_strain(-3.8e-4, "111", perp_model="equal-100"), REFERENCE_S)
    cases = {
        "unstrained": (FieldConfig(args.B0), None),
        "stack111": (FieldConfig(args.B0, tuple(STACK_NORMALS["111"])), efg),
    }
    for name, (field, tensor) in cases.items():
        spectra = synthesize_four_spectra(EndorConfig(), ARSENIC_75, field, tensor, n_points=args.points)
        for k, spec in enumerate(spectra):
            dips = ", ".join(f"{p.center / 1e6:.5f}" for p in peak_positions(spec))
            print(f"{name:10s} target {k}: dips at {dips} MHz")
            with open(out / f"spectrum_{name}_{k}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["frequency_Hz", "signal"])
                w.writerows(zip(spec.frequency, spec.signal))
    print(f"wrote spectra to {out}")


if __name__ == "__main__":
    main()

"""Regenerate golden geometry summaries (edge/plaquette counts and a digest of
the incidence tables) for small lattices."""

import argparse
import json

from ymlattice.lattice import LatticeGeometry, geometry_summary

CASES = [(2, 1), (2, 2), (3, 1), (4, 1)]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="tests/fixtures/geometry_golden.json")
    a = ap.parse_args()
    out = {f"d{d}_L{L}": geometry_summary(LatticeGeometry(d, L)) for d, L in CASES}
    with open(a.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print({k: (v["edges"], v["plaquettes"]) for k, v in out.items()})

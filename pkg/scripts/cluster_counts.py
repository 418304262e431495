"""Regenerate the cluster-count regression fixture: clusters anchored at one
interior edge of a d=2 lattice, sizes 0..4, against the e^{2d} 40^{md} bound."""

import argparse
import json
import math
import time

from ymlattice.lattice import EdgeRef, LatticeGeometry, enumerate_clusters


def counts(L: int, m_max: int) -> dict:
    geom = LatticeGeometry(2, L)
    seed = geom.edge_index(EdgeRef((0, 0), 0))
    levels = enumerate_clusters(geom, [seed], m_max)
    return {"d": 2, "L": L, "seed_edge": [[0, 0], 0], "m_max": m_max,
            "counts": [len(levels[m]) for m in range(m_max + 1)],
            "bounds": [math.exp(4) * 40.0 ** (2 * m) for m in range(m_max + 1)]}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=5)
    ap.add_argument("--m-max", type=int, default=4)
    ap.add_argument("--out", default="tests/fixtures/cluster_counts_d2.json")
    a = ap.parse_args()
    t = time.time()
    res = counts(a.L, a.m_max)
    with open(a.out, "w") as fh:
        json.dump(res, fh, indent=2)
        fh.write("\n")
    print(json.dumps(res["counts"]), f"{time.time() - t:.2f}s")

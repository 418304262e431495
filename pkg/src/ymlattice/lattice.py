"""Finite hypercubic lattice geometry with free boundary conditions.

Vertices live on an integer box ``lo <= x <= hi`` (the symmetric cube
``[-L, L]^d`` by default). Positive edges point along +axis; positive
plaquettes are spanned by an axis pair ``a < b`` and traversed
``+a, +b, -a, -b`` from their base vertex, so the orientation signs of the
four traversal edges are ``(+1, +1, -1, -1)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

GEOMETRY_VERSION = "ymlattice-geometry/1"

# sign of each traversal slot of a canonical positive plaquette
PLAQ_SIGNS = np.array([1, 1, -1, -1], dtype=np.int64)


class ClusterBudgetError(RuntimeError):
    """Raised when cluster enumeration would exceed its memory budget."""


@dataclass(frozen=True)
class EdgeRef:
    """Oriented edge. ``base`` is always the lower endpoint along ``axis``."""

    base: tuple[int, ...]
    axis: int
    orientation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(int(x) for x in self.base))
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        if not 0 <= self.axis < len(self.base):
            raise ValueError("axis out of range")

    def inverse(self) -> "EdgeRef":
        return EdgeRef(self.base, self.axis, -self.orientation)

    def positive(self) -> "EdgeRef":
        return EdgeRef(self.base, self.axis, 1)

    def _upper(self) -> tuple[int, ...]:
        v = list(self.base)
        v[self.axis] += 1
        return tuple(v)

    @property
    def tail(self) -> tuple[int, ...]:
        return self.base if self.orientation == 1 else self._upper()

    @property
    def head(self) -> tuple[int, ...]:
        return self._upper() if self.orientation == 1 else self.base


@dataclass(frozen=True)
class PlaquetteRef:
    """Oriented plaquette, optionally rotated so its traversal starts elsewhere."""

    base: tuple[int, ...]
    axes: tuple[int, int]
    orientation: int = 1
    rotation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(int(x) for x in self.base))
        a, b = (int(x) for x in self.axes)
        if not a < b:
            raise ValueError("plaquette axes must satisfy a < b")
        object.__setattr__(self, "axes", (a, b))
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        object.__setattr__(self, "rotation", int(self.rotation) % 4)

    def _canonical(self) -> list[EdgeRef]:
        a, b = self.axes
        va = list(self.base)
        va[a] += 1
        vb = list(self.base)
        vb[b] += 1
        return [
            EdgeRef(self.base, a, 1),
            EdgeRef(tuple(va), b, 1),
            EdgeRef(tuple(vb), a, -1),
            EdgeRef(self.base, b, -1),
        ]

    def edges(self) -> list[EdgeRef]:
        """Ordered traversal e1 e2 e3 e4."""
        c = self._canonical()
        if self.orientation == -1:
            c = [e.inverse() for e in reversed(c)]
        r = self.rotation
        return c[r:] + c[:r]

    def inverse(self) -> "PlaquetteRef":
        # reversed traversal of a rotated loop is a rotation of the reversed loop
        return PlaquetteRef(self.base, self.axes, -self.orientation, (4 - self.rotation) % 4)

    def positive(self) -> "PlaquetteRef":
        return PlaquetteRef(self.base, self.axes, 1, 0)


@dataclass(frozen=True)
class Loop:
    """Closed lattice path e_1 ... e_n."""

    edges: tuple[EdgeRef, ...]

    def __post_init__(self):
        edges = tuple(self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges:
            raise ValueError("empty loop")
        for e1, e2 in zip(edges, edges[1:]):
            if e1.head != e2.tail:
                raise ValueError(f"loop is not head-to-tail at {e1} -> {e2}")
        if edges[-1].head != edges[0].tail:
            raise ValueError("loop does not close")

    def __len__(self):
        return len(self.edges)

    @classmethod
    def from_plaquette(cls, p: PlaquetteRef) -> "Loop":
        return cls(tuple(p.edges()))

    @classmethod
    def rectangle(cls, base: Sequence[int], axes: tuple[int, int], extents: tuple[int, int]) -> "Loop":
        """Counter-clockwise rectangle of size extents[0] x extents[1] in the (a, b) plane."""
        a, b = axes
        wa, wb = extents
        if wa < 1 or wb < 1:
            raise ValueError("rectangle extents must be >= 1")
        out = []
        v = list(base)
        for _ in range(wa):
            out.append(EdgeRef(tuple(v), a, 1))
            v[a] += 1
        for _ in range(wb):
            out.append(EdgeRef(tuple(v), b, 1))
            v[b] += 1
        for _ in range(wa):
            v[a] -= 1
            out.append(EdgeRef(tuple(v), a, -1))
        for _ in range(wb):
            v[b] -= 1
            out.append(EdgeRef(tuple(v), b, -1))
        return cls(tuple(out))


@dataclass(frozen=True)
class ClusterSet:
    """Plaquette set K (positive plaquette indices) anchored to seed edges."""

    plaquettes: frozenset
    seed_edges: frozenset

    def __len__(self):
        return len(self.plaquettes)


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """Free-boundary box lattice. ``LatticeGeometry(d, L)`` is the cube [-L, L]^d."""

    d: int
    L: int
    widths: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("dimension d must be >= 2")
        if self.widths is None:
            if self.L < 1:
                raise ValueError("half-width L must be >= 1 (L = 0 has no edges)")
        else:
            w = tuple(int(x) for x in self.widths)
            if len(w) != self.d or min(w) < 1:
                raise ValueError("box widths must be d positive integers")
            object.__setattr__(self, "widths", w)

    @classmethod
    def box(cls, widths: Sequence[int]) -> "LatticeGeometry":
        """Box with corner at the origin and ``widths[i]`` unit cells along axis i."""
        widths = tuple(int(x) for x in widths)
        return cls(len(widths), max(widths), widths)

    def __eq__(self, other):
        return isinstance(other, LatticeGeometry) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def key(self) -> tuple:
        return (self.d, tuple(self.lo), tuple(self.hi))

    @cached_property
    def lo(self) -> np.ndarray:
        if self.widths is None:
            return np.full(self.d, -self.L, dtype=np.int64)
        return np.zeros(self.d, dtype=np.int64)

    @cached_property
    def hi(self) -> np.ndarray:
        if self.widths is None:
            return np.full(self.d, self.L, dtype=np.int64)
        return np.array(self.widths, dtype=np.int64)

    @cached_property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.hi - self.lo + 1)

    # ---- vertices -------------------------------------------------------
    @cached_property
    def vertex_coords(self) -> np.ndarray:
        grid = np.indices(self.shape).reshape(self.d, -1).T
        return grid + self.lo

    @property
    def n_vertices(self) -> int:
        return int(np.prod(self.shape))

    def vertex_index(self, v: Sequence[int]) -> int:
        v = np.asarray(v, dtype=np.int64)
        if np.any(v < self.lo) or np.any(v > self.hi):
            raise KeyError(f"vertex {tuple(v)} outside lattice")
        return int(np.ravel_multi_index(tuple(v - self.lo), self.shape))

    # ---- edges ----------------------------------------------------------
    @cached_property
    def _edge_tables(self):
        coords = self.vertex_coords
        base, axis = [], []
        eid = np.full((self.n_vertices, self.d), -1, dtype=np.int64)
        for vi in range(self.n_vertices):
            for a in range(self.d):
                if coords[vi, a] < self.hi[a]:
                    eid[vi, a] = len(base)
                    base.append(vi)
                    axis.append(a)
        return np.array(base, dtype=np.int64), np.array(axis, dtype=np.int64), eid

    @property
    def edge_base(self) -> np.ndarray:
        return self._edge_tables[0]

    @property
    def edge_axis(self) -> np.ndarray:
        return self._edge_tables[1]

    @property
    def n_edges(self) -> int:
        return len(self.edge_base)

    def edge_index(self, e: EdgeRef | int) -> int:
        """Index of the positive form of ``e``."""
        if isinstance(e, (int, np.integer)):
            if not 0 <= e < self.n_edges:
                raise KeyError(f"edge index {e} out of range")
            return int(e)
        idx = self._edge_tables[2][self.vertex_index(e.base), e.axis]
        if idx < 0:
            raise KeyError(f"edge {e} outside lattice")
        return int(idx)

    def edge_ref(self, i: int) -> EdgeRef:
        return EdgeRef(tuple(self.vertex_coords[self.edge_base[i]]), int(self.edge_axis[i]), 1)

    @cached_property
    def edge_endpoints(self) -> np.ndarray:
        """(E, 2, d) integer coordinates of the lower and upper endpoint."""
        lo = self.vertex_coords[self.edge_base]
        up = lo.copy()
        up[np.arange(self.n_edges), self.edge_axis] += 1
        return np.stack([lo, up], axis=1)

    # ---- plaquettes -----------------------------------------------------
    @cached_property
    def _plaq_tables(self):
        coords = self.vertex_coords
        eid = self._edge_tables[2]
        stride = np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.d)])
        base, axes, edges = [], [], []
        for vi in range(self.n_vertices):
            for a, b in itertools.combinations(range(self.d), 2):
                if coords[vi, a] < self.hi[a] and coords[vi, b] < self.hi[b]:
                    va, vb = vi + stride[a], vi + stride[b]
                    base.append(vi)
                    axes.append((a, b))
                    edges.append((eid[vi, a], eid[va, b], eid[vb, a], eid[vi, b]))
        return (
            np.array(base, dtype=np.int64),
            np.array(axes, dtype=np.int64).reshape(-1, 2),
            np.array(edges, dtype=np.int64).reshape(-1, 4),
        )

    @property
    def plaq_base(self) -> np.ndarray:
        return self._plaq_tables[0]

    @property
    def plaq_axes(self) -> np.ndarray:
        return self._plaq_tables[1]

    @property
    def plaq_edges(self) -> np.ndarray:
        """(P, 4) positive-edge indices of each canonical traversal."""
        return self._plaq_tables[2]

    @property
    def plaq_signs(self) -> np.ndarray:
        return np.broadcast_to(PLAQ_SIGNS, self.plaq_edges.shape)

    @property
    def n_plaquettes(self) -> int:
        return len(self.plaq_base)

    def plaquette_ref(self, i: int) -> PlaquetteRef:
        return PlaquetteRef(tuple(self.vertex_coords[self.plaq_base[i]]), tuple(self.plaq_axes[i]))

    def plaquette_index(self, p: PlaquetteRef | int) -> int:
        if isinstance(p, (int, np.integer)):
            return int(p)
        lookup = self._plaq_lookup
        key = (self.vertex_index(p.base), p.axes)
        if key not in lookup:
            raise KeyError(f"plaquette {p} outside lattice")
        return lookup[key]

    @cached_property
    def _plaq_lookup(self) -> dict:
        return {(int(b), (int(ax[0]), int(ax[1]))): i
                for i, (b, ax) in enumerate(zip(self.plaq_base, self.plaq_axes))}

    @cached_property
    def _incidence(self):
        deg = np.zeros(self.n_edges, dtype=np.int64)
        for e in self.plaq_edges.ravel():
            deg[e] += 1
        width = max(1, int(deg.max()) if self.n_plaquettes else 1)
        ep = np.full((self.n_edges, width), -1, dtype=np.int64)
        es = np.full((self.n_edges, width), -1, dtype=np.int64)
        fill = np.zeros(self.n_edges, dtype=np.int64)
        for p, row in enumerate(self.plaq_edges):
            for slot, e in enumerate(row):
                ep[e, fill[e]] = p
                es[e, fill[e]] = slot
                fill[e] += 1
        return ep, es

    @property
    def edge_plaq(self) -> np.ndarray:
        """(E, k) plaquettes incident to each edge, padded with -1."""
        return self._incidence[0]

    @property
    def edge_slot(self) -> np.ndarray:
        """Traversal slot (0..3) of the edge inside the matching ``edge_plaq`` entry."""
        return self._incidence[1]

    def plaquette_adjacency(self) -> list[set]:
        """Plaquettes sharing at least one edge."""
        adj = [set() for _ in range(self.n_plaquettes)]
        for row in self.edge_plaq:
            ps = [int(p) for p in row if p >= 0]
            for p in ps:
                adj[p].update(q for q in ps if q != p)
        return adj

    def sign_matrix(self) -> np.ndarray:
        """(P, E) dense table of sgn(e, p) for positive e and positive p."""
        s = np.zeros((self.n_plaquettes, self.n_edges), dtype=np.int64)
        rows = np.repeat(np.arange(self.n_plaquettes), 4)
        s[rows, self.plaq_edges.ravel()] = np.tile(PLAQ_SIGNS, self.n_plaquettes)
        return s


# ---------------------------------------------------------------------------
# operations

def expected_counts(d: int, L: int) -> dict:
    """Closed-form vertex/edge/plaquette counts of the cube [-L, L]^d."""
    n = 2 * L + 1
    return {
        "vertices": n ** d,
        "edges": d * 2 * L * n ** (d - 1),
        "plaquettes": (d * (d - 1) // 2) * (2 * L) ** 2 * n ** (d - 2),
    }


def enumerate_edges(geom: LatticeGeometry) -> list[EdgeRef]:
    return [geom.edge_ref(i) for i in range(geom.n_edges)]


def enumerate_plaquettes(geom: LatticeGeometry) -> list[PlaquetteRef]:
    return [geom.plaquette_ref(i) for i in range(geom.n_plaquettes)]


def sgn(e: EdgeRef, p: PlaquetteRef) -> int:
    """+1 if e is traversed by p, -1 if e^{-1} is, 0 otherwise."""
    inv = e.inverse()
    for t in p.edges():
        if t == e:
            return 1
        if t == inv:
            return -1
    return 0


def plaquettes_containing(geom: LatticeGeometry, e: EdgeRef | int) -> list[PlaquetteRef]:
    i = geom.edge_index(e)
    return [geom.plaquette_ref(int(p)) for p in geom.edge_plaq[i] if p >= 0]


def plaquettes_first_edge(geom: LatticeGeometry, e: EdgeRef | int) -> list[tuple[PlaquetteRef, int]]:
    """Incident plaquettes rotated so the traversal starts with e or e^{-1}."""
    i = geom.edge_index(e)
    out = []
    for p, slot in zip(geom.edge_plaq[i], geom.edge_slot[i]):
        if p < 0:
            continue
        ref = geom.plaquette_ref(int(p))
        out.append((PlaquetteRef(ref.base, ref.axes, 1, int(slot)), int(PLAQ_SIGNS[slot])))
    return out


def _as_edge_ids(geom: LatticeGeometry, edges: Iterable) -> list[int]:
    return [geom.edge_index(e) for e in edges]


def graph_distance(geom: LatticeGeometry, A: Iterable, B: Iterable) -> int:
    """Shortest-path distance between the endpoint vertex sets of two edge sets.

    On a free-boundary box every L1-shortest path stays inside the box, so the
    graph distance is the minimal L1 distance between endpoints.
    """
    a = _as_edge_ids(geom, A)
    b = _as_edge_ids(geom, B)
    if not a or not b:
        raise ValueError("graph_distance needs non-empty edge sets")
    va = geom.edge_endpoints[a].reshape(-1, geom.d)
    vb = geom.edge_endpoints[b].reshape(-1, geom.d)
    return int(np.abs(va[:, None, :] - vb[None, :, :]).sum(-1).min())


def is_cluster(geom: LatticeGeometry, K: Iterable[int], seed_edges: Iterable) -> bool:
    """True iff every edge-adjacency component of K contains an edge of the seed set."""
    K = set(int(p) for p in K)
    seeds = set(_as_edge_ids(geom, seed_edges))
    adj = geom.plaquette_adjacency()
    pe = geom.plaq_edges
    seen = set()
    for start in K:
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            p = stack.pop()
            comp.append(p)
            for q in adj[p]:
                if q in K and q not in seen:
                    seen.add(q)
                    stack.append(q)
        if not any(int(e) in seeds for p in comp for e in pe[p]):
            return False
    return True


def enumerate_clusters(geom: LatticeGeometry, seed_edges: Iterable, m_max: int,
                       max_clusters: int = 2_000_000) -> dict[int, list[ClusterSet]]:
    """All clusters anchored to ``seed_edges`` with at most ``m_max`` plaquettes.

    Every valid cluster of size m is a valid cluster of size m - 1 plus one
    plaquette that is adjacent to it or touches a seed edge, so growing level
    by level with set deduplication reaches each cluster exactly once.
    """
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    seeds = frozenset(_as_edge_ids(geom, seed_edges))
    adj = geom.plaquette_adjacency()
    touching = sorted({int(p) for e in seeds for p in geom.edge_plaq[e] if p >= 0})
    levels: dict[int, list[ClusterSet]] = {0: [ClusterSet(frozenset(), seeds)]}
    frontier = {frozenset()}
    total = 1
    for m in range(1, m_max + 1):
        nxt = set()
        for K in frontier:
            cand = set(touching)
            for p in K:
                cand |= adj[p]
            for p in cand - K:
                nxt.add(K | {p})
                if len(nxt) + total > max_clusters:
                    raise ClusterBudgetError(
                        f"cluster enumeration exceeds budget of {max_clusters} at size {m}")
        total += len(nxt)
        frontier = nxt
        levels[m] = [ClusterSet(K, seeds) for K in sorted(nxt, key=lambda s: sorted(s))]
    return levels


def cluster_count_bound(d: int, n_seed: int, m: int) -> float:
    """Combinatorial bound exp(2 d |seed|) * 40^(m d)."""
    return float(np.exp(2 * d * n_seed) * 40.0 ** (m * d))


def geometry_summary(geom: LatticeGeometry) -> dict:
    """JSON-friendly summary used for golden-file tests."""
    h = hashlib.sha256()
    for arr in (geom.edge_base, geom.edge_axis, geom.plaq_edges, geom.edge_plaq, geom.edge_slot):
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    return {
        "version": GEOMETRY_VERSION,
        "d": geom.d,
        "lo": [int(x) for x in geom.lo],
        "hi": [int(x) for x in geom.hi],
        "vertices": geom.n_vertices,
        "edges": geom.n_edges,
        "plaquettes": geom.n_plaquettes,
        "tables_sha256": h.hexdigest(),
    }


def geometry_summary_json(geom: LatticeGeometry) -> str:
    return json.dumps(geometry_summary(geom), sort_keys=True, indent=2)

"""Observable estimation and desk-scale experiments: covariance decay with
distance, volume dependence, the coupling-derivative identity, large-N
variance decay and Wilson loop factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .algebra import dagger
from .lattice import EdgeRef, LatticeGeometry, Loop, PlaquetteRef, graph_distance
from .model import CouplingConfig, plaquette_traces
from .samplers import ChainState, init_state, make_rng, restore_group, sweep, tune_scales
from .stats import EstimateWithError, batch_covariance, batch_function, batch_mean, combine_estimates


# ---------------------------------------------------------------------------
# Wilson loops

@dataclass(frozen=True)
class LoopIndex:
    """Edge indices and orientations of a loop on a given lattice."""

    edges: tuple[int, ...]
    orient: tuple[int, ...]

    @classmethod
    def build(cls, geom: LatticeGeometry, loop: Loop) -> "LoopIndex":
        return cls(tuple(geom.edge_index(e) for e in loop.edges), tuple(e.orientation for e in loop.edges))


def wilson_loop(geom: LatticeGeometry, U: np.ndarray, loop: Loop | LoopIndex,
                theta: np.ndarray | None = None) -> np.ndarray | complex:
    """tr(U_l) = Tr(U_l)/N, times e^{i theta_l/N} in decomposed mode.

    ``U`` may be a single field (E, N, N) or a stack (S, E, N, N).
    """
    li = loop if isinstance(loop, LoopIndex) else LoopIndex.build(geom, loop)
    N = U.shape[-1]
    M = None
    for e, o in zip(li.edges, li.orient):
        X = U[..., e, :, :]
        X = X if o == 1 else dagger(X)
        M = X if M is None else M @ X
    w = np.trace(M, axis1=-2, axis2=-1) / N
    if theta is not None:
        th = sum(o * np.asarray(theta)[..., e] for e, o in zip(li.edges, li.orient))
        w = w * np.exp(1j * th / N)
    return w if np.ndim(w) else complex(w)


def plaquette_loop(geom: LatticeGeometry, p: int) -> Loop:
    return Loop.from_plaquette(geom.plaquette_ref(p))


def central_plaquette(geom: LatticeGeometry) -> int:
    """Plaquette in the (0, 1) plane whose base is the vertex nearest the center."""
    center = (geom.lo + geom.hi) / 2.0
    best, bd = 0, np.inf
    for p in range(geom.n_plaquettes):
        if tuple(geom.plaq_axes[p]) != (0, 1):
            continue
        c = geom.vertex_coords[geom.plaq_base[p]].astype(float)
        c[:2] += 0.5
        dist = np.abs(c - center).sum()
        if dist < bd - 1e-12:
            best, bd = p, dist
    return best


# ---------------------------------------------------------------------------
# chain driver

@dataclass
class ChainRun:
    """Per-sweep records of plaquette traces (normalized) and extra loops."""

    plaq: np.ndarray            # (S, P) complex tr Q_p
    loops: np.ndarray           # (S, k) complex loop values
    acceptance: float
    scale: float
    tau_hint: float = float("nan")


def simulate(geom: LatticeGeometry, coupling: CouplingConfig, n_sweeps: int, seed: int, stream: int = 0,
             burn: int = 500, loops: Sequence[Loop] = (), scale: float | None = None,
             measure_every: int = 1, reunitarize_every: int = 100) -> ChainRun:
    """Direct U(N) Metropolis chain with tuned (or given) proposal scale."""
    rng = make_rng(seed, stream)
    state = init_state(geom, "un", coupling.N, rng)
    if scale is None:
        tune_scales(state, coupling, burn)
    else:
        state.scales["U"] = float(scale)
        for _ in range(burn):
            sweep(state, coupling)
        state.reset_counters()
    lidx = [LoopIndex.build(geom, l) for l in loops]
    n_meas = n_sweeps // measure_every
    plaq = np.empty((n_meas, geom.n_plaquettes), dtype=complex)
    lv = np.empty((n_meas, len(lidx)), dtype=complex)
    k = 0
    for i in range(1, n_sweeps + 1):
        sweep(state, coupling)
        if state.sweep % reunitarize_every == 0:
            restore_group(state)
        if i % measure_every == 0 and k < n_meas:
            U = state.fields["U"]
            plaq[k] = plaquette_traces(geom, U) / coupling.N
            for j, li in enumerate(lidx):
                lv[k, j] = wilson_loop(geom, U, li)
            k += 1
    return ChainRun(plaq, lv, state.acceptance("U"), state.scales["U"])


def covariance_estimate(x: np.ndarray, y: np.ndarray, n_batches: int = 32,
                        min_samples: int = 256) -> EstimateWithError:
    """Batch-means covariance of two recorded observable series."""
    if len(x) < max(min_samples, n_batches):
        raise ValueError("insufficient samples for a covariance estimate")
    return batch_covariance(np.real(x), np.real(y), n_batches)


# ---------------------------------------------------------------------------
# decay fits

@dataclass
class DecayFit:
    distances: list
    covariances: list
    errors: list
    used: list
    excluded: int
    status: str                 # "fit" | "below noise floor" | "insufficient points"
    rate: float = float("nan")
    slope: float = float("nan")
    slope_ci: tuple = (float("nan"), float("nan"))
    intercept: float = float("nan")
    r2: float = float("nan")
    estimates: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("estimates")
        return d


def fit_decay(distances, covs, errs, noise_sigma: float = 2.0, min_points: int = 3) -> DecayFit:
    """Least-squares fit of log|cov| against distance, excluding points below the noise floor."""
    distances = [float(r) for r in distances]
    covs = [float(c) for c in covs]
    errs = [float(e) for e in errs]
    keep = [i for i, (c, e) in enumerate(zip(covs, errs)) if abs(c) >= noise_sigma * e and c != 0.0]
    excluded = len(covs) - len(keep)
    used = [distances[i] for i in keep]
    if not keep:
        return DecayFit(distances, covs, errs, used, excluded, "below noise floor")
    if len(set(used)) < min_points:
        return DecayFit(distances, covs, errs, used, excluded, "insufficient points")
    r = np.array(used)
    y = np.log(np.abs([covs[i] for i in keep]))
    fit = sps.linregress(r, y)
    half = sps.t.ppf(0.975, len(r) - 2) * fit.stderr if len(r) > 2 else float("inf")
    return DecayFit(distances, covs, errs, used, excluded, "fit", float(-fit.slope), float(fit.slope),
                    (float(fit.slope - half), float(fit.slope + half)), float(fit.intercept), float(fit.rvalue ** 2))


def plaquette_pairs_by_distance(geom: LatticeGeometry, distances: Sequence[int]) -> list[tuple[int, int, int]]:
    """(distance, p, q): a reference plaquette near one face and partners along axis 0."""
    ref_base = geom.lo.copy()
    ref_base[1:] = (geom.lo[1:] + geom.hi[1:]) // 2
    ref_base[1] = min(ref_base[1], geom.hi[1] - 1)
    p = geom.plaquette_index(PlaquetteRef(tuple(ref_base), (0, 1)))
    out = []
    pe = [geom.edge_ref(int(e)) for e in geom.plaq_edges[p]]
    for r in distances:
        b = ref_base.copy()
        b[0] += 1 + int(r)
        if b[0] >= geom.hi[0]:
            raise ValueError(f"distance {r} does not fit in the lattice")
        q = geom.plaquette_index(PlaquetteRef(tuple(b), (0, 1)))
        qe = [geom.edge_ref(int(e)) for e in geom.plaq_edges[q]]
        out.append((graph_distance(geom, pe, qe), p, q))
    return out


def mass_gap_scan(geom: LatticeGeometry, coupling: CouplingConfig, distances: Sequence[int] = (0, 1, 2, 3),
                  n_sweeps: int = 20000, seed: int = 0, n_batches: int = 32, burn: int = 500,
                  n_chains: int = 1, mapper: Callable = map) -> DecayFit:
    """Covariance of Re tr of two plaquettes against their graph distance.

    With ``n_chains > 1`` the budget is split over independent streams and the
    per-chain estimates are merged in stream order.
    """
    if len(distances) < 3:
        raise ValueError("need at least three distances")
    pairs = plaquette_pairs_by_distance(geom, distances)

    def one(c):
        run = simulate(geom, coupling, n_sweeps // n_chains, seed, stream=c, burn=burn)
        return [covariance_estimate(run.plaq[:, p], run.plaq[:, q], n_batches) for _, p, q in pairs]
    per_chain = list(mapper(one, range(n_chains)))
    ests = [combine_estimates([pc[i] for pc in per_chain]) if n_chains > 1 else per_chain[0][i]
            for i in range(len(pairs))]
    fit = fit_decay([r for r, _, _ in pairs], [e.mean for e in ests], [e.stderr for e in ests])
    fit.estimates = ests
    return fit


# ---------------------------------------------------------------------------
# volume dependence

@dataclass
class VolumePoint:
    L: int
    estimate: EstimateWithError


@dataclass
class VolumeScan:
    points: list
    differences: list           # |<f>_{L+1} - <f>_L|
    diff_errors: list

    def decreasing_within(self, k_sigma: float = 3.0) -> bool:
        d, e = self.differences, self.diff_errors
        return all(d[i + 1] <= d[i] + k_sigma * np.hypot(e[i], e[i + 1]) for i in range(len(d) - 1))


def volume_sensitivity_scan(d: int, coupling: CouplingConfig, L_values: Sequence[int], n_sweeps: int = 20000,
                            seed: int = 0, n_batches: int = 32, burn: int = 500,
                            mapper: Callable = map) -> VolumeScan:
    """<Re tr Q_p> of the central plaquette on [-L, L]^d for successive L."""
    def one(item):
        i, L = item
        geom = LatticeGeometry(d, int(L))
        p = central_plaquette(geom)
        run = simulate(geom, coupling, n_sweeps, seed, stream=i, burn=burn)
        return VolumePoint(int(L), batch_mean(np.real(run.plaq[:, p]), n_batches))
    pts = list(mapper(one, list(enumerate(L_values))))
    diffs = [abs(b.estimate.mean - a.estimate.mean) for a, b in zip(pts, pts[1:])]
    derr = [float(np.hypot(a.estimate.stderr, b.estimate.stderr)) for a, b in zip(pts, pts[1:])]
    return VolumeScan(pts, diffs, derr)


# ---------------------------------------------------------------------------
# coupling derivative

@dataclass
class DerivativeCheck:
    finite_difference: EstimateWithError
    covariance: EstimateWithError
    discrepancy_sigma: float
    curvature_flag: bool
    second_difference: EstimateWithError


def beta_p_derivative_check(geom: LatticeGeometry, coupling: CouplingConfig, p: int,
                            f: Callable[[np.ndarray], np.ndarray] | None = None, delta: float = 0.02,
                            n_sweeps: int = 100000, seed: int = 0, n_batches: int = 32,
                            burn: int = 500) -> DerivativeCheck:
    """Central difference of <f> in beta_p against Cov(f, N Re Tr Q_p).

    ``f`` maps the recorded (S, P) array of tr Q_p to a series; default is
    Re tr Q_p. The three chains share a seed and a frozen proposal scale
    (common random numbers), so the difference is estimated batch-by-batch.
    """
    N = coupling.N
    f = f or (lambda plaq: np.real(plaq[:, p]))
    b0 = coupling.betas(geom)[p]
    pilot = init_state(geom, "un", N, make_rng(seed, 999))
    tune_scales(pilot, coupling, burn)
    scale = pilot.scales["U"]
    runs = {}
    for k, s in ((-1, -1.0), (0, 0.0), (1, 1.0)):
        c = coupling.with_plaquette(geom, p, b0 + s * delta)
        runs[k] = simulate(geom, c, n_sweeps, seed, stream=0, burn=burn, scale=scale)
    fm, f0, fp = (f(runs[k].plaq) for k in (-1, 0, 1))
    fd = batch_mean((fp - fm) / (2 * delta), n_batches)
    second = batch_mean((fp - 2 * f0 + fm) / delta ** 2, n_batches)
    cov = batch_covariance(f0, N * N * np.real(runs[0].plaq[:, p]), n_batches)
    disc = fd.zscore(cov)
    # quadratic term dominates when a one-sided difference would be off by more than the slope
    curv = abs(second.mean) * delta / 2 > abs(fd.mean) and abs(second.mean) > 3 * second.stderr
    return DerivativeCheck(fd, cov, disc, bool(curv), second)


# ---------------------------------------------------------------------------
# large N

@dataclass
class LargeNRow:
    N: int
    variance: EstimateWithError
    bound: float


@dataclass
class LargeNTable:
    rows: list
    slope: float
    slope_err: float

    def strictly_decreasing(self, k_sigma: float = 2.0) -> bool:
        v = self.rows
        return all(v[i].variance.mean - v[i + 1].variance.mean >
                   k_sigma * np.hypot(v[i].variance.stderr, v[i + 1].variance.stderr) for i in range(len(v) - 1))


def variance_bound(n: int, N: int, beta: float, c_d_star: float = 1.0) -> float:
    """4 n (n - 3) / (N K~), the leading term of the large-N variance bound."""
    from .model import k_tilde
    k = k_tilde(N, beta, c_d_star)
    return float("inf") if k <= 0 else 4 * n * (n - 3) / (N * k)


def pooled_variance(samples: np.ndarray, n_batches: int = 32) -> EstimateWithError:
    """Var of Re W pooled over translates (columns), with a batch jackknife error."""
    x = np.real(samples)
    m1 = x.mean(axis=1)
    m2 = (x * x).mean(axis=1)
    return batch_function([m1, m2], lambda a, b: b - a * a, n_batches)


def large_n_sweep(d: int, L: int, beta: float, N_values: Sequence[int], n_sweeps: int = 10000, seed: int = 0,
                  n_batches: int = 32, burn: int = 500, c_d_star: float = 1.0,
                  mapper: Callable = map) -> LargeNTable:
    """Variance of the plaquette Wilson loop (real part) against N, with a log-log slope."""
    if len(N_values) < 3:
        raise ValueError("need at least three values of N")

    def one(item):
        i, N = item
        geom = LatticeGeometry(d, L)
        run = simulate(geom, CouplingConfig.uniform(N, beta, c_d_star), n_sweeps, seed, stream=i, burn=burn)
        return LargeNRow(int(N), pooled_variance(run.plaq, n_batches), variance_bound(4, N, beta, c_d_star))
    rows = list(mapper(one, list(enumerate(N_values))))
    lx = np.log([r.N for r in rows])
    ly = np.log([r.variance.mean for r in rows])
    w = np.array([r.variance.mean / max(r.variance.stderr, 1e-300) for r in rows])
    A = np.vstack([lx, np.ones_like(lx)]).T
    sol, *_ = np.linalg.lstsq(A * w[:, None], ly * w, rcond=None)
    cov = np.linalg.inv((A * w[:, None]).T @ (A * w[:, None]))
    return LargeNTable(rows, float(sol[0]), float(np.sqrt(cov[0, 0])))


@dataclass
class FactorizationRow:
    N: int
    discrepancy: EstimateWithError
    telescoping_rhs: float = float("nan")


def factorization_discrepancy(series: Sequence[np.ndarray], n_batches: int = 32) -> EstimateWithError:
    """|<W_1 ... W_k> - <W_1> ... <W_k>| on real parts."""
    xs = [np.real(s) for s in series]
    prod = np.prod(xs, axis=0)

    def fn(mp, *ms):
        return abs(mp - np.prod(ms))
    return batch_function([prod] + xs, fn, n_batches)


def telescoping_bound(series: Sequence[np.ndarray]) -> float:
    """sqrt(Var W_1) + sqrt(Var W_2) + ... + |<W_{k-1} W_k> - <W_{k-1}><W_k>| for |W| <= 1."""
    xs = [np.real(s) for s in series]
    if len(xs) == 2:
        return float(abs(np.mean(xs[0] * xs[1]) - np.mean(xs[0]) * np.mean(xs[1])))
    return float(np.sqrt(np.var(xs[0]))) + telescoping_bound(xs[1:])


def factorization_check(d: int, L: int, beta: float, N_values: Sequence[int],
                        loops: Sequence[Loop] | None = None, n_sweeps: int = 10000, seed: int = 0,
                        n_batches: int = 32, burn: int = 500, mapper: Callable = map) -> list[FactorizationRow]:
    """Discrepancy between the expectation of a product of loops and the product of expectations.

    With ``loops=None`` the two loops are both the central plaquette.
    """
    if loops is not None and len(loops) < 2:
        raise ValueError("factorization needs at least two loops")

    def one(item):
        i, N = item
        geom = LatticeGeometry(d, L)
        ls = list(loops) if loops is not None else [plaquette_loop(geom, central_plaquette(geom))] * 2
        run = simulate(geom, CouplingConfig.uniform(N, beta), n_sweeps, seed, stream=i, burn=burn, loops=ls)
        series = [run.loops[:, j] for j in range(len(ls))]
        return FactorizationRow(int(N), factorization_discrepancy(series, n_batches),
                                telescoping_bound(series) if len(ls) > 2 else float("nan"))
    return list(mapper(one, list(enumerate(N_values))))

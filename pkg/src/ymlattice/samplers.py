"""Markov chain samplers: Metropolis for the U(N) Wilson measure, the joint
(theta, Q) measure and the conditional angle law, exact nu-product sampling,
and a geometric Euler integrator for the SU(N) marginal Langevin dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats as sps

from . import _kernels
from .algebra import (exp_antihermitian, haar_sample, reunitarize, su_basis, unitarity_error,
                      det_error)
from .lattice import LatticeGeometry
from .model import (CouplingConfig, grad_marginal_from_means, nu_rates, nu_sample,
                    plaquette_phase_means, plaquette_traces, quadrature_for, theta_plaquettes)

TWO_PI = 2.0 * np.pi
SCALE_CAP = 3.0


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for (seed, stream); streams never overlap."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


class InvariantError(AssertionError):
    pass


@dataclass
class ChainState:
    """A chain's configuration plus bookkeeping.

    ``kind`` is one of ``un`` (U(N) field ``U``), ``joint`` (``theta``, ``Q``),
    ``theta`` (angles with fixed ``Q``) or ``langevin`` (SU(N) field ``Q``).
    """

    geom: LatticeGeometry
    kind: str
    fields: dict
    rng: np.random.Generator
    sweep: int = 0
    scales: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    drift_norms: list = field(default_factory=list)
    debug: bool = False

    def acceptance(self, key: str) -> float:
        n = self.proposed.get(key, 0)
        return self.accepted.get(key, 0) / n if n else float("nan")

    def _count(self, key: str, acc: int, n: int):
        self.accepted[key] = self.accepted.get(key, 0) + int(acc)
        self.proposed[key] = self.proposed.get(key, 0) + int(n)

    def reset_counters(self):
        self.accepted.clear()
        self.proposed.clear()

    def check_invariants(self, tol: float = 1e-10):
        for name in ("U", "Q"):
            if name in self.fields:
                err = unitarity_error(self.fields[name])
                if err > tol:
                    raise InvariantError(f"unitarity error {err:.3g} on field {name}")
        if "Q" in self.fields and self.kind != "un":
            err = det_error(self.fields["Q"])
            if err > tol:
                raise InvariantError(f"determinant error {err:.3g}")
        if "theta" in self.fields:
            th = self.fields["theta"]
            if np.any(th < 0) or np.any(th >= TWO_PI):
                raise InvariantError("theta outside [0, 2pi)")


def init_state(geom: LatticeGeometry, kind: str, N: int, rng: np.random.Generator,
               start: str = "cold", Q: np.ndarray | None = None) -> ChainState:
    E = geom.n_edges
    eye = np.broadcast_to(np.eye(N, dtype=complex), (E, N, N)).copy()
    hot = start == "hot"
    if kind == "un":
        fields = {"U": haar_sample(N, "u", rng, E) if hot else eye}
        scales = {"U": 0.5}
    elif kind in ("joint", "theta"):
        theta = rng.uniform(0, TWO_PI, E) if hot else np.zeros(E)
        if kind == "theta":
            if Q is None:
                raise ValueError("theta chain needs a fixed Q field")
            fields = {"theta": theta, "Q": np.array(Q, dtype=complex)}
            scales = {"theta": 1.0}
        else:
            fields = {"theta": theta, "Q": haar_sample(N, "su", rng, E) if hot else eye}
            scales = {"theta": 1.0, "Q": 0.5}
    elif kind == "langevin":
        fields = {"Q": haar_sample(N, "su", rng, E) if hot else eye}
        scales = {}
    else:
        raise ValueError(f"unknown chain kind {kind!r}")
    return ChainState(geom, kind, fields, rng, scales=scales)


def draw_proposals(rng: np.random.Generator, E: int, N: int, eps: float, flavor: str) -> np.ndarray:
    """exp(eps X) with X standard Gaussian in u(N) or su(N); symmetric under X -> -X."""
    B = su_basis(N)
    g = rng.standard_normal((E, len(B)))
    X = np.tensordot(g, B, axes=(1, 0))
    if flavor == "u":
        X = X + (1j / np.sqrt(N)) * rng.standard_normal(E)[:, None, None] * np.eye(N)
    return exp_antihermitian(eps * X)


# ---------------------------------------------------------------------------
# Metropolis sweeps

def metropolis_sweep_un(state: ChainState, coupling: CouplingConfig, eps: float | None = None) -> ChainState:
    """Sequential sweep targeting exp(sum_p N beta_p Re Tr Q_p) dQ on U(N)^E."""
    g = state.geom
    U = state.fields["U"]
    E, N = U.shape[0], U.shape[1]
    eps = state.scales["U"] if eps is None else eps
    props = draw_proposals(state.rng, E, N, eps, "u")
    unif = state.rng.random(E)
    w = (coupling.N * coupling.betas(g)).astype(np.complex128)
    acc = _kernels.sweep_direct(U, g.plaq_edges, g.edge_plaq, g.edge_slot, w, props, unif)
    state._count("U", acc, E)
    state.sweep += 1
    if state.debug:
        state.check_invariants()
    return state


def metropolis_sweep_joint(state: ChainState, coupling: CouplingConfig) -> ChainState:
    """Sequential sweep targeting exp(S_U(theta, Q)) dtheta dQ."""
    g = state.geom
    th, Q = state.fields["theta"], state.fields["Q"]
    E, N = Q.shape[0], Q.shape[1]
    z = state.rng.standard_normal(E)
    props = draw_proposals(state.rng, E, N, state.scales["Q"], "su")
    unif = state.rng.random(2 * E)
    at, aq = _kernels.sweep_joint(th, Q, g.plaq_edges, g.edge_plaq, g.edge_slot, coupling.betas(g),
                                  float(coupling.N), z, state.scales["theta"], props, unif)
    state._count("theta", at, E)
    state._count("Q", aq, E)
    state.sweep += 1
    if state.debug:
        state.check_invariants()
    return state


def conditional_theta_sweep(state: ChainState, coupling: CouplingConfig,
                            traces: np.ndarray | None = None) -> ChainState:
    """Per-edge Metropolis sweep for the law of theta given the fixed field Q."""
    g = state.geom
    th = state.fields["theta"]
    if traces is None:
        traces = plaquette_traces(g, state.fields["Q"])
    E = th.shape[0]
    z = state.rng.standard_normal(E)
    unif = state.rng.random(E)
    acc = _kernels.sweep_theta(th, traces, g.plaq_edges, g.edge_plaq, g.edge_slot, coupling.betas(g),
                               float(coupling.N), z, state.scales["theta"], unif)
    state._count("theta", acc, E)
    state.sweep += 1
    return state


def theta_chain_samples(state: ChainState, coupling: CouplingConfig, n_sweeps: int,
                        obs_edges=None, chunk: int = 4096) -> np.ndarray:
    """Run ``n_sweeps`` conditional sweeps; return theta on ``obs_edges`` after each sweep."""
    g = state.geom
    th = state.fields["theta"]
    traces = plaquette_traces(g, state.fields["Q"])
    obs = np.arange(g.n_edges) if obs_edges is None else np.asarray(obs_edges, dtype=np.int64)
    out = np.empty((n_sweeps, len(obs)))
    E = g.n_edges
    done = 0
    while done < n_sweeps:
        m = min(chunk, n_sweeps - done)
        z = state.rng.standard_normal((m, E))
        unif = state.rng.random((m, E))
        acc = _kernels.sweep_theta_many(th, traces, g.plaq_edges, g.edge_plaq, g.edge_slot,
                                        coupling.betas(g), float(coupling.N), z,
                                        state.scales["theta"], unif, out[done:done + m], obs)
        state._count("theta", acc, m * E)
        state.sweep += m
        done += m
    return out


def sweep(state: ChainState, coupling: CouplingConfig) -> ChainState:
    if state.kind == "un":
        return metropolis_sweep_un(state, coupling)
    if state.kind == "joint":
        return metropolis_sweep_joint(state, coupling)
    if state.kind == "theta":
        return conditional_theta_sweep(state, coupling)
    raise ValueError(f"no Metropolis sweep for chain kind {state.kind!r}")


def restore_group(state: ChainState):
    """Project group-valued fields back onto U(N)/SU(N)."""
    if "U" in state.fields:
        state.fields["U"] = reunitarize(state.fields["U"])
    if "Q" in state.fields and state.kind != "theta":
        state.fields["Q"] = reunitarize(state.fields["Q"], special=True)


def tune_scales(state: ChainState, coupling: CouplingConfig, n_sweeps: int, block: int = 25,
                lo: float = 0.4, hi: float = 0.6) -> ChainState:
    """Adapt proposal scales toward lo..hi acceptance during burn-in; frozen afterwards."""
    for start in range(0, n_sweeps, block):
        state.reset_counters()
        for _ in range(min(block, n_sweeps - start)):
            sweep(state, coupling)
        for key in state.scales:
            a = state.acceptance(key)
            if a > hi:
                state.scales[key] = min(state.scales[key] * 1.25, SCALE_CAP)
            elif a < lo:
                state.scales[key] = state.scales[key] / 1.25
    restore_group(state)
    state.reset_counters()
    return state


def run_chain(state: ChainState, coupling: CouplingConfig, n_sweeps: int,
              measure: Callable[[ChainState], np.ndarray] | None = None,
              reunitarize_every: int = 100) -> np.ndarray | None:
    """Run sweeps and collect ``measure(state)`` after each one."""
    rows = []
    for i in range(n_sweeps):
        sweep(state, coupling)
        if reunitarize_every and state.sweep % reunitarize_every == 0:
            restore_group(state)
        if measure is not None:
            rows.append(np.asarray(measure(state)))
    return np.array(rows) if measure is not None else None


def burn_in(state: ChainState, coupling: CouplingConfig, min_sweeps: int = 500,
            factor: float = 10.0, max_sweeps: int = 20000) -> float:
    """Tune during ``min_sweeps`` then extend to ``factor`` x tau_int; returns tau_int."""
    tune_scales(state, coupling, min_sweeps)
    series = run_chain(state, coupling, max(1000, min_sweeps), measure=plaquette_mean_measure)
    tau = autocorrelation(series).tau_int
    extra = int(min(max_sweeps, factor * tau)) - len(series)
    if extra > 0:
        run_chain(state, coupling, extra)
    state.reset_counters()
    return tau


def plaquette_mean_measure(state: ChainState) -> float:
    g = state.geom
    if state.kind == "un":
        tr = plaquette_traces(g, state.fields["U"])
        N = state.fields["U"].shape[-1]
    else:
        Q = state.fields["Q"]
        N = Q.shape[-1]
        tr = plaquette_traces(g, Q)
        if "theta" in state.fields and state.kind == "joint":
            tr = tr * np.exp(1j * theta_plaquettes(g, state.fields["theta"]) / N)
    return float(np.mean(tr.real) / N)


# ---------------------------------------------------------------------------
# exact nu sampling

def nu_product_sample(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                      rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Independent inverse-CDF draws from prod_e nu_e; shape (size, E) or (E,)."""
    a = nu_rates(geom, Q, coupling)
    shape = (geom.n_edges,) if size is None else (int(size), geom.n_edges)
    return nu_sample(np.broadcast_to(a, shape), rng, shape)


# ---------------------------------------------------------------------------
# Langevin

@dataclass
class LangevinParams:
    h: float = 0.01
    n_inner: int = 16
    reunitarize_every: int = 1000
    T: float = 1.0
    gradient: str = "quadrature"   # or "mc"
    nodes: int = 16

    def __post_init__(self):
        if not 0 < self.h <= 0.1:
            raise ValueError("Langevin step h must be in (0, 0.1]")
        if self.reunitarize_every < 1:
            raise ValueError("re-unitarization cadence must be >= 1")
        if self.gradient not in ("quadrature", "mc"):
            raise ValueError("gradient must be 'quadrature' or 'mc'")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h))


def _drift(state: ChainState, coupling: CouplingConfig, params: LangevinParams) -> np.ndarray:
    """su(N) drift A_e with grad S~ = A_e Q_e."""
    g = state.geom
    Q = state.fields["Q"]
    if coupling.sup_beta == 0.0:
        return np.zeros_like(Q)
    if params.gradient == "quadrature":
        m = plaquette_phase_means(g, Q, coupling, params.nodes)
    else:
        # persistent warm-started conditional theta chain
        th = state.fields.setdefault("theta", np.zeros(g.n_edges))
        sub = ChainState(g, "theta", {"theta": th, "Q": Q}, state.rng,
                         scales={"theta": state.scales.setdefault("theta", 1.0)})
        samples = theta_chain_samples(sub, coupling, params.n_inner)
        m = np.exp(1j * theta_plaquettes(g, samples) / coupling.N).mean(axis=0)
    return grad_marginal_from_means(g, Q, coupling, m) @ np.conj(np.swapaxes(Q, -1, -2))


def langevin_step(state: ChainState, coupling: CouplingConfig, params: LangevinParams) -> ChainState:
    """Q_e <- exp(h A_e + sqrt(2h) xi_e) Q_e, xi_e standard Gaussian in su(N)."""
    Q = state.fields["Q"]
    E, N = Q.shape[0], Q.shape[1]
    A = _drift(state, coupling, params)
    B = su_basis(N)
    xi = np.tensordot(state.rng.standard_normal((E, len(B))), B, axes=(1, 0))
    step = params.h * A + np.sqrt(2 * params.h) * xi
    # keep the generator exactly traceless anti-Hermitian before exponentiating
    step = 0.5 * (step - np.conj(np.swapaxes(step, -1, -2)))
    step = step - (np.trace(step, axis1=-2, axis2=-1) / N)[:, None, None] * np.eye(N)
    state.fields["Q"] = exp_antihermitian(step) @ Q
    state.sweep += 1
    state.drift_norms.append(float(np.linalg.norm(A, axis=(-2, -1)).max()))
    if state.sweep % params.reunitarize_every == 0:
        state.fields["Q"] = reunitarize(state.fields["Q"], special=True)
    if state.debug:
        state.check_invariants()
    return state


# ---------------------------------------------------------------------------
# autocorrelation

@dataclass
class AutocorrResult:
    tau_int: float
    tau_err: float
    rate: float
    rate_ci: tuple[float, float]
    n: int
    batch_size: int


def autocovariance(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[: max_lag + 1] / n
    return acf


def autocorrelation(series, batch_size: int | None = None, threshold: float = 0.05) -> AutocorrResult:
    """Batch-means integrated autocorrelation time (1 for independent samples) and an
    exponential-decay rate fitted to the normalized autocovariance tail."""
    x = np.asarray(series, dtype=float).ravel()
    n = len(x)
    if n < 1000:
        raise ValueError("autocorrelation needs at least 1000 samples")
    var = np.var(x, ddof=1)
    if var == 0:
        return AutocorrResult(1.0, 0.0, float("inf"), (float("inf"), float("inf")), n, 1)
    b = batch_size or max(1, int(np.sqrt(n)))
    nb = n // b
    means = x[: nb * b].reshape(nb, b).mean(axis=1)
    tau = b * np.var(means, ddof=1) / var
    tau_err = tau * np.sqrt(2.0 / (nb - 1))
    rho = autocovariance(x, min(n // 4, 10 * b))
    rho = rho / rho[0]
    below = np.nonzero(rho[1:] < threshold)[0]
    stop = int(below[0]) + 1 if len(below) else len(rho)
    lags = np.arange(1, stop)
    if len(lags) >= 2:
        fit = sps.linregress(lags, np.log(rho[1:stop]))
        tcrit = sps.t.ppf(0.975, len(lags) - 2) if len(lags) > 2 else np.inf
        rate = -fit.slope
        half = tcrit * fit.stderr if len(lags) > 2 else np.inf
        ci = (rate - half, rate + half)
    elif len(lags) == 1:
        rate = -np.log(max(rho[1], 1e-300))
        ci = (rate, float("inf"))
    else:
        # correlation already below threshold at lag 1
        rate = -np.log(max(abs(rho[1]), 1e-300)) if len(rho) > 1 else float("inf")
        ci = (rate, float("inf"))
    return AutocorrResult(float(tau), float(tau_err), float(rate), (float(ci[0]), float(ci[1])), n, b)

"""Experiment orchestration for ``ymlattice run`` and ``ymlattice resume``.

Every experiment writes a CSV table and a JSON manifest through a single
``OutputDir`` writer. Parameter points and chains run as isolated tasks on a
thread pool; results are merged in submission order, so single-thread runs
are byte-reproducible and multi-thread runs differ only where the chain split
changes (the ``sample`` and ``massgap`` experiments).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import experiments as ex
from .algebra import haar_sample
from .cluster_expansion import LocalObservable, expand_conditional
from .config import ConfigError, RunConfig
from .io import OutputDir, load_checkpoint, restore_rng, save_checkpoint
from .lattice import LatticeGeometry
from .model import CouplingConfig
from .samplers import (ChainState, LangevinParams, autocorrelation, init_state, langevin_step, make_rng,
                       plaquette_mean_measure, restore_group, sweep, tune_scales)
from .stats import batch_mean, combine_estimates

CHECKPOINT_NAME = "checkpoint.ymck"


@dataclass
class RunOutcome:
    status: str          # "complete" | "paused"
    outdir: Path
    summary: dict


def geometry_of(cfg: RunConfig) -> LatticeGeometry:
    box = cfg.experiment.params.get("box")
    if box is not None:
        return LatticeGeometry.box(tuple(int(w) for w in box))
    return LatticeGeometry(cfg.geometry.d, cfg.geometry.L)


def coupling_of(cfg: RunConfig, geom: LatticeGeometry | None = None) -> CouplingConfig:
    m = cfg.model
    if m.beta_map:
        geom = geom or geometry_of(cfg)
        betas = np.full(geom.n_plaquettes, m.beta)
        for k, v in m.beta_map.items():
            if int(k) >= geom.n_plaquettes:
                raise ConfigError(f"model.beta_map.{k}: plaquette index out of range")
            betas[int(k)] = v
        return CouplingConfig.per_plaquette(m.N, betas, m.c_d_star)
    return CouplingConfig.uniform(m.N, m.beta, m.c_d_star)


def _param(cfg: RunConfig, key: str, default):
    v = cfg.experiment.params.get(key, default)
    if default is not None and isinstance(default, list) and not isinstance(v, list):
        raise ConfigError(f"experiment.params.{key}: expected a list")
    return v


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool.map


# ---------------------------------------------------------------------------
# sample: a single checkpointable chain (or several merged ones)

def _langevin_params(cfg: RunConfig) -> LangevinParams:
    s = cfg.sampler
    return LangevinParams(h=s.h, n_inner=s.n_inner, reunitarize_every=s.reunitarize_every,
                          T=s.sweeps * s.h, gradient=s.gradient, nodes=s.nodes)


def _advance(state: ChainState, coupling: CouplingConfig, cfg: RunConfig, lp: LangevinParams | None):
    if state.kind == "langevin":
        langevin_step(state, coupling, lp)
    else:
        sweep(state, coupling)
        if state.sweep % cfg.sampler.reunitarize_every == 0:
            restore_group(state)


def _new_chain(cfg: RunConfig, geom, coupling, stream: int, lp) -> ChainState:
    rng = make_rng(cfg.seed, stream)
    state = init_state(geom, cfg.sampler.kind, coupling.N, rng, start=cfg.experiment.params.get("start", "cold"))
    if state.kind == "langevin":
        for _ in range(cfg.sampler.burn_in):
            langevin_step(state, coupling, lp)
        state.drift_norms.clear()
    elif cfg.sampler.burn_in:
        tune_scales(state, coupling, cfg.sampler.burn_in)
    state.sweep = 0
    state.reset_counters()
    return state


def _checkpoint_arrays(state: ChainState, series: np.ndarray) -> dict:
    arrays = {f"field.{k}": v for k, v in state.fields.items()}
    arrays["series"] = series
    arrays["drift_norms"] = np.asarray(state.drift_norms, dtype=float)
    return arrays


def _state_meta(state: ChainState) -> dict:
    return {"sweep": state.sweep, "kind": state.kind, "scales": state.scales, "accepted": state.accepted,
            "proposed": state.proposed}


def _restore_state(ck, geom) -> tuple[ChainState, np.ndarray]:
    meta = ck.header["meta"]
    fields = {k.split(".", 1)[1]: v for k, v in ck.arrays.items() if k.startswith("field.")}
    state = ChainState(geom, meta["kind"], fields, restore_rng(ck.header), sweep=int(meta["sweep"]),
                       scales={k: float(v) for k, v in meta["scales"].items()},
                       accepted={k: int(v) for k, v in meta["accepted"].items()},
                       proposed={k: int(v) for k, v in meta["proposed"].items()},
                       drift_norms=list(ck.arrays["drift_norms"]))
    return state, ck.arrays["series"]


def _run_sample_chain(cfg, geom, coupling, out: OutputDir, state: ChainState, series: np.ndarray,
                      max_sweeps: int | None) -> tuple[bool, np.ndarray, ChainState]:
    lp = _langevin_params(cfg) if state.kind == "langevin" else None
    total = cfg.sampler.sweeps
    buf = np.empty(total)
    buf[: len(series)] = series
    done = len(series)
    stop_at = total if max_sweeps is None else min(total, done + max_sweeps)
    ce = cfg.sampler.checkpoint_every
    while done < stop_at:
        _advance(state, coupling, cfg, lp)
        buf[done] = plaquette_mean_measure(state)
        done += 1
        if ce and done % ce == 0 and done < total:
            save_checkpoint(out.path(CHECKPOINT_NAME), cfg, _state_meta(state),
                            _checkpoint_arrays(state, buf[:done]), state.rng)
    if done < total:
        save_checkpoint(out.path(CHECKPOINT_NAME), cfg, _state_meta(state),
                        _checkpoint_arrays(state, buf[:done]), state.rng)
        return False, buf[:done], state
    return True, buf, state


def _finish_sample(cfg, out: OutputDir, chains: list[tuple[np.ndarray, ChainState]]) -> dict:
    rows, ests, acc, taus = [], [], [], []
    nb = cfg.sampler.n_batches
    for c, (series, state) in enumerate(chains):
        rows += [{"chain": c, "sweep": i + 1, "plaquette_mean": v} for i, v in enumerate(series)]
        ests.append(batch_mean(series, nb))
        acc.append({k: state.acceptance(k) for k in state.proposed})
        taus.append(autocorrelation(series).tau_int if len(series) >= 1000 else float("nan"))
    est = combine_estimates(ests) if len(ests) > 1 else ests[0]
    out.write_csv("series.csv", ["chain", "sweep", "plaquette_mean"], rows)
    summary = {"plaquette_mean": est.as_dict(), "acceptance": acc, "tau_int": taus}
    out.write_json("summary.json", summary)
    return summary


def run_sample(cfg: RunConfig, out: OutputDir, max_sweeps: int | None = None) -> RunOutcome:
    geom = geometry_of(cfg)
    coupling = coupling_of(cfg, geom)
    lp = _langevin_params(cfg) if cfg.sampler.kind == "langevin" else None
    if cfg.threads > 1:
        if max_sweeps is not None or cfg.sampler.checkpoint_every:
            raise ConfigError("threads: checkpointing requires single-thread mode")
        per = cfg.sampler.sweeps // cfg.threads
        sub = RunConfig.from_dict({**cfg.to_dict(), "sampler": {**cfg.to_dict()["sampler"], "sweeps": per}})

        def one(c):
            st = _new_chain(sub, geom, coupling, c, lp)
            _, series, st = _run_sample_chain(sub, geom, coupling, out, st, np.empty(0), None)
            return series, st
        with _mapper(cfg.threads) as mp:
            chains = list(mp(one, range(cfg.threads)))
    else:
        state = _new_chain(cfg, geom, coupling, 0, lp)
        ok, series, state = _run_sample_chain(cfg, geom, coupling, out, state, np.empty(0), max_sweeps)
        if not ok:
            return RunOutcome("paused", out.root, {"sweeps_done": len(series), "checkpoint": CHECKPOINT_NAME})
        chains = [(series, state)]
        stale = out.path(CHECKPOINT_NAME)
        if stale.exists():
            stale.unlink()
    summary = _finish_sample(cfg, out, chains)
    out.write_manifest(cfg, {"streams": list(range(len(chains))), "summary": summary})
    return RunOutcome("complete", out.root, summary)


def resume(ckpt_path: str | Path, out: OutputDir | None = None, expected: RunConfig | None = None,
           max_sweeps: int | None = None) -> RunOutcome:
    ck = load_checkpoint(ckpt_path, expected)
    cfg = ck.config
    out = out or OutputDir(Path(ckpt_path).parent)
    geom = geometry_of(cfg)
    coupling = coupling_of(cfg, geom)
    state, series = _restore_state(ck, geom)
    ok, series, state = _run_sample_chain(cfg, geom, coupling, out, state, series, max_sweeps)
    if not ok:
        return RunOutcome("paused", out.root, {"sweeps_done": len(series), "checkpoint": CHECKPOINT_NAME})
    summary = _finish_sample(cfg, out, [(series, state)])
    ckp = out.path(CHECKPOINT_NAME)
    if ckp.exists():
        ckp.unlink()
    out.write_manifest(cfg, {"streams": [0], "summary": summary})
    return RunOutcome("complete", out.root, summary)


# ---------------------------------------------------------------------------
# other experiments

def _est_row(est) -> dict:
    return {"estimate": est.mean, "stderr": est.stderr, "n_eff": est.n_eff}


def run_massgap(cfg: RunConfig, out: OutputDir) -> RunOutcome:
    geom = geometry_of(cfg)
    distances = _param(cfg, "distances", [0, 1, 2, 3])
    with _mapper(cfg.threads) as mp:
        fit = ex.mass_gap_scan(geom, coupling_of(cfg, geom), distances, cfg.sampler.sweeps, cfg.seed,
                               cfg.sampler.n_batches, cfg.sampler.burn_in, n_chains=cfg.threads, mapper=mp)
    rows = [{"distance": r, **_est_row(e), "above_noise_floor": r in fit.used and e.mean != 0}
            for r, e in zip(fit.distances, fit.estimates)]
    out.write_csv("massgap.csv", ["distance", "estimate", "stderr", "n_eff", "above_noise_floor"], rows)
    out.write_json("decay_fit.json", fit.as_dict())
    out.write_manifest(cfg, {"streams": list(range(cfg.threads)), "decay_fit": fit.as_dict()})
    return RunOutcome("complete", out.root, fit.as_dict())


def run_volume(cfg: RunConfig, out: OutputDir) -> RunOutcome:
    Ls = _param(cfg, "L_values", [2, 3, 4, 5])
    with _mapper(cfg.threads) as mp:
        scan = ex.volume_sensitivity_scan(cfg.geometry.d, coupling_of(cfg), Ls, cfg.sampler.sweeps, cfg.seed,
                                          cfg.sampler.n_batches, cfg.sampler.burn_in, mapper=mp)
    rows = [{"L": p.L, **_est_row(p.estimate)} for p in scan.points]
    out.write_csv("volume.csv", ["L", "estimate", "stderr", "n_eff"], rows)
    summary = {"differences": scan.differences, "diff_errors": scan.diff_errors,
               "decreasing_within_3sigma": scan.decreasing_within(3.0)}
    out.write_json("volume.json", summary)
    out.write_manifest(cfg, {"streams": list(range(len(Ls))), "summary": summary})
    return RunOutcome("complete", out.root, summary)


def run_largen(cfg: RunConfig, out: OutputDir) -> RunOutcome:
    Ns = _param(cfg, "N_values", [2, 4, 8, 16])
    with _mapper(cfg.threads) as mp:
        tab = ex.large_n_sweep(cfg.geometry.d, cfg.geometry.L, cfg.model.beta, Ns, cfg.sampler.sweeps, cfg.seed,
                               cfg.sampler.n_batches, cfg.sampler.burn_in, cfg.model.c_d_star, mapper=mp)
    rows = [{"N": r.N, **_est_row(r.variance), "bound": r.bound} for r in tab.rows]
    out.write_csv("largen.csv", ["N", "estimate", "stderr", "n_eff", "bound"], rows)
    summary = {"slope": tab.slope, "slope_err": tab.slope_err, "strictly_decreasing": tab.strictly_decreasing()}
    out.write_json("largen.json", summary)
    out.write_manifest(cfg, {"streams": list(range(len(Ns))), "summary": summary})
    return RunOutcome("complete", out.root, summary)


def run_factorization(cfg: RunConfig, out: OutputDir) -> RunOutcome:
    Ns = _param(cfg, "N_values", [2, 4, 8])
    with _mapper(cfg.threads) as mp:
        rows_ = ex.factorization_check(cfg.geometry.d, cfg.geometry.L, cfg.model.beta, Ns, None,
                                       cfg.sampler.sweeps, cfg.seed, cfg.sampler.n_batches, cfg.sampler.burn_in,
                                       mapper=mp)
    rows = [{"N": r.N, **_est_row(r.discrepancy)} for r in rows_]
    out.write_csv("factorization.csv", ["N", "estimate", "stderr", "n_eff"], rows)
    out.write_manifest(cfg, {"streams": list(range(len(Ns)))})
    return RunOutcome("complete", out.root, {"rows": rows})


def run_beta_derivative(cfg: RunConfig, out: OutputDir) -> RunOutcome:
    geom = geometry_of(cfg)
    p = int(_param(cfg, "plaquette", ex.central_plaquette(geom)))
    if not 0 <= p < geom.n_plaquettes:
        raise ConfigError("experiment.params.plaquette: index out of range")
    delta = float(_param(cfg, "delta", 0.02))
    r = ex.beta_p_derivative_check(geom, coupling_of(cfg, geom), p, None, delta, cfg.sampler.sweeps, cfg.seed,
                                   cfg.sampler.n_batches, cfg.sampler.burn_in)
    row = {"plaquette": p, "delta": delta, "finite_difference": r.finite_difference.mean,
           "fd_stderr": r.finite_difference.stderr, "covariance": r.covariance.mean,
           "cov_stderr": r.covariance.stderr, "discrepancy_sigma": r.discrepancy_sigma,
           "curvature_flag": r.curvature_flag}
    out.write_csv("beta_derivative.csv", list(row), [row])
    out.write_manifest(cfg, {"streams": [0, 999], "result": row})
    return RunOutcome("complete", out.root, row)


def run_cluster_compare(cfg: RunConfig, out: OutputDir) -> RunOutcome:
    geom = geometry_of(cfg)
    coupling = coupling_of(cfg, geom)
    m_max = int(_param(cfg, "m_max", 3))
    nodes = int(_param(cfg, "nodes", 32))
    edge = int(_param(cfg, "edge", 0))
    if not 0 <= edge < geom.n_edges:
        raise ConfigError("experiment.params.edge: index out of range")
    fieldkind = _param(cfg, "field", "haar")
    if fieldkind == "haar":
        Q = haar_sample(coupling.N, "su", make_rng(cfg.seed, 0), geom.n_edges)
    elif fieldkind == "identity":
        Q = np.broadcast_to(np.eye(coupling.N, dtype=complex), (geom.n_edges, coupling.N, coupling.N)).copy()
    else:
        raise ConfigError("experiment.params.field: expected 'haar' or 'identity'")
    res = expand_conditional(geom, LocalObservable.cos_edge(edge), Q, coupling, m_max, nodes,
                             constants=_param(cfg, "constants", "measured"))
    rows = [{"m": m, "contribution": res.contributions[m], "cumulative": res.cumulative[m],
             "error": res.errors[m], "order_bound": res.order_bounds[m], "count": res.counts[m]}
            for m in range(m_max + 1)]
    out.write_csv("cluster_compare.csv", ["m", "contribution", "cumulative", "error", "order_bound", "count"], rows)
    out.write("expansion.json", (res.to_json() + "\n").encode())
    out.write_manifest(cfg, {"streams": [0]})
    return RunOutcome("complete", out.root, {"errors": res.errors})


RUNNERS = {"massgap": run_massgap, "volume": run_volume, "largen": run_largen,
           "factorization": run_factorization, "beta-derivative": run_beta_derivative,
           "cluster-compare": run_cluster_compare}


def run_experiment(cfg: RunConfig, outdir: str | Path, max_sweeps: int | None = None) -> RunOutcome:
    out = OutputDir(outdir)
    if cfg.experiment.name == "sample":
        return run_sample(cfg, out, max_sweeps)
    if max_sweeps is not None:
        raise ConfigError("--max-sweeps: only the sample experiment is checkpointable")
    return RUNNERS[cfg.experiment.name](cfg, out)

"""
Rare-Event Experiments - importance sampling, naive Monte Carlo, decay curves, LLN
===================================================================================
Tilted runs draw X_k from per-step kernels pi_{k,n} and are reweighted by
L = prod_k pi(X_k) / pi_{k,n}(X_k) (times prod_i nu(theta_i) / nu0(theta_i)
when the initial particles come from a reweighted nu0).
"""
import math
from concurrent.futures import Executor
from typing import Optional, Sequence, Tuple, List
import numpy as np
import pandas as pd
from scipy import stats

from config import Config
from core.functionals import replica_expectations, sgd_record_steps, empirical_expectation
from core.meanfield import lln_reference
from core.sgd import simulate_batch, batch_growth_reports, assert_growth_bound
from core.tilt import discretize_kernel
from models.domain import (
    Activation, DataAtomSet, InitialWeightAtomSet, SimConfig, StepKernelSequence, EventSpec,
    ImportanceEstimate, TestFunctional, TiltedKernel,
)
from utils.logger import get_logger

logger = get_logger("rare_events")


def _log_ratio(base: np.ndarray, proposal: np.ndarray) -> np.ndarray:
    """log(base / proposal) elementwise, -inf where base is 0"""
    with np.errstate(divide="ignore"):
        return np.log(base) - np.log(proposal)


def _chunk_values(f: TestFunctional, cfg: SimConfig, nu: InitialWeightAtomSet, pi: DataAtomSet,
                  act: Activation, seed: int, replicas: range, kernels: Optional[np.ndarray],
                  init_probs: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    steps = sgd_record_steps(f, cfg.n, cfg.n_prime)
    batch = simulate_batch(cfg, pi, nu, act, seed, replicas, steps, kernels=kernels, init_probs=init_probs)
    grid = np.array(steps, dtype=float) / cfg.n
    values = replica_expectations(f, grid, batch.snapshots, batch.weights)

    log_w = np.zeros(len(replicas))
    if kernels is not None and cfg.n_prime > 0:
        k = np.arange(cfg.n_prime)
        log_w += _log_ratio(pi.probs[batch.data_indices], kernels[k[None, :], batch.data_indices]).sum(axis=1)
    if init_probs is not None:
        log_w += _log_ratio(nu.probs[batch.init_indices], init_probs[batch.init_indices]).sum(axis=1)
    return values, log_w


def sample_functional_values(f: TestFunctional, cfg: SimConfig, nu: InitialWeightAtomSet, pi: DataAtomSet,
                             act: Activation, replicas: int, seed: int,
                             seq: Optional[StepKernelSequence] = None,
                             init_probs: Optional[np.ndarray] = None,
                             executor: Optional[Executor] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    theta^n(f) for every replica and its log likelihood ratio (0 without tilt).
    Replica r always uses stream (seed, r), whatever the chunking or worker count.
    """
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")
    kernels = None
    if seq is not None:
        if seq.n != cfg.n or seq.n_prime != cfg.n_prime or seq.kernels.shape[1] != pi.size:
            raise ValueError(f"step kernels for n={seq.n}, n'={seq.n_prime} do not match the simulation")
        kernels = np.asarray(seq.kernels)
    if init_probs is not None:
        init_probs = np.asarray(init_probs, dtype=float)
        if init_probs.shape != (nu.size,) or abs(init_probs.sum() - 1.0) > Config.NORMALIZATION_TOL:
            raise ValueError("init_probs must be a probability vector over nu's atoms")

    chunk = Config.REPLICA_CHUNK
    chunks = [range(lo, min(lo + chunk, replicas)) for lo in range(0, replicas, chunk)]
    task = lambda rs: _chunk_values(f, cfg, nu, pi, act, seed, rs, kernels, init_probs)
    results = list(executor.map(task, chunks)) if executor is not None else [task(rs) for rs in chunks]
    return np.concatenate([v for v, _ in results]), np.concatenate([w for _, w in results])


def weighted_estimate(hits: np.ndarray, log_w: np.ndarray, level: float = Config.CI_LEVEL) -> ImportanceEstimate:
    """Weighted mean of the hit indicator with a normal-approximation CI and ESS"""
    weights = np.exp(log_w)
    terms = weights * hits
    replicas = terms.size
    p_hat = float(terms.mean())
    std = float(terms.std(ddof=1)) if replicas > 1 else 0.0
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    total, total_sq = float(weights.sum()), float(np.sum(weights ** 2))
    ess = total ** 2 / total_sq if total_sq > 0 else 0.0
    n_hits = int(hits.sum())
    flagged = n_hits == 0 or ess == 0.0
    return ImportanceEstimate(p_hat=p_hat, ci_halfwidth=z * std / math.sqrt(replicas), ess=ess, std=std,
                              hits=n_hits, replicas=replicas, flagged=flagged)


def importance_sample(event: EventSpec, seq: StepKernelSequence, cfg: SimConfig, nu: InitialWeightAtomSet,
                      pi: DataAtomSet, act: Activation, replicas: int, seed: int,
                      init_probs: Optional[np.ndarray] = None,
                      executor: Optional[Executor] = None) -> ImportanceEstimate:
    """P(theta^n(f) in event) by simulation under per-step kernels, reweighted"""
    values, log_w = sample_functional_values(event.functional, cfg, nu, pi, act, replicas, seed, seq=seq,
                                             init_probs=init_probs, executor=executor)
    estimate = weighted_estimate(event.contains(values).astype(float), log_w)
    if estimate.flagged:
        logger.warning(f"⚠️ Importance sampling: {estimate.hits} hits, ESS {estimate.ess:.3g} at n={cfg.n}")
    return estimate


def naive_mc(event: EventSpec, cfg: SimConfig, nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation,
             replicas: int, seed: int, executor: Optional[Executor] = None) -> ImportanceEstimate:
    """Plain Monte Carlo over independent SGD replicas"""
    values, log_w = sample_functional_values(event.functional, cfg, nu, pi, act, replicas, seed,
                                             executor=executor)
    return weighted_estimate(event.contains(values).astype(float), log_w)


def decay_curve(event: EventSpec, n_list: Sequence[int], method: str, replicas: int, seed: int, T: float,
                nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation,
                tilt: Optional[TiltedKernel] = None, init_probs: Optional[np.ndarray] = None,
                executor: Optional[Executor] = None) -> pd.DataFrame:
    """
    -(1/n') log p_hat per n with CI endpoints mapped through the same transform;
    rows with p_hat = 0 are flagged and carry no rate
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"decay_curve: n_list must be increasing, got {n_list}")
    if method not in ("naive", "tilted"):
        raise ValueError(f"decay_curve: unknown method '{method}'")
    if method == "tilted" and tilt is None:
        raise ValueError("decay_curve: the tilted method needs a kernel")

    rows = []
    for n in n_list:
        cfg = SimConfig(n=n, T=T, d_in=pi.dim_in, seed=seed)
        if method == "tilted":
            est = importance_sample(event, discretize_kernel(tilt, n), cfg, nu, pi, act, replicas, seed,
                                    init_probs=init_probs, executor=executor)
        else:
            est = naive_mc(event, cfg, nu, pi, act, replicas, seed, executor=executor)
        n_prime = cfg.n_prime
        flagged = est.p_hat <= 0.0 or n_prime == 0
        rate = lo = hi = math.nan
        if not flagged:
            rate = -math.log(est.p_hat) / n_prime
            lo = -math.log(est.p_hat + est.ci_halfwidth) / n_prime
            lower_p = est.p_hat - est.ci_halfwidth
            hi = -math.log(lower_p) / n_prime if lower_p > 0 else math.inf
        else:
            logger.warning(f"⚠️ decay_curve: p_hat = 0 at n={n} ({method}), row flagged")
        rows.append({"n": n, "n_prime": n_prime, "p_hat": est.p_hat, "ci_halfwidth": est.ci_halfwidth,
                     "minus_log_p_over_nprime": rate, "rate_ci_low": lo, "rate_ci_high": hi,
                     "ess": est.ess, "flagged": flagged})
    return pd.DataFrame(rows)


def lln_experiment(f: TestFunctional, n_list: Sequence[int], replicas: int, nu: InitialWeightAtomSet,
                   pi: DataAtomSet, act: Activation, dt: float, seed: int, T: float,
                   tol: float = Config.DEFAULT_PICARD_TOL, checked: bool = False,
                   executor: Optional[Executor] = None) -> pd.DataFrame:
    """|theta^n(f) - theta*(f)| over replicas: median and interquartile range per n"""
    reference = empirical_expectation(lln_reference(nu, pi, dt, tol, act, T).cloud, f)
    logger.info(f"LLN reference theta*(f) = {reference:.12g}")
    rows: List[dict] = []
    for n in n_list:
        cfg = SimConfig(n=int(n), T=T, d_in=pi.dim_in, seed=seed)
        errors = np.abs(_replica_values_with_bound(f, cfg, nu, pi, act, replicas, seed, checked, executor) - reference)
        q25, q50, q75 = np.percentile(errors, [25, 50, 75])
        rows.append({"n": int(n), "median_abs_error": float(q50), "iqr": float(q75 - q25)})
        logger.info(f"LLN n={n}: median |error| {q50:.3e}, IQR {q75 - q25:.3e}")
    return pd.DataFrame(rows, columns=["n", "median_abs_error", "iqr"])


def _replica_values_with_bound(f: TestFunctional, cfg: SimConfig, nu: InitialWeightAtomSet, pi: DataAtomSet,
                               act: Activation, replicas: int, seed: int, checked: bool,
                               executor: Optional[Executor]) -> np.ndarray:
    """theta^n(f) per replica, checking the growth bound of every run"""
    steps = sgd_record_steps(f, cfg.n, cfg.n_prime)
    chunk = Config.REPLICA_CHUNK
    chunks = [range(lo, min(lo + chunk, replicas)) for lo in range(0, replicas, chunk)]

    def task(rs: range) -> np.ndarray:
        batch = simulate_batch(cfg, pi, nu, act, seed, rs, steps)
        violations = [r for r in batch_growth_reports(batch, cfg, act, pi, nu) if not r.holds]
        if violations:
            if checked:
                assert_growth_bound(violations[0])
            logger.warning(f"⚠️ growth bound violated on {len(violations)} replicas at n={cfg.n}")
        grid = np.array(steps, dtype=float) / cfg.n
        return replica_expectations(f, grid, batch.snapshots, batch.weights)

    results = list(executor.map(task, chunks)) if executor is not None else [task(rs) for rs in chunks]
    return np.concatenate(results)

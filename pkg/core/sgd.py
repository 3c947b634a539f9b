"""
SGD Engine - interacting n-particle SGD and its pushforward flow
================================================================
theta_k^i = theta_{k-1}^i + (1/n) A(X_k, theta_{k-1}^i; theta_{k-1}^n)
for k = 1..n' = floor(nT), all particles reading the frozen pre-step measure.

Replicas are simulated as vectorized batches; every replica draws from its own
counter-based streams, so a replica's path does not depend on the batch it
ran in.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, List, Tuple
import numpy as np
from scipy.special import rel_entr

from config import Config
from core.network import batch_drift
from models.domain import (
    Activation, DataAtomSet, InitialWeightAtomSet, ParamMeasure, SimConfig,
    TrajectoryMeasure, DataStream, GrowthBoundReport,
)
from utils.logger import get_logger
from utils.rng import stream_generator, Stream

logger = get_logger("sgd")


class InvariantViolation(AssertionError):
    """A runtime invariant failed in checked mode"""


@dataclass
class BatchRun:
    """R replicas of the particle system, recorded at record_steps only"""
    snapshots: np.ndarray  # (R, N, S, d)
    record_steps: List[int]
    path_sup: np.ndarray  # (R, N) sup-norm over every step
    step_sum: np.ndarray  # (R, N) (1/n) sum_k ||A_k||
    data_indices: np.ndarray  # (R, n')
    init_indices: Optional[np.ndarray]  # (R, N) atom indices of sampled particles
    weights: np.ndarray  # (N,)


@dataclass
class SimulationRun:
    """One simulated replica with everything needed to replay it"""
    trajectory: TrajectoryMeasure
    stream: DataStream
    initial: ParamMeasure
    init_indices: np.ndarray
    step_sum: np.ndarray


# =========================================================================
# SAMPLING
# =========================================================================

def inverse_cdf(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    Index drawn from each probability row by inversion of uniforms u.
    rows (S, K) or (K,), u (S,). Atoms with zero mass are never emitted.
    """
    rows = np.broadcast_to(np.atleast_2d(rows), (u.shape[0], np.atleast_2d(rows).shape[1]))
    cdf = np.cumsum(rows, axis=1)
    idx = np.minimum((cdf <= u[:, None]).sum(axis=1), rows.shape[1] - 1)
    picked = rows[np.arange(u.shape[0]), idx]
    bad = np.flatnonzero(picked <= 0)
    for s in bad:
        positive = np.flatnonzero(rows[s] > 0)
        if positive.size == 0:
            raise ValueError(f"inverse_cdf: row {s} has no mass; the sampler cannot emit an atom")
        idx[s] = positive[-1]
    return idx


def draw_data_indices(n_prime: int, seed: int, replica: int, rows: np.ndarray) -> np.ndarray:
    u = stream_generator(seed, replica, Stream.DATA).random(n_prime)
    return inverse_cdf(rows, u)


def draw_initial_indices(n: int, seed: int, replica: int, probs: np.ndarray) -> np.ndarray:
    u = stream_generator(seed, replica, Stream.INITIAL_WEIGHTS).random(n)
    return inverse_cdf(probs, u)


def draw_data_stream(cfg: SimConfig, pi: DataAtomSet, seed: Optional[int] = None, replica: int = 0,
                     kernels: Optional[np.ndarray] = None) -> DataStream:
    """n' data points, i.i.d. pi or one per step kernel"""
    seed = cfg.seed if seed is None else seed
    rows = pi.probs if kernels is None else kernels
    indices = draw_data_indices(cfg.n_prime, seed, replica, rows) if cfg.n_prime > 0 else np.zeros(0, dtype=np.int64)
    return DataStream(indices=indices, source="iid_pi" if kernels is None else "step_kernels", seed=seed)


def draw_initial_measure(cfg: SimConfig, nu: InitialWeightAtomSet, seed: Optional[int] = None,
                         replica: int = 0) -> Tuple[ParamMeasure, np.ndarray]:
    """Empirical measure of n i.i.d. nu particles, with their atom indices"""
    seed = cfg.seed if seed is None else seed
    idx = draw_initial_indices(cfg.n, seed, replica, nu.probs)
    measure = ParamMeasure(points=nu.atoms[idx], weights=np.full(cfg.n, 1.0 / cfg.n))
    return measure, idx


def empirical_initial_entropy(init_indices: np.ndarray, nu: InitialWeightAtomSet) -> float:
    """H(empirical initial measure | nu)"""
    counts = np.bincount(init_indices, minlength=nu.size) / init_indices.size
    return float(np.sum(rel_entr(counts, nu.probs)))


# =========================================================================
# DYNAMICS
# =========================================================================

def evolve_batch(points: np.ndarray, weights: np.ndarray, data_indices: np.ndarray, pi: DataAtomSet,
                 eps: float, act: Activation, record_steps: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Run R particle systems through their data streams.

    points (R, N, d), data_indices (R, n'). Returns snapshots (R, N, S, d) at
    record_steps, running sup-norms (R, N) and (1/n) sum ||A|| (R, N).
    """
    points = np.array(points, dtype=float, copy=True)
    if points.shape[2] != pi.dim_in + 1:
        raise ValueError(f"evolve_batch: parameters of dimension {points.shape[2]} for data of dimension {pi.dim_in}")
    R, N, d = points.shape
    n_prime = data_indices.shape[1]
    record_steps = list(record_steps)
    slot = {k: s for s, k in enumerate(record_steps)}
    snapshots = np.empty((R, N, len(record_steps), d))
    path_sup = np.linalg.norm(points, axis=2)
    step_sum = np.zeros((R, N))
    if 0 in slot:
        snapshots[:, :, slot[0], :] = points

    for k in range(1, n_prime + 1):
        idx = data_indices[:, k - 1]
        drift = batch_drift(points, weights, pi.z[idx], pi.y[idx], act)
        points = points + eps * drift
        step_sum += eps * np.linalg.norm(drift, axis=2)
        np.maximum(path_sup, np.linalg.norm(points, axis=2), out=path_sup)
        if k in slot:
            snapshots[:, :, slot[k], :] = points

    return snapshots, path_sup, step_sum


def sgd_step(state: ParamMeasure, x: Tuple[np.ndarray, float], eps: float, act: Activation) -> ParamMeasure:
    """One simultaneous SGD update of every particle against the frozen state"""
    if eps <= 0:
        raise ValueError(f"sgd_step: eps must be positive, got {eps}")
    z = np.asarray(x[0], dtype=float)
    if z.shape != (state.dim - 1,):
        raise ValueError(f"sgd_step: input of shape {z.shape} for parameters of dimension {state.dim}")
    drift = batch_drift(state.points[None], state.weights, z[None], np.array([float(x[1])]), act)[0]
    return ParamMeasure(points=state.points + eps * drift, weights=state.weights)


def dense_record_steps(cfg: SimConfig, particles: int) -> List[int]:
    """Every step, or strided snapshots (always including n') beyond the memory budget"""
    n_prime = cfg.n_prime
    floats = particles * (n_prime + 1) * (cfg.d_in + 1)
    if floats <= Config.TRAJECTORY_MEMORY_BUDGET:
        return list(range(n_prime + 1))
    stride = int(math.ceil(floats / Config.TRAJECTORY_MEMORY_BUDGET))
    logger.warning(f"Trajectory storage over budget ({floats} floats), keeping every {stride}th step")
    steps = list(range(0, n_prime + 1, stride))
    if steps[-1] != n_prime:
        steps.append(n_prime)
    return steps


def _as_trajectory(snapshots: np.ndarray, record_steps: Sequence[int], weights: np.ndarray, n: int,
                   horizon: float, path_sup: np.ndarray) -> TrajectoryMeasure:
    grid = np.array(record_steps, dtype=float) / n
    return TrajectoryMeasure(grid=grid, paths=snapshots, weights=weights, interpolation="piecewise_constant",
                             horizon=horizon, path_sup=path_sup)


def simulate_batch(cfg: SimConfig, pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation, seed: int,
                   replicas: Sequence[int], record_steps: Sequence[int],
                   kernels: Optional[np.ndarray] = None, init_probs: Optional[np.ndarray] = None) -> BatchRun:
    """
    Simulate the given replicas: n particles from nu (or init_probs over nu's
    atoms) and n' data points from pi (or the per-step kernels), eps = 1/n
    """
    rows = pi.probs if kernels is None else kernels
    probs = nu.probs if init_probs is None else init_probs
    init_idx = np.stack([draw_initial_indices(cfg.n, seed, r, probs) for r in replicas])
    if cfg.n_prime > 0:
        data_idx = np.stack([draw_data_indices(cfg.n_prime, seed, r, rows) for r in replicas])
    else:
        data_idx = np.zeros((len(replicas), 0), dtype=np.int64)
    weights = np.full(cfg.n, 1.0 / cfg.n)
    snapshots, path_sup, step_sum = evolve_batch(nu.atoms[init_idx], weights, data_idx, pi, cfg.eps, act, record_steps)
    return BatchRun(snapshots=snapshots, record_steps=list(record_steps), path_sup=path_sup, step_sum=step_sum,
                    data_indices=data_idx, init_indices=init_idx, weights=weights)


def simulate_run(cfg: SimConfig, pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation,
                 seed: Optional[int] = None, replica: int = 0,
                 record_steps: Optional[Sequence[int]] = None) -> SimulationRun:
    seed = cfg.seed if seed is None else seed
    steps = dense_record_steps(cfg, cfg.n) if record_steps is None else list(record_steps)
    batch = simulate_batch(cfg, pi, nu, act, seed, [replica], steps)
    traj = _as_trajectory(batch.snapshots[0], steps, batch.weights, cfg.n, cfg.T, batch.path_sup[0])
    stream = DataStream(indices=batch.data_indices[0], source="iid_pi", seed=seed)
    initial = ParamMeasure(points=nu.atoms[batch.init_indices[0]], weights=batch.weights)
    return SimulationRun(trajectory=traj, stream=stream, initial=initial,
                         init_indices=batch.init_indices[0], step_sum=batch.step_sum[0])


def simulate_theta_n(cfg: SimConfig, pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation,
                     seed: Optional[int] = None) -> TrajectoryMeasure:
    """Empirical trajectory measure theta^n of one seeded SGD run"""
    return simulate_run(cfg, pi, nu, act, seed).trajectory


def pushforward_eta_n(nu0: ParamMeasure, stream: DataStream, cfg: SimConfig, act: Activation,
                      pi: DataAtomSet, record_steps: Optional[Sequence[int]] = None) -> TrajectoryMeasure:
    """
    Deterministic flow of every atom of nu0 through the SGD maps of the given
    data stream; the atoms keep nu0's weights
    """
    if len(stream) != cfg.n_prime:
        raise ValueError(f"pushforward_eta_n: stream of length {len(stream)} for n'={cfg.n_prime}")
    steps = dense_record_steps(cfg, nu0.points.shape[0]) if record_steps is None else list(record_steps)
    snapshots, path_sup, _ = evolve_batch(nu0.points[None], nu0.weights, stream.indices[None], pi,
                                          cfg.eps, act, steps)
    return _as_trajectory(snapshots[0], steps, nu0.weights, cfg.n, cfg.T, path_sup[0])


# =========================================================================
# GROWTH BOUND
# =========================================================================

def c_bar(c_sigma: float, T: float) -> float:
    """Bound factor on |c|: 2 (1 + T) C_sigma^3 exp(C_sigma^2 T)"""
    return 2.0 * (1.0 + T) * c_sigma ** 3 * math.exp(c_sigma ** 2 * T)


def chain_bound(y1: float, y2: float, z1: float, z2: float, c_sigma: float, c_nu: float, T: float) -> float:
    """
    Bound on (1/n) sum_k ||A_k|| from the moments of the data stream.

    mean |c| <= M = e^{C_s^2 T} (C_nu + C_s Y1)       (Gronwall on the average)
    |c|      <= c_bar (C_nu + Y1)
    |g_k|    <= |Y_k| + C_s M
    ||A_k||  <= |g_k| C_s (1 + |c|) ||(1, Z_k)||
    (1/n) sum |Y_k| ||(1, Z_k)|| <= sqrt(Y2 Z2)       (Cauchy-Schwarz)
    """
    growth = math.exp(c_sigma ** 2 * T)
    mean_c = growth * (c_nu + c_sigma * y1)
    c_max = c_bar(c_sigma, T) * (c_nu + y1)
    return c_sigma * (1.0 + c_max) * (math.sqrt(y2 * z2) + c_sigma * mean_c * z1)


def sgd_constant(c_sigma: float, c_nu: float, c_pi: float, T: float) -> float:
    """
    C_SGD: the chain bound at the largest moments a stream supported in
    B_{C_pi} can have (Y^m, Z^m <= T C_pi^m), scaled by 1/(T^2 + 1)
    """
    worst = chain_bound(T * c_pi, T * c_pi ** 2, T * c_pi, T * c_pi ** 2, c_sigma, c_nu, T)
    return max(1.0, worst / (T ** 2 + 1.0))


def stream_moments(stream: DataStream, pi: DataAtomSet, n: int) -> Tuple[dict, dict]:
    y = np.abs(pi.y[stream.indices])
    z_aug = np.sqrt(1.0 + np.sum(pi.z[stream.indices] ** 2, axis=1))
    y_star = {m: float(np.sum(y ** m) / n) for m in (1, 2, 4)}
    z_star = {m: float(np.sum(z_aug ** m) / n) for m in (1, 2)}
    return y_star, z_star


def _report(stream: DataStream, cfg: SimConfig, act: Activation, pi: DataAtomSet, c_nu: float,
            observed_sup: float, step_sum: np.ndarray) -> GrowthBoundReport:
    y_star, z_star = stream_moments(stream, pi, cfg.n)
    T = cfg.T
    c_sgd = sgd_constant(act.c_sigma, c_nu, pi.c_pi, T)
    return GrowthBoundReport(
        y_star_m=y_star, z_star_m=z_star, c_bar=c_bar(act.c_sigma, T), c_sgd=c_sgd, c_nu=c_nu,
        chain_bound=chain_bound(y_star[1], y_star[2], z_star[1], z_star[2], act.c_sigma, c_nu, T),
        bound=c_nu + c_sgd * (T ** 2 + 1.0) * (1.0 + y_star[4] + z_star[2]),
        observed_sup=observed_sup,
        observed_step_sum=float(np.max(step_sum)) if step_sum.size else 0.0,
    )


def growth_bound_report(traj: TrajectoryMeasure, stream: DataStream, cfg: SimConfig, act: Activation,
                        pi: DataAtomSet, nu: InitialWeightAtomSet,
                        step_sum: Optional[np.ndarray] = None) -> GrowthBoundReport:
    """Explicit growth bound against the observed supremum of ||theta||"""
    c_nu = max(nu.c_nu, float(np.linalg.norm(traj.paths[:, 0, :], axis=1).max()))
    if step_sum is None:
        if traj.grid.size != cfg.n_prime + 1:
            raise ValueError("growth_bound_report: strided trajectories need the recorded step sums")
        step_sum = np.linalg.norm(np.diff(traj.paths, axis=1), axis=2).sum(axis=1)
    return _report(stream, cfg, act, pi, c_nu, float(np.max(traj.path_sup)), step_sum)


def batch_growth_reports(batch: BatchRun, cfg: SimConfig, act: Activation, pi: DataAtomSet,
                         nu: InitialWeightAtomSet) -> List[GrowthBoundReport]:
    """One report per replica of a batch, from its running sup-norms"""
    reports = []
    for r in range(batch.data_indices.shape[0]):
        stream = DataStream(indices=batch.data_indices[r], source="iid_pi")
        reports.append(_report(stream, cfg, act, pi, nu.c_nu, float(np.max(batch.path_sup[r])), batch.step_sum[r]))
    return reports


def assert_growth_bound(report: GrowthBoundReport):
    if not report.holds:
        raise InvariantViolation(
            f"growth bound violated: sup {report.observed_sup:.6g} vs bound {report.bound:.6g}, "
            f"step sum {report.observed_step_sum:.6g} vs chain {report.chain_bound:.6g}"
        )

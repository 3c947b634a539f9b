"""
Mean-Field Solver - tilted McKean-Vlasov evolution by Picard iteration
=======================================================================
For finite nu the law of the tilted evolution is a weighted cloud of
deterministic trajectories, one per atom of nu. zeta^rho integrates every atom
against a FROZEN input cloud; its fixed point solves the evolution.
"""
import math
from typing import Optional, Sequence, Tuple
import numpy as np

from config import Config
from core.network import atom_drift
from core.sgd import InvariantViolation, c_bar
from core.tilt import block_overlaps, base_kernel
from models.domain import (
    Activation, DataAtomSet, InitialWeightAtomSet, TiltedKernel, TrajectoryMeasure,
    MeanFieldSolution, PicardReport,
)
from utils.logger import get_logger

logger = get_logger("meanfield")


class MeanFieldError(RuntimeError):
    """Picard iteration failed even after windowing"""


# =========================================================================
# EXPLICIT CONSTANTS
# =========================================================================

def trajectory_bound(nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation, T: float) -> float:
    """
    C_traj = C_nu + T * sup ||A|| over the reachable set.

    mean |c| <= e^{C_s^2 T} (C_nu + C_s C_pi T), |c| <= c_bar (C_nu + T C_pi),
    ||A|| <= (C_pi + C_s mean|c|) C_s (1 + |c|) C_pi.
    The same recursions bound the explicit Euler iterates and every Picard iterate.
    """
    if T < 0:
        raise ValueError(f"trajectory_bound: T must be non-negative, got {T}")
    cs, cn, cp = act.c_sigma, nu.c_nu, pi.c_pi
    mean_c = math.exp(cs ** 2 * T) * (cn + cs * cp * T)
    c_max = c_bar(cs, T) * (cn + T * cp)
    drift_sup = (cp + cs * mean_c) * cs * (1.0 + c_max) * cp
    return cn + T * drift_sup


def contraction_constant_from(c_sigma: float, l_sigma: float, c_pi: float, c_traj: float) -> float:
    """C = C1 + C2, C1 = 2 C_s^2 C_traj L_s C_pi^2, C2 = 2 C_traj^2 C_pi^3 C_s^2 L_s"""
    c1 = 2.0 * c_sigma ** 2 * c_traj * l_sigma * c_pi ** 2
    c2 = 2.0 * c_traj ** 2 * c_pi ** 3 * c_sigma ** 2 * l_sigma
    return c1 + c2


def contraction_constant(nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation, T: float) -> float:
    c_traj = trajectory_bound(nu, pi, act, T)
    return contraction_constant_from(act.c_sigma, act.l_sigma, pi.c_pi, c_traj)


def contraction_horizon(c_contr: float, T: float) -> float:
    """T0 = min(T, 1/(2C)), so T0 * C <= 1/2"""
    return min(T, 1.0 / (2.0 * c_contr))


# =========================================================================
# GRID AND KERNEL ROWS
# =========================================================================

def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid over [0, T] with step at most dt"""
    if dt <= 0 or T <= 0:
        raise ValueError(f"time_grid: need T > 0 and dt > 0, got T={T}, dt={dt}")
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, steps + 1)


def cell_rows(rho: TiltedKernel, grid: np.ndarray) -> np.ndarray:
    """Average of rho_t over every grid cell [t_s, t_{s+1}], shape (S, K)"""
    if abs(rho.horizon - grid[-1]) > Config.NORMALIZATION_TOL * max(1.0, rho.horizon):
        raise ValueError(f"kernel horizon {rho.horizon} does not match the grid horizon {grid[-1]}")
    overlap = block_overlaps(grid[:-1], grid[1:], rho.block_edges)
    return (overlap / overlap.sum(axis=1, keepdims=True)) @ rho.probs


def constant_cloud(nu: InitialWeightAtomSet, grid: np.ndarray) -> np.ndarray:
    """eta_t = nu for all t, as paths (M, G, d)"""
    return np.repeat(np.asarray(nu.atoms)[:, None, :], grid.size, axis=1)


def _solution(paths: np.ndarray, grid: np.ndarray, nu: InitialWeightAtomSet, c_traj: float) -> MeanFieldSolution:
    cloud = TrajectoryMeasure(grid=grid, paths=paths, weights=nu.probs, interpolation="piecewise_linear",
                              horizon=float(grid[-1]))
    return MeanFieldSolution(cloud=cloud, dt=float(grid[1] - grid[0]), c_traj=c_traj)


def initial_solution(nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation, T: float,
                     dt: float) -> MeanFieldSolution:
    """The Picard starting point eta^0_t = nu"""
    grid = time_grid(T, dt)
    return _solution(constant_cloud(nu, grid), grid, nu, trajectory_bound(nu, pi, act, T))


# =========================================================================
# ZETA MAP
# =========================================================================

def _integrate(paths: np.ndarray, frozen: np.ndarray, weights: np.ndarray, rows: np.ndarray,
               pi: DataAtomSet, act: Activation, dt: float, s0: int, s1: int) -> np.ndarray:
    """Euler from paths[:, s0] to step s1 against the frozen cloud; returns a new path array"""
    out = np.array(paths, copy=True)
    for s in range(s0, s1):
        drift = atom_drift(out[:, s, :], frozen[:, s, :], weights, pi, rows[s], act)
        out[:, s + 1, :] = out[:, s, :] + dt * drift
    return out


def zeta_map(eta: MeanFieldSolution, rho: TiltedKernel, nu: InitialWeightAtomSet, pi: DataAtomSet,
             act: Activation) -> MeanFieldSolution:
    """
    One application of zeta^rho: every nu atom integrated by explicit Euler
    against the time marginals of the frozen input cloud eta
    """
    grid = eta.cloud.grid
    frozen = np.asarray(eta.cloud.paths)
    if frozen.shape[0] != nu.size or frozen.shape[2] != nu.dim:
        raise ValueError(f"zeta_map: cloud of shape {frozen.shape} for nu with {nu.size} atoms in R^{nu.dim}")
    if nu.dim != pi.dim_in + 1 or rho.probs.shape[1] != pi.size:
        raise ValueError("zeta_map: kernel, data and parameter dimensions disagree")
    rows = cell_rows(rho, grid)
    start = constant_cloud(nu, grid)
    paths = _integrate(start, frozen, nu.probs, rows, pi, act, eta.dt, 0, grid.size - 1)
    return _solution(paths, grid, nu, eta.c_traj)


def _sup_gap(a: np.ndarray, b: np.ndarray, weights: np.ndarray, upto: int) -> float:
    sup_sq = np.max(np.sum((a[:, :upto + 1, :] - b[:, :upto + 1, :]) ** 2, axis=2), axis=1)
    return float(math.sqrt(weights @ sup_sq))


def wasserstein_D(eta1: MeanFieldSolution, eta2: MeanFieldSolution, T0: float) -> float:
    """
    D_{T0} under the synchronous coupling:
    (sum_j w_j sup_{t <= T0} ||eta1_j(t) - eta2_j(t)||^2)^(1/2)
    """
    c1, c2 = eta1.cloud, eta2.cloud
    if c1.paths.shape != c2.paths.shape or not np.array_equal(c1.grid, c2.grid):
        raise ValueError("wasserstein_D: clouds live on different grids or atom sets")
    if not np.array_equal(c1.weights, c2.weights):
        raise ValueError("wasserstein_D: clouds carry different atom weights")
    upto = int(np.searchsorted(c1.grid, T0 + 1e-12, side="right")) - 1
    return _sup_gap(np.asarray(c1.paths), np.asarray(c2.paths), np.asarray(c1.weights), max(upto, 0))


# =========================================================================
# PICARD ITERATION
# =========================================================================

def _stalled(ratios: Sequence[float]) -> bool:
    window = Config.PICARD_STALL_WINDOW
    return len(ratios) >= window and all(r >= 1.0 for r in ratios[-window:])


def _iterate_window(paths: np.ndarray, weights: np.ndarray, rows: np.ndarray, pi: DataAtomSet,
                    act: Activation, dt: float, s0: int, s1: int, tol: float, max_iter: int,
                    damping: float, gaps: list, ratios: list, stop_on_stall: bool) -> Tuple[np.ndarray, int, bool]:
    """Picard on steps s0..s1 with everything before s0 held fixed"""
    for it in range(1, max_iter + 1):
        new = _integrate(paths, paths, weights, rows, pi, act, dt, s0, s1)
        if damping > 0:
            new[:, s0 + 1:s1 + 1] = (1.0 - damping) * new[:, s0 + 1:s1 + 1] + damping * paths[:, s0 + 1:s1 + 1]
        gap = _sup_gap(new[:, s0:], paths[:, s0:], weights, s1 - s0)
        # one ratio per gap; the chain restarts with every window
        previous = gaps[-1] if it > 1 else 0.0
        ratios.append(gap / previous if previous > 0 else math.nan)
        gaps.append(gap)
        paths = new
        if gap < tol:
            return paths, it, True
        if stop_on_stall and _stalled(ratios):
            return paths, it, False
    return paths, max_iter, False


def picard_solve(rho: TiltedKernel, nu: InitialWeightAtomSet, pi: DataAtomSet, dt: float, tol: float,
                 max_iter: int, act: Activation, damping: float = Config.DEFAULT_DAMPING,
                 init: Optional[MeanFieldSolution] = None,
                 checked: bool = False) -> Tuple[MeanFieldSolution, PicardReport]:
    """
    Fixed point of zeta^rho from eta^0 = nu (or a warm start), whole horizon
    first; on a stall, sequential windows of length T0 = min(T, 1/(2C))
    """
    if tol <= 0:
        raise ValueError(f"picard_solve: tol must be positive, got {tol}")
    if not 0.0 <= damping < 1.0:
        raise ValueError(f"picard_solve: damping must lie in [0, 1), got {damping}")
    T = rho.horizon
    grid = time_grid(T, dt)
    step = float(grid[1] - grid[0])
    rows = cell_rows(rho, grid)
    c_traj = trajectory_bound(nu, pi, act, T)
    c_contr = contraction_constant_from(act.c_sigma, act.l_sigma, pi.c_pi, c_traj)
    weights = np.asarray(nu.probs)

    if init is not None:
        if init.cloud.paths.shape != (nu.size, grid.size, nu.dim):
            raise ValueError("picard_solve: warm start does not match the solver grid")
        paths = np.array(init.cloud.paths, copy=True)
        paths[:, 0, :] = nu.atoms
    else:
        paths = constant_cloud(nu, grid)

    gaps, ratios = [], []
    paths, iterations, converged = _iterate_window(paths, weights, rows, pi, act, step, 0, grid.size - 1,
                                                   tol, max_iter, damping, gaps, ratios, stop_on_stall=True)
    status, windows, t0 = "converged", 1, None

    if not converged:
        t0 = contraction_horizon(c_contr, T)
        width = max(1, int(math.floor(t0 / step + 1e-9)))
        logger.warning(f"⚠️ Picard stalled after {iterations} iterations (last gap {gaps[-1]:.3e}), "
                       f"windowing with T0={t0:.4g} ({width} steps)")
        paths = constant_cloud(nu, grid)
        converged, windows = True, 0
        for s0 in range(0, grid.size - 1, width):
            s1 = min(s0 + width, grid.size - 1)
            paths, used, ok = _iterate_window(paths, weights, rows, pi, act, step, s0, s1, tol, max_iter,
                                              damping, gaps, ratios, stop_on_stall=False)
            iterations += used
            windows += 1
            converged = converged and ok
        status = "converged_windowed" if converged else "failed"

    solution = _solution(paths, grid, nu, c_traj)
    report = PicardReport(iterations=iterations, gaps=gaps, contraction_ratios=ratios, c_contr=c_contr,
                          converged=converged, status=status, windows=windows, t0=t0)
    if converged:
        logger.info(f"Picard {status} in {iterations} iterations, last gap {gaps[-1]:.3e}")
    else:
        logger.error(f"❌ Picard failed after {iterations} iterations, last gap {gaps[-1]:.3e}")

    observed = float(np.max(solution.cloud.path_sup))
    if observed > c_traj:
        msg = f"mean-field trajectory norm {observed:.6g} exceeds C_traj {c_traj:.6g}"
        if checked:
            raise InvariantViolation(msg)
        logger.warning(msg)
    return solution, report


def lln_reference(nu: InitialWeightAtomSet, pi: DataAtomSet, dt: float, tol: float, act: Activation,
                  T: float, max_iter: int = Config.DEFAULT_PICARD_MAX_ITER,
                  damping: float = Config.DEFAULT_DAMPING) -> MeanFieldSolution:
    """Untilted mean-field limit theta* (rho_t = pi, R = 0)"""
    solution, report = picard_solve(base_kernel(pi, T), nu, pi, dt, tol, max_iter, act, damping=damping)
    if not report.converged:
        raise MeanFieldError(f"LLN reference did not converge (last gap {report.gaps[-1]:.3e})")
    return solution


# =========================================================================
# RESIDUAL DIAGNOSTIC
# =========================================================================

def _monomial(points: np.ndarray, coords: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
    """Value and gradient of prod_{i in coords} theta_i; points (..., d)"""
    grad = np.zeros_like(points)
    if len(coords) == 1:
        (i,) = coords
        grad[..., i] = 1.0
        return points[..., i], grad
    i, j = coords
    grad[..., i] += points[..., j]
    grad[..., j] += points[..., i]
    return points[..., i] * points[..., j], grad


def evt_residual(eta: MeanFieldSolution, rho: TiltedKernel, coords: Tuple[int, ...], act: Activation,
                 pi: DataAtomSet) -> float:
    """
    Weighted mean over atoms of max_t |f(theta_t) - f(theta_0) - int_0^t b.grad f ds|
    for a first or second order monomial f; the integral is trapezoidal on the
    grid, so an exact solution leaves only the Euler error O(dt)
    """
    coords = tuple(int(c) for c in coords)
    if len(coords) not in (1, 2) or any(c < 0 or c >= eta.cloud.dim for c in coords):
        raise ValueError(f"evt_residual: unsupported monomial {coords}")
    grid = eta.cloud.grid
    paths = np.asarray(eta.cloud.paths)
    weights = np.asarray(eta.cloud.weights)
    rows = cell_rows(rho, grid)
    dt = eta.dt

    values, grads = _monomial(paths, coords)
    cum = np.zeros(paths.shape[:2])
    for s in range(grid.size - 1):
        left = atom_drift(paths[:, s, :], paths[:, s, :], weights, pi, rows[s], act)
        right = atom_drift(paths[:, s + 1, :], paths[:, s + 1, :], weights, pi, rows[s], act)
        inc = 0.5 * dt * (np.sum(left * grads[:, s, :], axis=1) + np.sum(right * grads[:, s + 1, :], axis=1))
        cum[:, s + 1] = cum[:, s] + inc
    residual = np.abs(values - values[:, :1] - cum).max(axis=1)
    return float(weights @ residual)

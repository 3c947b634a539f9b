"""
Domain Models for MFLDP
All value types of the laboratory as dataclasses. Array fields are frozen
(non-writeable) after construction so values can be shared across workers.
"""
from dataclasses import dataclass, field
from typing import Optional, Dict, List, Tuple
import numpy as np

from config import Config

GRID_TIME_TOL = 1e-12


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_probability_vector(probs: np.ndarray, name: str):
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"{name}: expected a non-empty probability vector")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ValueError(f"{name}: probabilities must be finite and non-negative")
    if abs(probs.sum() - 1.0) > Config.NORMALIZATION_TOL:
        raise ValueError(f"{name}: probabilities sum to {probs.sum():.17g}, not 1 (normalization)")


@dataclass(frozen=True)
class Activation:
    """
    Bounded activation sigma with uniform bound C_sigma and shared Lipschitz
    constant L_sigma for sigma and sigma' (condition (CONT))
    """
    kind: str  # tanh, logistic
    c_sigma: float
    l_sigma: float

    def __post_init__(self):
        if self.kind not in Config.ACTIVATION_CONSTANTS:
            reason = Config.REJECTED_ACTIVATIONS.get(self.kind, f"(CONT) unknown activation '{self.kind}'")
            raise ValueError(reason)
        if self.c_sigma < 1 or self.l_sigma <= 1:
            raise ValueError("(CONT) requires C_sigma >= 1 and L_sigma > 1")


@dataclass(frozen=True)
class DataAtomSet:
    """
    Finite data distribution pi over atoms (z, y). Compact support and the
    moment condition (DEXP) hold automatically.
    """
    z: np.ndarray  # (K, d')
    y: np.ndarray  # (K,)
    probs: np.ndarray  # (K,)
    c_pi: float = field(init=False)

    def __post_init__(self):
        z = _frozen(self.z)
        if z.ndim == 1:
            z = _frozen(z.reshape(-1, 1))
        y = _frozen(self.y)
        probs = _frozen(self.probs)
        if z.ndim != 2 or y.shape != (z.shape[0],) or probs.shape != y.shape:
            raise ValueError(f"DataAtomSet: inconsistent shapes z={z.shape}, y={y.shape}, probs={probs.shape}")
        _check_probability_vector(probs, "DataAtomSet.probs")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "probs", probs)
        augmented = np.sqrt(1.0 + np.sum(z * z, axis=1))
        object.__setattr__(self, "c_pi", float(max(augmented.max(), np.abs(y).max(), 1.0)))

    @property
    def dim_in(self) -> int:
        return int(self.z.shape[1])

    @property
    def size(self) -> int:
        return int(self.y.shape[0])


@dataclass(frozen=True)
class InitialWeightAtomSet:
    """Finite initial weight distribution nu over theta = (c, w) with compact support"""
    atoms: np.ndarray  # (M, d), column 0 is c
    probs: np.ndarray  # (M,)
    c_nu: float = field(init=False)

    def __post_init__(self):
        atoms = _frozen(self.atoms)
        probs = _frozen(self.probs)
        if atoms.ndim != 2 or atoms.shape[1] < 2 or probs.shape != (atoms.shape[0],):
            raise ValueError(f"InitialWeightAtomSet: inconsistent shapes atoms={atoms.shape}, probs={probs.shape}")
        _check_probability_vector(probs, "InitialWeightAtomSet.probs")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        # radius of the support ball, at least 1 as (WCOMP) requires
        object.__setattr__(self, "c_nu", float(max(np.linalg.norm(atoms, axis=1).max(), 1.0)))

    @property
    def dim(self) -> int:
        return int(self.atoms.shape[1])

    @property
    def size(self) -> int:
        return int(self.atoms.shape[0])


@dataclass(frozen=True)
class ParamMeasure:
    """Weighted atom cloud over parameter space R^d"""
    points: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)

    def __post_init__(self):
        points = _frozen(self.points)
        weights = _frozen(self.weights)
        if points.ndim != 2 or weights.shape != (points.shape[0],):
            raise ValueError(f"ParamMeasure: inconsistent shapes points={points.shape}, weights={weights.shape}")
        _check_probability_vector(weights, "ParamMeasure.weights")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True)
class SimConfig:
    """
    n particles = inverse learning rate, horizon T, input dimension d'.
    n' = floor(n T) is always recomputed.
    """
    n: int
    T: float
    d_in: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"SimConfig: n must be >= 1, got {self.n}")
        if not self.T > 0:
            raise ValueError(f"SimConfig: T must be positive, got {self.T}")
        if self.d_in < 1:
            raise ValueError(f"SimConfig: d_in must be >= 1, got {self.d_in}")

    @property
    def n_prime(self) -> int:
        return int(np.floor(self.n * self.T))

    @property
    def eps(self) -> float:
        return 1.0 / self.n


@dataclass(frozen=True)
class TrajectoryMeasure:
    """
    Weighted collection of time-gridded parameter trajectories.
    piecewise_constant: value on [t_k, t_{k+1}) is the value at t_k (SGD output);
    piecewise_linear: linear between grid times (mean-field solutions).
    """
    grid: np.ndarray  # (G,)
    paths: np.ndarray  # (N, G, d)
    weights: np.ndarray  # (N,)
    interpolation: str = "piecewise_constant"
    horizon: Optional[float] = None
    path_sup: Optional[np.ndarray] = None  # (N,) sup-norm over all steps, strided storage included

    def __post_init__(self):
        grid = _frozen(self.grid)
        paths = _frozen(self.paths)
        weights = _frozen(self.weights)
        if paths.ndim != 3 or paths.shape[1] != grid.shape[0] or weights.shape != (paths.shape[0],):
            raise ValueError(f"TrajectoryMeasure: inconsistent shapes grid={grid.shape}, paths={paths.shape}")
        if self.interpolation not in ("piecewise_constant", "piecewise_linear"):
            raise ValueError(f"TrajectoryMeasure: unknown interpolation '{self.interpolation}'")
        _check_probability_vector(weights, "TrajectoryMeasure.weights")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "weights", weights)
        if self.horizon is None:
            object.__setattr__(self, "horizon", float(grid[-1]))
        sup = self.path_sup
        if sup is None:
            sup = np.linalg.norm(paths, axis=2).max(axis=1)
        object.__setattr__(self, "path_sup", _frozen(sup))

    @property
    def dim(self) -> int:
        return int(self.paths.shape[2])


def grid_position(grid: np.ndarray, t: float) -> Tuple[int, float]:
    """
    (k, lam) with grid[k] <= t < grid[k+1] and lam the linear position inside
    the cell; times within GRID_TIME_TOL of a grid point snap to it
    """
    tol = GRID_TIME_TOL * max(1.0, abs(t))
    t = min(max(t, grid[0]), grid[-1])
    k = int(np.searchsorted(grid, t + tol, side="right")) - 1
    k = min(max(k, 0), grid.size - 1)
    if k >= grid.size - 1 or abs(t - grid[k]) <= tol:
        return k, 0.0
    return k, float((t - grid[k]) / (grid[k + 1] - grid[k]))


def marginal_on_grid(grid: np.ndarray, paths: np.ndarray, t: float, interpolation: str) -> np.ndarray:
    """Time-t marginal of paths shaped (..., N, G, d)"""
    k, lam = grid_position(grid, t)
    if interpolation == "piecewise_constant" or lam == 0.0:
        return paths[..., k, :]
    return (1.0 - lam) * paths[..., k, :] + lam * paths[..., k + 1, :]


@dataclass(frozen=True)
class DataStream:
    """Sequence of n' data-atom indices fed to SGD"""
    indices: np.ndarray  # (n',) ints into DataAtomSet
    source: str = "iid_pi"  # iid_pi or step_kernels
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "indices", _frozen(self.indices, dtype=np.int64))
        if self.source not in ("iid_pi", "step_kernels"):
            raise ValueError(f"DataStream: unknown source '{self.source}'")

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class GrowthBoundReport:
    """Explicit growth bound on SGD weights and the observed supremum"""
    y_star_m: Dict[int, float]  # m in {1, 2, 4}
    z_star_m: Dict[int, float]  # m in {1, 2}
    c_bar: float
    c_sgd: float
    c_nu: float
    chain_bound: float  # data-dependent bound on (1/n) sum ||A||
    bound: float
    observed_sup: float
    observed_step_sum: float

    @property
    def holds(self) -> bool:
        return self.observed_sup <= self.bound and self.observed_step_sum <= self.chain_bound

    @property
    def slack(self) -> float:
        return self.bound / self.observed_sup if self.observed_sup > 0 else float("inf")


@dataclass(frozen=True)
class TiltedKernel:
    """
    rho(dt, dx) = dt x rho_t(dx) with rho_t constant on each block
    [s_b, s_{b+1}) of [0, T].
    """
    horizon: float
    block_edges: np.ndarray  # (B+1,)
    probs: np.ndarray  # (B, K)

    def __post_init__(self):
        edges = _frozen(self.block_edges)
        probs = _frozen(self.probs)
        if probs.ndim == 1:
            probs = _frozen(probs.reshape(1, -1))
        if edges.ndim != 1 or edges.size != probs.shape[0] + 1:
            raise ValueError(f"TiltedKernel: {edges.size} edges for {probs.shape[0]} blocks")
        if edges[0] != 0.0 or abs(edges[-1] - self.horizon) > Config.NORMALIZATION_TOL or np.any(np.diff(edges) <= 0):
            raise ValueError("TiltedKernel: block edges must increase from 0 to T")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > Config.NORMALIZATION_TOL):
            raise ValueError("TiltedKernel: every block row must be a probability vector (normalization)")
        object.__setattr__(self, "block_edges", edges)
        object.__setattr__(self, "probs", probs)

    @property
    def blocks(self) -> int:
        return int(self.probs.shape[0])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.block_edges)

    def row_at(self, t: float) -> np.ndarray:
        b = int(np.searchsorted(self.block_edges, t, side="right")) - 1
        return self.probs[min(max(b, 0), self.blocks - 1)]


@dataclass(frozen=True)
class StepKernelSequence:
    """Per-step data kernels pi_{k,n}, k = 1..n'"""
    n: int
    horizon: float
    kernels: np.ndarray  # (n', K)

    def __post_init__(self):
        kernels = _frozen(self.kernels)
        if kernels.ndim != 2:
            raise ValueError("StepKernelSequence: kernels must be a matrix")
        if kernels.shape[0] != int(np.floor(self.n * self.horizon)):
            raise ValueError(f"StepKernelSequence: {kernels.shape[0]} kernels for n'={int(np.floor(self.n * self.horizon))}")
        if np.any(kernels < 0) or np.any(np.abs(kernels.sum(axis=1) - 1.0) > Config.NORMALIZATION_TOL):
            raise ValueError("StepKernelSequence: every kernel must be a probability vector (normalization)")
        object.__setattr__(self, "kernels", kernels)

    @property
    def n_prime(self) -> int:
        return int(self.kernels.shape[0])


@dataclass(frozen=True)
class TestFunctional:
    """
    Bounded continuous functional of finitely many time marginals:
    constant: f = 1
    tanh_marginal: f(w) = tanh(a <v, w_t> + b)
    tanh_window: average of tanh(a <v, w_s> + b) over grid times s in [t0, t1]
    """
    __test__ = False  # not a pytest class

    kind: str
    a: float = 1.0
    v: Tuple[float, ...] = (1.0,)
    b: float = 0.0
    t: float = 0.0
    window: Optional[Tuple[float, float]] = None
    name: str = ""


@dataclass(frozen=True)
class MeanFieldSolution:
    """Law of the tilted evolution as a weighted cloud of deterministic trajectories"""
    cloud: TrajectoryMeasure
    dt: float
    c_traj: float


@dataclass
class PicardReport:
    """Convergence record of the Picard iteration of zeta^rho"""
    iterations: int
    gaps: List[float]
    contraction_ratios: List[float]
    c_contr: float
    converged: bool
    status: str = "converged"  # converged, converged_windowed, failed
    windows: int = 1
    t0: Optional[float] = None


@dataclass(frozen=True)
class EventSpec:
    """Event {theta(f) >= a} or {theta(f) <= a}"""
    functional: TestFunctional
    threshold: float
    direction: str = "geq"

    def __post_init__(self):
        if self.direction not in ("geq", "leq"):
            raise ValueError(f"EventSpec: unknown direction '{self.direction}'")

    def contains(self, values: np.ndarray) -> np.ndarray:
        if self.direction == "geq":
            return values >= self.threshold
        return values <= self.threshold


@dataclass(frozen=True)
class OptimizerStep:
    """
    One outer step of the rate optimizer. Both objectives are the augmented
    Lagrangian at this step's weight and multiplier, before and after the
    inner solve; a rejected inner result leaves the start point in place.
    """
    outer: int
    weight: float
    multiplier: float
    start_objective: float
    objective: float
    gap: float
    accepted: bool


@dataclass
class RateEstimate:
    """
    Variational upper bound of a rate function (I_nu or J) at a boundary value
    """
    kind: str  # I or J
    value: float
    entropy_cost: float
    init_cost: float
    constraint_gap: float
    target: float
    tilt: TiltedKernel
    nu0: InitialWeightAtomSet
    status: str  # feasible, infeasible
    optimizer_trace: List[OptimizerStep] = field(default_factory=list)
    upper_bound: bool = True


@dataclass(frozen=True)
class OptimizerConfig:
    """Penalty-method settings of the rate-function estimators"""
    blocks: int = 1
    outer_iterations: int = Config.OPT_OUTER_ITERATIONS
    initial_penalty: float = Config.OPT_INITIAL_PENALTY
    inner_iterations: int = Config.OPT_INNER_ITERATIONS
    fd_step: float = Config.OPT_FD_STEP
    feasibility_tol: float = Config.OPT_FEASIBILITY_TOL
    gradient_tol: float = Config.OPT_GRADIENT_TOL
    dt: float = Config.DEFAULT_DT
    picard_tol: float = 1e-10
    picard_max_iter: int = Config.DEFAULT_PICARD_MAX_ITER
    damping: float = Config.DEFAULT_DAMPING

    def __post_init__(self):
        if self.blocks < 1 or self.outer_iterations < 1 or self.inner_iterations < 1:
            raise ValueError("OptimizerConfig: blocks and iteration counts must be positive")
        if self.fd_step <= 0 or self.feasibility_tol <= 0 or self.initial_penalty <= 0:
            raise ValueError("OptimizerConfig: fd_step, feasibility_tol and initial_penalty must be positive")


@dataclass
class ImportanceEstimate:
    """Weighted Monte Carlo estimate of an event probability"""
    p_hat: float
    ci_halfwidth: float
    ess: float
    std: float
    hits: int
    replicas: int
    flagged: bool = False


@dataclass
class CheckResult:
    """Outcome of one invariant check"""
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

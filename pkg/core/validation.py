"""
Invariant Suite - every computable statement of the theory as a runnable check
==============================================================================
Each check returns a CheckResult (name, passed, observed value, limit); the
suite runs them all and reports a pass/fail table.
"""
import math
from typing import List, Tuple, Optional
import numpy as np

from config import Config
from core.functionals import make_functional
from core.meanfield import (
    picard_solve, zeta_map, wasserstein_D, contraction_constant, contraction_horizon, evt_residual,
    initial_solution,
)
from core.network import gradient_A, single_sample_loss, make_activation
from core.rare_events import importance_sample, naive_mc
from core.sgd import simulate_run, pushforward_eta_n, growth_bound_report, sgd_step
from core.tilt import (
    check_entropy_inequality, discretize_kernel, steps_to_kernel, step_entropy, relative_entropy_R,
    base_kernel, uniform_blocks,
)
from models.domain import (
    Activation, DataAtomSet, InitialWeightAtomSet, ParamMeasure, SimConfig, CheckResult, EventSpec,
)
from utils.logger import get_logger
from utils.rng import stream_generator, Stream

logger = get_logger("validation")


def desk_instance(seed: int = 0, data_atoms: int = 4, weight_atoms: int = 8,
                  d_in: int = 2) -> Tuple[DataAtomSet, InitialWeightAtomSet]:
    """Seeded desk-scale instance: labels from a planted network on random inputs"""
    rng = stream_generator(seed, 0, Stream.AUXILIARY)
    z = rng.uniform(-1.0, 1.0, size=(data_atoms, d_in))
    direction = rng.normal(size=d_in)
    y = np.tanh(z @ direction) + 0.1 * rng.normal(size=data_atoms)
    pi = DataAtomSet(z=z, y=y, probs=rng.dirichlet(np.full(data_atoms, 2.0)))
    atoms = rng.uniform(-0.5, 0.5, size=(weight_atoms, d_in + 1))
    nu = InitialWeightAtomSet(atoms=atoms, probs=rng.dirichlet(np.full(weight_atoms, 2.0)))
    return pi, nu


def _random_measure(rng: np.random.Generator, n: int, d: int) -> ParamMeasure:
    return ParamMeasure(points=rng.uniform(-1.0, 1.0, size=(n, d)), weights=np.full(n, 1.0 / n))


def _random_probs(rng: np.random.Generator, size: int) -> np.ndarray:
    p = rng.dirichlet(np.ones(size))
    return p / p.sum()


class InvariantSuite:
    """
    Runs the invariant checks on one (pi, nu, act) instance.

    The checks are deterministic given the seed; none of them depends on the
    worker count.
    """

    def __init__(self, pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation, T: float = 0.5,
                 dt: float = Config.DEFAULT_DT, seed: int = 0):
        self.pi = pi
        self.nu = nu
        self.act = act
        self.T = T
        self.dt = dt
        self.seed = seed
        logger.info(f"Invariant suite initialized (T={T}, dt={dt}, seed={seed})")

    # =========================================================================
    # MODEL CORE
    # =========================================================================

    def check_gradient_oracle(self, instances: int = 100, h: float = 1e-6) -> CheckResult:
        """gradient_A against -n x central differences of the one-sample loss"""
        rng = stream_generator(self.seed, 1, Stream.AUXILIARY)
        worst = 0.0
        for _ in range(instances):
            d_in = int(rng.integers(1, 4))
            n = int(rng.integers(1, 6))
            mu = _random_measure(rng, n, d_in + 1)
            x = (rng.uniform(-1.0, 1.0, size=d_in), float(rng.uniform(-2.0, 2.0)))
            i = int(rng.integers(0, n))
            analytic = gradient_A(x, mu.points[i], mu, self.act)
            numeric = np.empty(d_in + 1)
            for c in range(d_in + 1):
                up = np.array(mu.points, copy=True)
                down = np.array(mu.points, copy=True)
                up[i, c] += h
                down[i, c] -= h
                diff = single_sample_loss(x, up, self.act) - single_sample_loss(x, down, self.act)
                numeric[c] = -n * diff / (2.0 * h)
            rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), 1e-2)
            worst = max(worst, float(rel))
        return CheckResult("gradient_oracle", worst < 1e-5, worst, 1e-5, f"{instances} instances")

    # =========================================================================
    # SGD ENGINE
    # =========================================================================

    def check_simultaneity(self) -> CheckResult:
        rng = stream_generator(self.seed, 2, Stream.AUXILIARY)
        mu = _random_measure(rng, 5, self.pi.dim_in + 1)
        x = (self.pi.z[0], float(self.pi.y[0]))
        out = sgd_step(mu, x, 0.1, self.act)
        reversed_mu = ParamMeasure(points=mu.points[::-1], weights=mu.weights[::-1])
        out_rev = sgd_step(reversed_mu, x, 0.1, self.act)
        dev = float(np.max(np.abs(out.points - out_rev.points[::-1])))
        return CheckResult("simultaneity", dev == 0.0, dev, 0.0, "reversed storage order")

    def check_representation_identity(self, n: int = 100, T: float = 1.0) -> Tuple[CheckResult, CheckResult]:
        """pushforward of the sampled initial measure along the recorded stream vs theta^n"""
        cfg = SimConfig(n=n, T=T, d_in=self.pi.dim_in, seed=self.seed)
        run = simulate_run(cfg, self.pi, self.nu, self.act)
        eta = pushforward_eta_n(run.initial, run.stream, cfg, self.act, self.pi)
        dev = float(np.max(np.abs(eta.paths - run.trajectory.paths)))
        identity = CheckResult("representation_identity", dev == 0.0, dev, 0.0, f"n={n}, T={T}")
        report = growth_bound_report(run.trajectory, run.stream, cfg, self.act, self.pi, self.nu, run.step_sum)
        growth = CheckResult("growth_bound", report.holds, report.observed_sup, report.bound,
                             f"step sum {report.observed_step_sum:.4g} <= chain {report.chain_bound:.4g}")
        return identity, growth

    # =========================================================================
    # TILT
    # =========================================================================

    def check_entropy_inequality(self, kernels: int = 100, n_values=(2, 3, 7)) -> Tuple[CheckResult, CheckResult]:
        rng = stream_generator(self.seed, 3, Stream.AUXILIARY)
        worst_violation, worst_identity = -math.inf, 0.0
        for _ in range(kernels):
            blocks = int(rng.integers(1, 9))
            rows = np.stack([_random_probs(rng, self.pi.size) for _ in range(blocks)])
            rho = uniform_blocks(rows, self.T)
            for n in n_values:
                lhs, rhs, _ = check_entropy_inequality(rho, self.pi, n)
                worst_violation = max(worst_violation, lhs - rhs)
                seq = discretize_kernel(rho, n)
                if seq.n_prime > 0:
                    assembled = relative_entropy_R(steps_to_kernel(seq, self.T, self.pi), self.pi)
                    worst_identity = max(worst_identity, abs(step_entropy(seq, self.pi) - assembled))
        inequality = CheckResult("entropy_inequality", worst_violation < Config.ENTROPY_TOL, worst_violation,
                                 Config.ENTROPY_TOL, f"{kernels} kernels x n in {tuple(n_values)}")
        identity = CheckResult("step_entropy_identity", worst_identity < Config.ENTROPY_TOL, worst_identity,
                               Config.ENTROPY_TOL)
        return inequality, identity

    # =========================================================================
    # MEAN FIELD
    # =========================================================================

    def check_contraction(self, tol: float = 1e-8, max_iter: int = Config.DEFAULT_PICARD_MAX_ITER) -> List[CheckResult]:
        c_contr = contraction_constant(self.nu, self.pi, self.act, self.T)
        t0 = contraction_horizon(c_contr, self.T)
        rho0 = base_kernel(self.pi, t0)
        _, short = picard_solve(rho0, self.nu, self.pi, t0 / 8.0, tol, max_iter, self.act)
        ratios = [r for r in short.contraction_ratios if math.isfinite(r)]
        worst_ratio = max(ratios) if ratios else 0.0
        limit = t0 * c_contr + 0.1
        # on short horizons Picard converges in one or two sweeps and the ratio is near 0
        detail = f"T0={t0:.4g}, {short.iterations} iterations, {len(ratios)} ratios"
        results = [CheckResult("contraction_ratio", worst_ratio <= limit, worst_ratio, limit, detail)]

        rho = base_kernel(self.pi, self.T)
        solution, report = picard_solve(rho, self.nu, self.pi, self.dt, tol, max_iter, self.act)
        results.append(CheckResult("picard_convergence", report.converged and report.iterations <= max_iter,
                                   float(report.iterations), float(max_iter), report.status))

        fixed_gap = wasserstein_D(solution, zeta_map(solution, rho, self.nu, self.pi, self.act), self.T)
        results.append(CheckResult("fixed_point_residual", fixed_gap < 10 * tol, fixed_gap, 10 * tol))

        image = zeta_map(initial_solution(self.nu, self.pi, self.act, self.T, self.dt), rho, self.nu, self.pi,
                         self.act)
        other, _ = picard_solve(rho, self.nu, self.pi, self.dt, tol, max_iter, self.act, init=image)
        gap = wasserstein_D(solution, other, self.T)
        results.append(CheckResult("uniqueness", gap < 1e-7, gap, 1e-7, "eta0 = nu vs eta0 = zeta(nu)"))

        observed = float(np.max(solution.cloud.path_sup))
        results.append(CheckResult("trajectory_bound", observed <= solution.c_traj, observed, solution.c_traj))
        return results

    def check_euler_order(self, tol: float = 1e-10) -> CheckResult:
        rho = base_kernel(self.pi, self.T)
        coarse, _ = picard_solve(rho, self.nu, self.pi, self.dt, tol, 200, self.act)
        fine, _ = picard_solve(rho, self.nu, self.pi, self.dt / 2.0, tol, 200, self.act)
        d = self.nu.dim
        monomials = [(i,) for i in range(d)] + [(i, j) for i in range(d) for j in range(i, d)]
        ratios = []
        for m in monomials:
            r_coarse = evt_residual(coarse, rho, m, self.act, self.pi)
            r_fine = evt_residual(fine, rho, m, self.act, self.pi)
            ratios.append(r_coarse / r_fine if r_fine > 0 else math.inf)
        lo, hi = min(ratios), max(ratios)
        return CheckResult("euler_order", 1.5 <= lo and hi <= 3.0, lo, 1.5, f"ratios in [{lo:.3f}, {hi:.3f}]")

    # =========================================================================
    # LDP LAB
    # =========================================================================

    def check_is_identity(self, n: int = 16, replicas: int = 64) -> CheckResult:
        cfg = SimConfig(n=n, T=self.T, d_in=self.pi.dim_in, seed=self.seed)
        f = make_functional("tanh_marginal", t=self.T, name="tanh_c_T")
        event = EventSpec(functional=f, threshold=0.0, direction="geq")
        seq = discretize_kernel(base_kernel(self.pi, self.T), n)
        tilted = importance_sample(event, seq, cfg, self.nu, self.pi, self.act, replicas, self.seed)
        naive = naive_mc(event, cfg, self.nu, self.pi, self.act, replicas, self.seed)
        dev = abs(tilted.p_hat - naive.p_hat) + abs(tilted.ci_halfwidth - naive.ci_halfwidth)
        return CheckResult("is_identity", dev == 0.0, dev, 0.0, f"n={n}, {replicas} replicas")

    def run_all(self) -> Tuple[bool, List[CheckResult]]:
        """Run every check; returns (all passed, results)"""
        results: List[CheckResult] = [self.check_gradient_oracle(), self.check_simultaneity()]
        results.extend(self.check_representation_identity())
        results.extend(self.check_entropy_inequality())
        results.extend(self.check_contraction())
        results.append(self.check_euler_order())
        results.append(self.check_is_identity())
        for r in results:
            status = "✅ PASS" if r.passed else "❌ FAIL"
            logger.info(f"{status} {r.name}: {r.value:.6g} (limit {r.limit:.6g}) {r.detail}")
        return all(r.passed for r in results), results


def default_suite(seed: int = 0, act: Optional[Activation] = None) -> InvariantSuite:
    pi, nu = desk_instance(seed)
    return InvariantSuite(pi, nu, act or make_activation("tanh"), seed=seed)

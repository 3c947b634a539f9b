"""
Rate Function Estimators - quenched I_nu and annealed J
=======================================================
Both rates are infima over tilted data kernels (and, for J, over reweighted
initial measures). Here the infimum runs over the exponential-tilt block
family only, so every returned value is an UPPER BOUND on the true rate.

min  (1/T) R(rho(lam)) [+ H(nu0(mu) | nu)]
s.t. theta^{rho, nu0}(f) = a
solved by a quadratic penalty with doubling weight plus a multiplier update
(augmented Lagrangian) and an inner BFGS run on central finite-difference
gradients in logit space.
"""
from dataclasses import dataclass, replace
from typing import Optional, Dict, List, Tuple
import numpy as np
from scipy import optimize
from scipy.special import rel_entr

from core.functionals import empirical_expectation
from core.meanfield import picard_solve
from core.tilt import exponential_tilt, relative_entropy_R, uniform_blocks, base_kernel
from models.domain import (
    Activation, DataAtomSet, InitialWeightAtomSet, EventSpec, OptimizerConfig, RateEstimate,
    TiltedKernel, MeanFieldSolution, TestFunctional, OptimizerStep,
)
from utils.logger import get_logger

logger = get_logger("rates")


@dataclass
class _Evaluation:
    entropy_cost: float
    init_cost: float
    value_f: float
    residual: float  # theta(f) - a
    converged: bool

    @property
    def cost(self) -> float:
        return self.entropy_cost + self.init_cost

    @property
    def gap(self) -> float:
        return abs(self.residual)


def reweight_initial(nu: InitialWeightAtomSet, logits: np.ndarray) -> InitialWeightAtomSet:
    """nu0_j proportional to nu_j exp(logits_j) on nu's atoms"""
    logits = np.asarray(logits, dtype=float)
    if not np.any(logits):
        return nu
    support = nu.probs > 0
    log_w = np.full(nu.size, -np.inf)
    log_w[support] = np.log(nu.probs[support]) + logits[support]
    w = np.exp(log_w - np.max(log_w[support]))
    return InitialWeightAtomSet(atoms=nu.atoms, probs=w / w.sum())


def initial_entropy(nu0: InitialWeightAtomSet, nu: InitialWeightAtomSet) -> float:
    """H(nu0 | nu) over shared atoms"""
    return float(np.sum(rel_entr(nu0.probs, nu.probs)))


def _initial_logits(nu0: InitialWeightAtomSet, nu: InitialWeightAtomSet) -> np.ndarray:
    """Logits that make reweight_initial(nu, logits) reproduce nu0"""
    logits = np.zeros(nu.size)
    support = (nu.probs > 0) & (nu0.probs > 0)
    logits[support] = np.log(nu0.probs[support]) - np.log(nu.probs[support])
    logits[(nu.probs > 0) & (nu0.probs <= 0)] = -50.0
    return logits


def _kernel_logits(kernel: TiltedKernel, pi: DataAtomSet, blocks: int) -> np.ndarray:
    """Logits of the block family that reproduce kernel (exact when block edges nest)"""
    edges = np.linspace(0.0, kernel.horizon, blocks + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    logits = np.zeros((blocks, pi.size))
    support = pi.probs > 0
    for b, t in enumerate(mids):
        row = kernel.row_at(t)
        with np.errstate(divide="ignore"):
            logits[b, support] = np.log(row[support]) - np.log(pi.probs[support])
    # atoms the kernel does not charge get a large negative but finite logit
    return np.where(np.isfinite(logits), logits, -50.0)


class _RateProblem:
    """Objective, constraint and cache for one estimator run"""

    def __init__(self, event: EventSpec, nu: InitialWeightAtomSet, pi: DataAtomSet, T: float,
                 opt: OptimizerConfig, act: Activation, annealed: bool):
        self.event = event
        self.nu = nu
        self.pi = pi
        self.T = T
        self.opt = opt
        self.act = act
        self.annealed = annealed
        self.tilt_size = opt.blocks * pi.size
        self.size = self.tilt_size + (nu.size if annealed else 0)
        self.cache: Dict[bytes, _Evaluation] = {}
        # fixed warm start keeps every objective evaluation a pure function of x
        self.base: MeanFieldSolution = picard_solve(base_kernel(pi, T), nu, pi, opt.dt, opt.picard_tol,
                                                    opt.picard_max_iter, act, damping=opt.damping)[0]

    def unpack(self, x: np.ndarray) -> Tuple[TiltedKernel, InitialWeightAtomSet]:
        lam = x[:self.tilt_size].reshape(self.opt.blocks, self.pi.size)
        rows = np.stack([exponential_tilt(self.pi, lam[b], 1.0) for b in range(self.opt.blocks)])
        kernel = uniform_blocks(rows, self.T)
        nu0 = reweight_initial(self.nu, x[self.tilt_size:]) if self.annealed else self.nu
        return kernel, nu0

    def evaluate(self, x: np.ndarray) -> _Evaluation:
        key = np.asarray(x, dtype=float).tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        kernel, nu0 = self.unpack(x)
        solution, report = picard_solve(kernel, nu0, self.pi, self.opt.dt, self.opt.picard_tol,
                                        self.opt.picard_max_iter, self.act, damping=self.opt.damping,
                                        init=self.base)
        value_f = empirical_expectation(solution.cloud, self.event.functional)
        evaluation = _Evaluation(
            entropy_cost=relative_entropy_R(kernel, self.pi) / self.T,
            init_cost=initial_entropy(nu0, self.nu) if self.annealed else 0.0,
            value_f=value_f,
            residual=value_f - self.event.threshold,
            converged=report.converged,
        )
        self.cache[key] = evaluation
        return evaluation

    def penalized(self, x: np.ndarray, weight: float, multiplier: float = 0.0) -> float:
        """Augmented Lagrangian cost + multiplier * r + weight * r^2 with r the signed constraint residual"""
        e = self.evaluate(x)
        return e.cost + multiplier * e.residual + weight * e.residual ** 2

    def fd_gradient(self, x: np.ndarray, weight: float, multiplier: float = 0.0) -> np.ndarray:
        h = self.opt.fd_step
        grad = np.empty_like(x)
        for i in range(x.size):
            up, down = x.copy(), x.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (self.penalized(up, weight, multiplier) - self.penalized(down, weight, multiplier)) / (2.0 * h)
        return grad

    def start_from(self, estimate: RateEstimate) -> np.ndarray:
        """Parameters reproducing an earlier estimate's tilt (and nu0) in this problem's family"""
        x = np.zeros(self.size)
        x[:self.tilt_size] = _kernel_logits(estimate.tilt, self.pi, self.opt.blocks).ravel()
        if self.annealed:
            x[self.tilt_size:] = _initial_logits(estimate.nu0, self.nu)
        return x

    def estimate(self, x: np.ndarray, kind: str, status: str, trace: List[OptimizerStep]) -> RateEstimate:
        e = self.evaluate(x)
        kernel, nu0 = self.unpack(x)
        return RateEstimate(kind=kind, value=e.cost, entropy_cost=e.entropy_cost, init_cost=e.init_cost,
                            constraint_gap=e.gap, target=self.event.threshold, tilt=kernel, nu0=nu0,
                            status=status, optimizer_trace=trace)


def _optimize(problem: _RateProblem, kind: str, x0: np.ndarray) -> RateEstimate:
    opt = problem.opt
    x = np.array(x0, dtype=float)
    weight, multiplier = opt.initial_penalty, 0.0
    trace: List[OptimizerStep] = []
    iterates = [x.copy()]

    for outer in range(opt.outer_iterations):
        start = problem.penalized(x, weight, multiplier)
        result = optimize.minimize(problem.penalized, x, args=(weight, multiplier), method="BFGS",
                                   jac=problem.fd_gradient,
                                   callback=lambda xk: iterates.append(np.array(xk, copy=True)),
                                   options={"maxiter": opt.inner_iterations, "gtol": opt.gradient_tol})
        iterates.append(np.array(result.x, copy=True))
        accepted = problem.penalized(result.x, weight, multiplier) <= start
        if accepted:
            x = np.array(result.x, copy=True)
        current = problem.evaluate(x)
        trace.append(OptimizerStep(outer=outer, weight=weight, multiplier=multiplier, start_objective=start,
                                   objective=problem.penalized(x, weight, multiplier), gap=current.gap,
                                   accepted=accepted))
        logger.info(f"{kind} outer {outer}: penalty {weight:.3g}, multiplier {multiplier:.4g}, "
                    f"cost {current.cost:.6g}, gap {current.gap:.3e}")
        if current.gap <= opt.feasibility_tol and result.success:
            break
        multiplier += 2.0 * weight * current.residual
        weight *= 2.0

    feasible = [xi for xi in iterates if problem.evaluate(xi).gap <= opt.feasibility_tol]
    if feasible:
        best = min(feasible, key=lambda xi: problem.evaluate(xi).cost)
        return problem.estimate(best, kind, "feasible", trace)
    best = min(iterates, key=lambda xi: problem.evaluate(xi).gap)
    logger.warning(f"⚠️ {kind} infeasible: best constraint gap {problem.evaluate(best).gap:.3e}")
    return problem.estimate(best, kind, "infeasible", trace)


def _keep_best(estimate: RateEstimate, candidates: List[Optional[RateEstimate]]) -> RateEstimate:
    """The optimizer's estimate unless a feasible candidate from a nested family is cheaper"""
    best = estimate
    for candidate in candidates:
        if candidate is None or candidate.status != "feasible":
            continue
        if best.status != "feasible" or candidate.value < best.value:
            logger.info(f"{estimate.kind} keeps a nested candidate ({candidate.value:.6g})")
            best = replace(candidate, kind=estimate.kind, optimizer_trace=estimate.optimizer_trace)
    return best


def estimate_I(event: EventSpec, nu: InitialWeightAtomSet, pi: DataAtomSet, T: float, opt: OptimizerConfig,
               act: Activation, warm_start: Optional[RateEstimate] = None) -> RateEstimate:
    """
    Upper bound on I_nu at the event boundary theta(f) = a. With B > 1 blocks
    and no warm start, the single-block solution seeds the search, so refining
    the block family never raises the estimate.
    """
    problem = _RateProblem(event, nu, pi, T, opt, act, annealed=False)
    coarse = None
    if warm_start is None and opt.blocks > 1:
        coarse = estimate_I(event, nu, pi, T, replace(opt, blocks=1), act)
    seed = warm_start if warm_start is not None else coarse
    x0 = problem.start_from(seed) if seed is not None else np.zeros(problem.size)
    estimate = _optimize(problem, "I", x0)
    nested = [coarse, warm_start if warm_start is not None and warm_start.kind == "I" else None]
    return _keep_best(estimate, nested)


def estimate_J(event: EventSpec, nu: InitialWeightAtomSet, pi: DataAtomSet, T: float, opt: OptimizerConfig,
               act: Activation, warm_start: Optional[RateEstimate] = None) -> RateEstimate:
    """
    Upper bound on J = inf_nu0 H(nu0 | nu) + I_nu0 at the event boundary. A
    feasible I estimate passed as warm start is itself a J candidate (nu0 = nu)
    """
    problem = _RateProblem(event, nu, pi, T, opt, act, annealed=True)
    coarse = None
    if warm_start is None and opt.blocks > 1:
        coarse = estimate_J(event, nu, pi, T, replace(opt, blocks=1), act)
    seed = warm_start if warm_start is not None else coarse
    x0 = problem.start_from(seed) if seed is not None else np.zeros(problem.size)
    estimate = _optimize(problem, "J", x0)
    return _keep_best(estimate, [coarse, warm_start])


def lln_target(f: TestFunctional, nu: InitialWeightAtomSet, pi: DataAtomSet, T: float, opt: OptimizerConfig,
               act: Activation) -> float:
    """theta*(f) under the optimizer's solver settings"""
    solution, _ = picard_solve(base_kernel(pi, T), nu, pi, opt.dt, opt.picard_tol, opt.picard_max_iter, act,
                               damping=opt.damping)
    return empirical_expectation(solution.cloud, f)

"""
Experiment Service - Orchestrates one laboratory run
Dispatches the configured experiment, writes CSV tables and the run manifest
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional, List
import numpy as np
import pandas as pd

from config import Config
from core.functionals import empirical_expectation
from core.meanfield import picard_solve, trajectory_bound, contraction_constant_from, contraction_horizon
from core.rare_events import importance_sample, naive_mc, decay_curve, lln_experiment
from core.rates import estimate_I, estimate_J, lln_target
from core.sgd import (
    simulate_run, growth_bound_report, assert_growth_bound, empirical_initial_entropy, c_bar, sgd_constant,
)
from core.tilt import base_kernel, discretize_kernel
from core.validation import InvariantSuite
from models.domain import RateEstimate
from models.run_config import RunConfig, canonical_config
from storage.connection import OutputManager
from storage.schema import table_columns
from storage.repositories import ResultRepository, ManifestRepository, trajectory_frame, growth_frame
from utils import plots
from utils.logger import logger


class ExperimentFailure(RuntimeError):
    """Solver non-convergence, infeasibility or a failed check; reason goes to the manifest"""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ExperimentService:
    """Runs the experiment named in a RunConfig"""

    def __init__(self, cfg: RunConfig, out_dir: Optional[str] = None, workers: int = 1,
                 checked: bool = False, plots_enabled: bool = True):
        self.cfg = cfg
        self.checked = checked
        # checked mode is single-threaded by contract
        self.workers = 1 if checked else max(1, int(workers))
        self.plots_enabled = plots_enabled
        self.output = OutputManager(out_dir or cfg.output_dir or Config.OUTPUT_DIR)
        self.results = ResultRepository(self.output)
        self.manifest = ManifestRepository(self.output)

        self.act = cfg.activation()
        self.pi = cfg.data_atom_set()
        self.nu = cfg.weight_atom_set()
        self.sim = cfg.sim_config()
        self.f = cfg.functional_spec()
        self.opt = cfg.optimizer_config()
        self.seed = cfg.seed or 0
        self.statuses: Dict[str, str] = {}
        self.constants = self.derived_constants()
        self._executor: Optional[ThreadPoolExecutor] = None

    def derived_constants(self) -> Dict[str, float]:
        """Every constant any assertion of this run relies on"""
        T = self.cfg.sim.T
        c_traj = trajectory_bound(self.nu, self.pi, self.act, T)
        c_contr = contraction_constant_from(self.act.c_sigma, self.act.l_sigma, self.pi.c_pi, c_traj)
        return {
            "C_nu": self.nu.c_nu,
            "C_pi": self.pi.c_pi,
            "C_sigma": self.act.c_sigma,
            "L_sigma": self.act.l_sigma,
            "c_bar": c_bar(self.act.c_sigma, T),
            "C_SGD": sgd_constant(self.act.c_sigma, self.nu.c_nu, self.pi.c_pi, T),
            "C_traj": c_traj,
            "C_contr": c_contr,
            "T0": contraction_horizon(c_contr, T),
            "n_prime": float(self.sim.n_prime),
            "eps": self.sim.eps,
        }

    # =========================================================================
    # ENTRY POINT
    # =========================================================================

    def run(self) -> int:
        """Run the experiment; 0 on success, 2 on a reported failure, 1 on an error"""
        experiment = self.cfg.experiment
        handlers = {
            "simulate": self.run_simulate,
            "meanfield": self.run_meanfield,
            "lln": self.run_lln,
            "rate_I": self.run_rate_I,
            "rate_J": self.run_rate_J,
            "importance": self.run_importance,
            "decay": self.run_decay,
            "check": self.run_check,
        }
        failure = None
        exit_code = 0
        logger.info(f"🔄 Running experiment '{experiment}' (seed {self.seed}, workers {self.workers}, "
                    f"checked {self.checked})")
        try:
            if self.workers > 1:
                self._executor = ThreadPoolExecutor(max_workers=self.workers)
            handlers[experiment]()
            self.statuses.setdefault(experiment, "ok")
            logger.info(f"✅ Experiment '{experiment}' complete")
        except ExperimentFailure as e:
            failure, exit_code = e.reason, 2
            self.statuses[experiment] = "failed"
            logger.error(f"❌ Experiment '{experiment}' failed: {e.reason}")
        except Exception as e:
            failure, exit_code = f"error: {e}", 1
            self.statuses[experiment] = "error"
            logger.error(f"Experiment '{experiment}' raised: {e}", exc_info=True)
        finally:
            if self._executor is not None:
                self._executor.shutdown(wait=True)
                self._executor = None

        manifest = self.manifest.build(
            config_document=canonical_config(self.cfg), experiment=experiment,
            seeds={"master": self.seed}, constants=self.constants, statuses=self.statuses,
            files=self.results.written, failure=failure,
        )
        self.manifest.save(manifest)
        return exit_code

    # =========================================================================
    # EXPERIMENTS
    # =========================================================================

    def run_simulate(self):
        run = simulate_run(self.sim, self.pi, self.nu, self.act)
        report = growth_bound_report(run.trajectory, run.stream, self.sim, self.act, self.pi, self.nu,
                                     run.step_sum)
        if self.checked:
            assert_growth_bound(report)
        self.statuses["growth_bound"] = "holds" if report.holds else "violated"
        self.constants["growth_bound"] = report.bound
        self.constants["chain_bound"] = report.chain_bound

        steps = np.rint(np.asarray(run.trajectory.grid) * self.sim.n).astype(np.int64)
        self.results.save_table("trajectories", trajectory_frame(run.trajectory, 0, steps), d_in=self.pi.dim_in)
        self.results.save_table("growth", growth_frame([report]))
        summary = pd.DataFrame([{
            "n": self.sim.n, "n_prime": self.sim.n_prime, "seed": self.seed,
            "theta_f": empirical_expectation(run.trajectory, self.f),
            "initial_entropy": empirical_initial_entropy(run.init_indices, self.nu),
        }])
        self.results.save_table("simulate", summary)
        if not report.holds:
            raise ExperimentFailure("growth bound violated")

    def run_meanfield(self):
        mf = self.cfg.meanfield
        solution, report = picard_solve(base_kernel(self.pi, self.cfg.sim.T), self.nu, self.pi, mf.dt, mf.tol,
                                        mf.max_iter, self.act, damping=mf.damping, checked=self.checked)
        self.statuses["picard"] = report.status
        self.results.save_table("picard", pd.DataFrame({
            "iteration": np.arange(1, len(report.gaps) + 1), "gap": report.gaps,
            "contraction_ratio": report.contraction_ratios,
        }))
        self.results.save_table("trajectories", trajectory_frame(solution.cloud, 0), d_in=self.pi.dim_in)
        if not report.converged:
            raise ExperimentFailure(f"picard_{report.status}")

    def run_lln(self):
        mf = self.cfg.meanfield
        frame = lln_experiment(self.f, self.cfg.lab.n_list, self.cfg.lab.replicas, self.nu, self.pi, self.act,
                               mf.dt, self.seed, self.cfg.sim.T, tol=mf.tol, checked=self.checked,
                               executor=self._executor)
        self.results.save_table("lln", frame)
        if self.plots_enabled and len(frame) > 1:
            plots.plot_lln_errors(frame, self.output.path("lln.svg"))

    def _event(self):
        reference = lln_target(self.f, self.nu, self.pi, self.cfg.sim.T, self.opt, self.act)
        self.constants["theta_star_f"] = reference
        event = self.cfg.event_spec(reference)
        self.constants["event_threshold"] = event.threshold
        return event

    def _save_rates(self, estimates: List[RateEstimate]):
        self.results.save_table("rates", pd.DataFrame([{
            "kind": e.kind, "value": e.value, "entropy_cost": e.entropy_cost, "init_cost": e.init_cost,
            "constraint_gap": e.constraint_gap, "target": e.target, "status": e.status,
            "upper_bound": e.upper_bound,
        } for e in estimates]))
        trace = [{"kind": e.kind, "outer": s.outer, "weight": s.weight, "multiplier": s.multiplier,
                  "start_objective": s.start_objective, "objective": s.objective, "gap": s.gap,
                  "accepted": s.accepted}
                 for e in estimates for s in e.optimizer_trace]
        self.results.save_table("rate_trace", pd.DataFrame(trace, columns=table_columns("rate_trace")))
        for e in estimates:
            self.statuses[f"estimate_{e.kind}"] = e.status
            self.constants[f"rate_{e.kind}"] = e.value

    def _require_feasible(self, estimate: RateEstimate):
        if estimate.status != "feasible":
            raise ExperimentFailure(f"rate_{estimate.kind}_infeasible (gap {estimate.constraint_gap:.3e})")

    def run_rate_I(self):
        event = self._event()
        estimate = estimate_I(event, self.nu, self.pi, self.cfg.sim.T, self.opt, self.act)
        self._save_rates([estimate])
        self._require_feasible(estimate)

    def run_rate_J(self):
        self._annealed_rates(self._event())

    def _annealed_rates(self, event) -> RateEstimate:
        """J warm-started from I, both saved; the J tilt must be feasible"""
        rate_i = estimate_I(event, self.nu, self.pi, self.cfg.sim.T, self.opt, self.act)
        rate_j = estimate_J(event, self.nu, self.pi, self.cfg.sim.T, self.opt, self.act, warm_start=rate_i)
        self._save_rates([rate_i, rate_j])
        self._require_feasible(rate_j)
        return rate_j

    def run_importance(self):
        # the proposal tilts both the data kernel and the initial law
        event = self._event()
        rate_j = self._annealed_rates(event)
        replicas = self.cfg.lab.replicas
        seq = discretize_kernel(rate_j.tilt, self.sim.n)
        tilted = importance_sample(event, seq, self.sim, self.nu, self.pi, self.act, replicas, self.seed,
                                   init_probs=np.asarray(rate_j.nu0.probs), executor=self._executor)
        naive = naive_mc(event, self.sim, self.nu, self.pi, self.act, replicas, self.seed, executor=self._executor)
        rows = []
        for method, est in (("tilted", tilted), ("naive", naive)):
            rows.append({"method": method, "n": self.sim.n, "p_hat": est.p_hat, "ci_halfwidth": est.ci_halfwidth,
                         "std": est.std, "ess": est.ess, "hits": est.hits, "replicas": est.replicas,
                         "flagged": est.flagged})
            self.statuses[f"importance_{method}"] = "flagged" if est.flagged else "ok"
        self.results.save_table("importance", pd.DataFrame(rows))

    def run_decay(self):
        event = self._event()
        lab = self.cfg.lab
        tilt, init_probs = None, None
        if lab.method == "tilted":
            rate_j = self._annealed_rates(event)
            tilt, init_probs = rate_j.tilt, np.asarray(rate_j.nu0.probs)
        frame = decay_curve(event, lab.n_list, lab.method, lab.replicas, self.seed, self.cfg.sim.T, self.nu,
                            self.pi, self.act, tilt=tilt, init_probs=init_probs, executor=self._executor)
        self.results.save_table("decay", frame)
        flagged = int(frame["flagged"].sum())
        self.statuses["decay_flagged_rows"] = str(flagged)
        if self.plots_enabled:
            plots.plot_decay_curve(frame, self.output.path("decay.svg"), self.constants.get("rate_J"))

    def run_check(self):
        suite = InvariantSuite(self.pi, self.nu, self.act, T=self.cfg.sim.T, dt=self.cfg.meanfield.dt,
                               seed=self.seed)
        passed, results = suite.run_all()
        self.results.save_table("checks", pd.DataFrame([{
            "name": r.name, "passed": r.passed, "value": r.value, "limit": r.limit, "detail": r.detail,
        } for r in results]))
        print(format_check_table(results))
        for r in results:
            self.statuses[f"check_{r.name}"] = "pass" if r.passed else "fail"
        if not passed:
            failed = [r.name for r in results if not r.passed]
            raise ExperimentFailure(f"checks_failed: {', '.join(failed)}")


def format_check_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  value          limit"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}    {r.value:<13.6g}  {r.limit:.6g}")
    return "\n".join(lines)

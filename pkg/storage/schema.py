"""
Output Schema for MFLDP
Column layout of every CSV table the laboratory writes
"""
from typing import List

TABLE_COLUMNS = {
    # trajectory dumps; w_1..w_d' are appended per run
    "trajectories": ["replica", "particle", "k", "t", "c"],
    "growth": ["replica", "observed_sup", "bound", "observed_step_sum", "chain_bound", "c_sgd", "c_bar",
               "y_star_1", "y_star_2", "y_star_4", "z_star_1", "z_star_2", "holds"],
    "simulate": ["n", "n_prime", "seed", "theta_f", "initial_entropy"],
    "picard": ["iteration", "gap", "contraction_ratio"],
    "lln": ["n", "median_abs_error", "iqr"],
    "rates": ["kind", "value", "entropy_cost", "init_cost", "constraint_gap", "target", "status", "upper_bound"],
    "rate_trace": ["kind", "outer", "weight", "multiplier", "start_objective", "objective", "gap", "accepted"],
    "importance": ["method", "n", "p_hat", "ci_halfwidth", "std", "ess", "hits", "replicas", "flagged"],
    "decay": ["n", "n_prime", "p_hat", "ci_halfwidth", "minus_log_p_over_nprime", "rate_ci_low", "rate_ci_high",
              "ess", "flagged"],
    "checks": ["name", "passed", "value", "limit", "detail"],
}


def table_columns(table: str, d_in: int = 0) -> List[str]:
    """Columns of a table; the trajectory table grows with the input dimension"""
    if table not in TABLE_COLUMNS:
        raise KeyError(f"unknown output table '{table}'")
    columns = list(TABLE_COLUMNS[table])
    if table == "trajectories":
        columns += [f"w_{i}" for i in range(1, d_in + 1)]
    return columns

"""
MFLDP - LABORATORY CONFIGURATION
================================
Static defaults for the mean-field SGD large-deviation laboratory.
Run-specific settings come from the JSON run configuration (models/run_config.py);
only output location and logging can be overridden from the environment.
"""
import os
import logging


class Config:
    """Laboratory-wide defaults and numerical constants"""

    # =========================================================================
    # TOOL
    # =========================================================================
    TOOL_NAME = "mfldp"
    TOOL_VERSION = "1.0.0"
    RNG_NAME = "numpy.random.Philox"

    # =========================================================================
    # NUMERICAL TOLERANCES
    # =========================================================================
    NORMALIZATION_TOL = 1e-12
    ENTROPY_TOL = 1e-12
    EDGE_SNAP_TOL = 1e-12  # block overlaps below this (relative to 1/n) are dropped

    # =========================================================================
    # ACTIVATIONS
    # Uniform bound C_sigma >= 1 and shared Lipschitz constant L_sigma > 1 of
    # sigma and sigma'. Both catalogued activations satisfy (CONT).
    # =========================================================================
    ACTIVATION_CONSTANTS = {
        "tanh": {"c_sigma": 1.0, "l_sigma": 1.0000001},
        "logistic": {"c_sigma": 1.0, "l_sigma": 1.0000001},
    }
    REJECTED_ACTIVATIONS = {
        "relu": "(CONT) violated: relu is unbounded",
        "linear": "(CONT) violated: the identity activation is unbounded",
        "identity": "(CONT) violated: the identity activation is unbounded",
    }

    # =========================================================================
    # SGD ENGINE
    # =========================================================================
    TRAJECTORY_MEMORY_BUDGET = 2 ** 26  # floats kept for dense trajectory storage
    REPLICA_CHUNK = 1024

    # =========================================================================
    # MEAN-FIELD SOLVER
    # =========================================================================
    DEFAULT_DT = 1.0 / 128
    MAX_DT = 1.0 / 8
    DEFAULT_PICARD_TOL = 1e-8
    DEFAULT_PICARD_MAX_ITER = 50
    DEFAULT_DAMPING = 0.0
    PICARD_STALL_WINDOW = 3  # consecutive non-decreasing gaps before windowing

    # =========================================================================
    # RATE-FUNCTION OPTIMIZER
    # =========================================================================
    OPT_OUTER_ITERATIONS = 8
    OPT_INITIAL_PENALTY = 10.0
    OPT_INNER_ITERATIONS = 25
    OPT_FD_STEP = 1e-4
    OPT_FEASIBILITY_TOL = 1e-3
    OPT_GRADIENT_TOL = 1e-7

    # =========================================================================
    # MONTE CARLO
    # =========================================================================
    CI_LEVEL = 0.95

    # =========================================================================
    # OUTPUT / LOGGING (environment overridable)
    # =========================================================================
    OUTPUT_DIR = os.getenv("MFLDP_OUTPUT_DIR", "results")
    LOG_DIR = os.getenv("MFLDP_LOG_DIR", "logs")
    LOG_LEVEL = getattr(logging, os.getenv("MFLDP_LOG_LEVEL", "INFO").upper(), logging.INFO)
    LOG_TO_FILE = os.getenv("MFLDP_LOG_FILE", "1").lower() not in ("0", "false", "no")
    CSV_FLOAT_FORMAT = "%.17g"
    CSV_LINE_TERMINATOR = "\r\n"

    # =========================================================================
    # VALIDATION
    # =========================================================================
    @classmethod
    def validate(cls):
        """Validate static configuration"""
        errors = []

        for kind, consts in cls.ACTIVATION_CONSTANTS.items():
            if consts["c_sigma"] < 1:
                errors.append(f"{kind}: C_sigma must be >= 1")
            if consts["l_sigma"] <= 1:
                errors.append(f"{kind}: L_sigma must be > 1")

        if not 0 < cls.DEFAULT_DT <= cls.MAX_DT:
            errors.append("DEFAULT_DT must lie in (0, MAX_DT]")
        if cls.PICARD_STALL_WINDOW < 1:
            errors.append("PICARD_STALL_WINDOW must be positive")
        if cls.OPT_FD_STEP <= 0:
            errors.append("OPT_FD_STEP must be positive")
        if cls.TRAJECTORY_MEMORY_BUDGET <= 0:
            errors.append("TRAJECTORY_MEMORY_BUDGET must be positive")

        if errors:
            raise ValueError("Configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))

        os.makedirs(cls.OUTPUT_DIR, exist_ok=True)
        if cls.LOG_TO_FILE:
            os.makedirs(cls.LOG_DIR, exist_ok=True)

        return True

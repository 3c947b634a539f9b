"""
Result Repositories for MFLDP
CSV tables (RFC-4180, 17 significant digits) and the JSON run manifest
"""
import hashlib
import json
from datetime import datetime
from typing import Optional, Dict, List, Sequence, Any
import numpy as np
import pandas as pd

from config import Config
from models.domain import TrajectoryMeasure, GrowthBoundReport
from storage.connection import OutputManager
from storage.schema import table_columns
from utils.logger import get_logger

logger = get_logger("storage")


def canonical_json(document: Any) -> str:
    """Sorted keys, compact separators"""
    return json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(document: Any) -> str:
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


def trajectory_frame(traj: TrajectoryMeasure, replica: int = 0, steps: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """Long-format trajectory dump: one row per (particle, recorded step)"""
    N, G, d = traj.paths.shape
    steps = np.arange(G) if steps is None else np.asarray(steps)
    flat = np.asarray(traj.paths).reshape(N * G, d)
    frame = pd.DataFrame({
        "replica": np.full(N * G, replica, dtype=np.int64),
        "particle": np.repeat(np.arange(N), G),
        "k": np.tile(steps, N),
        "t": np.tile(np.asarray(traj.grid), N),
        "c": flat[:, 0],
    })
    for i in range(1, d):
        frame[f"w_{i}"] = flat[:, i]
    return frame


def growth_frame(reports: List[GrowthBoundReport]) -> pd.DataFrame:
    rows = []
    for r, rep in enumerate(reports):
        rows.append({
            "replica": r, "observed_sup": rep.observed_sup, "bound": rep.bound,
            "observed_step_sum": rep.observed_step_sum, "chain_bound": rep.chain_bound, "c_sgd": rep.c_sgd,
            "c_bar": rep.c_bar, "y_star_1": rep.y_star_m[1], "y_star_2": rep.y_star_m[2],
            "y_star_4": rep.y_star_m[4], "z_star_1": rep.z_star_m[1], "z_star_2": rep.z_star_m[2],
            "holds": rep.holds,
        })
    return pd.DataFrame(rows, columns=table_columns("growth"))


class ResultRepository:
    """CSV tables of one run"""

    def __init__(self, output: OutputManager):
        self.output = output
        self.written: List[str] = []

    def save_table(self, table: str, frame: pd.DataFrame, name: Optional[str] = None, d_in: int = 0) -> str:
        """Write a table after checking its columns against the schema"""
        expected = table_columns(table, d_in)
        if list(frame.columns) != expected:
            raise ValueError(f"table '{table}': columns {list(frame.columns)} do not match {expected}")
        text = frame.to_csv(index=False, float_format=Config.CSV_FLOAT_FORMAT,
                            lineterminator=Config.CSV_LINE_TERMINATOR)
        filename = name or f"{table}.csv"
        path = self.output.write_bytes(filename, text.encode("utf-8"))
        self.written.append(filename)
        logger.info(f"Saved {filename} ({len(frame)} rows)")
        return path

    def load_table(self, filename: str) -> pd.DataFrame:
        return pd.read_csv(self.output.path(filename))


class ManifestRepository:
    """manifest.json: config hash, tool and RNG identity, seeds, constants, statuses"""

    FILENAME = "manifest.json"

    def __init__(self, output: OutputManager):
        self.output = output

    def build(self, config_document: Dict, experiment: str, seeds: Dict[str, int], constants: Dict[str, float],
              statuses: Dict[str, str], files: List[str], failure: Optional[str] = None) -> Dict:
        return {
            "tool": Config.TOOL_NAME,
            "tool_version": Config.TOOL_VERSION,
            "rng": Config.RNG_NAME,
            "experiment": experiment,
            "config_hash": config_hash(config_document),
            "seeds": seeds,
            "constants": {k: _jsonable(v) for k, v in constants.items()},
            "statuses": statuses,
            "files": files,
            "failure": failure,
            "timestamp": datetime.now().isoformat(),
        }

    def save(self, manifest: Dict) -> str:
        payload = json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8")
        path = self.output.write_bytes(self.FILENAME, payload)
        logger.info(f"Manifest written: {path}")
        return path

    def load(self) -> Dict:
        with open(self.output.path(self.FILENAME), "r", encoding="utf-8") as fh:
            return json.load(fh)


def _jsonable(value: Any) -> Any:
    """Finite floats stay numbers; inf and nan become strings"""
    value = float(value)
    if np.isfinite(value):
        return value
    return "inf" if value > 0 else ("-inf" if value < 0 else "nan")

"""
Output Directory Manager
One directory per run holding manifest.json, CSV tables and optional plots
"""
import os
from typing import Optional

from config import Config
from utils.logger import get_logger

logger = get_logger("storage")


class OutputManager:
    """Owns the run's output directory"""

    def __init__(self, out_dir: Optional[str] = None):
        self.out_dir = out_dir or Config.OUTPUT_DIR
        os.makedirs(self.out_dir, exist_ok=True)
        logger.info(f"Output directory: {self.out_dir}")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_bytes(self, name: str, payload: bytes) -> str:
        """Write through a temporary file so readers never see a partial file"""
        target = self.path(name)
        tmp = target + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, target)
        return target

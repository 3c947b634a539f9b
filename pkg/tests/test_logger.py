"""
Tests for the logging setup
"""
import logging
import sys

from utils.logger import setup_logger, get_logger, logger, ROOT_NAME


class TestLogger:

    def test_console_goes_to_stderr(self):
        console = setup_logger("mfldp_console")
        streams = [h.stream for h in console.handlers if type(h) is logging.StreamHandler]
        assert streams == [sys.stderr]

    def test_setup_is_idempotent(self):
        count = len(logger.handlers)
        assert setup_logger() is logger
        assert len(logger.handlers) == count

    def test_child_logger_reaches_root_handlers(self, caplog):
        child = get_logger("meanfield")
        assert child.name == f"{ROOT_NAME}.meanfield"
        assert child.parent is logger
        logger.addHandler(caplog.handler)
        try:
            child.warning("picard stalled")
        finally:
            logger.removeHandler(caplog.handler)
        assert "picard stalled" in caplog.text

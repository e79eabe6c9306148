import os
import shutil
import tempfile
import unittest

from loguru import logger

from src.utils.logging_config import run_context, setup_logging


class TestLoggingConfig(unittest.TestCase):
    """Test cases for the loguru sinks."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.runs = []

    def tearDown(self):
        """Tear down test fixtures."""
        logger.remove()
        shutil.rmtree(self.temp_dir)

    def test_run_context(self):
        """Test that records inside a run carry the instance name."""
        setup_logging("DEBUG", "")
        logger.add(lambda message: self.runs.append(message.record["extra"]["run"]), level="DEBUG")

        logger.info("before")
        with run_context("case9-P70"):
            logger.info("inside")
        logger.info("after")

        self.assertEqual(self.runs, ["-", "case9-P70", "-"])

    def test_file_sink(self):
        """Test that the file sink is created with its directory."""
        path = os.path.join(self.temp_dir, "logs", "feasproj.log")
        setup_logging("INFO", path)

        with run_context("case14-Q80"):
            logger.warning("declared infeasible")
        logger.remove()

        with open(path, encoding="utf-8") as handle:
            content = handle.read()
        self.assertIn("case14-Q80", content)
        self.assertIn("declared infeasible", content)


if __name__ == "__main__":
    unittest.main()

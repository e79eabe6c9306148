#!/usr/bin/env python3
"""
Run the feasproj test suite.

The case9 end-to-end tests are skipped unless --slow is given or RUN_SLOW_TESTS is set.
"""

import argparse
import os
import sys
import unittest

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(PROJECT_ROOT)


def run_tests(test_path=None, pattern="test_*.py", verbose=False, slow=False):
    """
    Discover and run tests.

    Args:
        test_path: A test file or directory; defaults to tests/
        pattern: Discovery pattern used for directories
        verbose: Print one line per test
        slow: Include the slow solver tests

    Returns:
        bool: True if every test passed
    """
    if slow:
        # read by src.config.settings, which the test modules import during discovery
        os.environ["RUN_SLOW_TESTS"] = "1"

    from loguru import logger
    from src.utils.logging_config import setup_logging

    setup_logging()
    test_path = test_path or os.path.join(PROJECT_ROOT, "tests")
    logger.info(f"Running tests from {test_path} (slow={slow})")

    loader = unittest.defaultTestLoader
    if os.path.isfile(test_path):
        suite = loader.discover(os.path.dirname(test_path), pattern=os.path.basename(test_path),
                                top_level_dir=PROJECT_ROOT)
    else:
        suite = loader.discover(test_path, pattern=pattern, top_level_dir=PROJECT_ROOT)

    result = unittest.TextTestRunner(verbosity=2 if verbose else 1).run(suite)
    if result.wasSuccessful():
        logger.success(f"{result.testsRun} tests passed, {len(result.skipped)} skipped")
    else:
        logger.error(f"{len(result.failures)} failures, {len(result.errors)} errors")
    return result.wasSuccessful()


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Run the feasproj tests')
    parser.add_argument('--path', help='Path to test file or directory')
    parser.add_argument('--pattern', default='test_*.py', help='Discovery pattern')
    parser.add_argument('--verbose', '-v', action='store_true', help='Verbose output')
    parser.add_argument('--slow', action='store_true', help='Include the case9 solver tests')
    args = parser.parse_args()

    sys.exit(0 if run_tests(args.path, args.pattern, args.verbose, args.slow) else 1)

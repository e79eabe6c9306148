import threading
import unittest

from src.services.batch_service import BatchService


def square(entry):
    return entry["value"] ** 2


def fail_on_odd(entry):
    if entry["value"] % 2:
        raise ValueError(f"odd value {entry['value']}")
    return entry["value"]


class TestBatchService(unittest.TestCase):
    """Test cases for the batch thread pool."""

    def setUp(self):
        """Set up test fixtures."""
        self.service = BatchService(workers=3)

    def tearDown(self):
        """Tear down test fixtures."""
        self.service.shutdown()

    def test_results_in_entry_order(self):
        """Test that results come back in manifest order."""
        self.service.initialize(square)

        results = self.service.run_all([{"value": v} for v in range(8)], timeout=30)

        self.assertEqual(results, [v * v for v in range(8)])

    def test_failed_job(self):
        """Test that a failing job yields its exception and the others still run."""
        self.service.initialize(fail_on_odd)

        results = self.service.run_all([{"value": v} for v in range(4)], timeout=30)

        self.assertEqual(results[0], 0)
        self.assertEqual(results[2], 2)
        self.assertIsInstance(results[1], ValueError)
        self.assertIsInstance(results[3], ValueError)

    def test_parallel_workers(self):
        """Test that jobs run on several threads."""
        seen = set()
        lock = threading.Lock()
        barrier = threading.Barrier(3, timeout=10)

        def record(entry):
            with lock:
                seen.add(threading.get_ident())
            barrier.wait()
            return entry["value"]

        self.service.initialize(record)
        results = self.service.run_all([{"value": v} for v in range(3)], timeout=30)

        self.assertEqual(results, [0, 1, 2])
        self.assertEqual(len(seen), 3)

    def test_empty_batch(self):
        """Test that an empty manifest needs no scheduler run."""
        self.service.initialize(square)
        self.assertEqual(self.service.run_all([]), [])

    def test_start_requires_initialize(self):
        """Test that the scheduler must be initialized before starting."""
        self.assertFalse(self.service.start())

    def test_reinitialize_after_shutdown(self):
        """Test that a service can run a second batch after shutdown."""
        self.service.initialize(square)
        self.service.run_all([{"value": 2}], timeout=30)
        self.service.shutdown()

        self.service.initialize(fail_on_odd)
        self.assertEqual(self.service.run_all([{"value": 4}], timeout=30), [4])


if __name__ == "__main__":
    unittest.main()

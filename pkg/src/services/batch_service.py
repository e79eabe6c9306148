import threading

from apscheduler.events import EVENT_JOB_ERROR, EVENT_JOB_EXECUTED
from apscheduler.executors.pool import ThreadPoolExecutor
from apscheduler.jobstores.memory import MemoryJobStore
from apscheduler.schedulers.background import BackgroundScheduler
from loguru import logger

from src.config import settings


class BatchService:
    """Service running independent pipeline runs on a thread pool."""

    def __init__(self, workers=None):
        self.workers = workers or settings.BATCH_WORKERS
        self.scheduler = None
        self.initialized = False
        self.job_function = None
        self._results = {}
        self._pending = set()
        self._lock = threading.Lock()
        self._done = threading.Event()

    def initialize(self, job_function):
        """
        Initialize the scheduler.

        Args:
            job_function: Called with one manifest entry per job
        """
        if self.initialized:
            logger.warning("Batch scheduler already initialized")
            return True

        self.job_function = job_function
        self.scheduler = BackgroundScheduler(
            jobstores={'default': MemoryJobStore()},
            executors={'default': ThreadPoolExecutor(self.workers)},
            timezone='UTC'
        )
        self.scheduler.add_listener(self._on_job_done, EVENT_JOB_EXECUTED | EVENT_JOB_ERROR)
        logger.info(f"Batch scheduler initialized with {self.workers} workers")
        self.initialized = True
        return True

    def start(self):
        if not self.initialized:
            logger.error("Cannot start batch scheduler: Not initialized")
            return False
        if self.scheduler.running:
            return True
        self.scheduler.start()
        logger.info("Batch scheduler started")
        return True

    def _on_job_done(self, event):
        with self._lock:
            if event.exception is not None:
                logger.error(f"Batch job {event.job_id} failed: {str(event.exception)}")
                self._results[event.job_id] = event.exception
            else:
                self._results[event.job_id] = event.retval
            self._pending.discard(event.job_id)
            if not self._pending:
                self._done.set()

    def submit(self, entry, index):
        """
        Schedule one entry to run now.

        Returns:
            The job ID
        """
        job_id = f'run_{index}'
        with self._lock:
            self._pending.add(job_id)
            self._done.clear()
        self.scheduler.add_job(
            self.job_function,
            'date',
            args=[entry],
            id=job_id,
            name=f"Run {entry.get('case', index)}",
            misfire_grace_time=None
        )
        logger.debug(f"Scheduled {job_id}")
        return job_id

    def run_all(self, entries, timeout=None):
        """
        Run every entry and wait for all of them.

        Args:
            entries: Manifest entries (dicts)
            timeout: Optional seconds to wait

        Returns:
            Results in entry order; a failed job yields its exception
        """
        if not entries:
            return []
        self._results = {}
        self.start()
        job_ids = [self.submit(entry, i) for i, entry in enumerate(entries)]
        logger.info(f"Waiting for {len(job_ids)} runs to complete...")
        if not self._done.wait(timeout):
            logger.error("Batch timed out before every run completed")
        return [self._results.get(job_id) for job_id in job_ids]

    def shutdown(self):
        if not self.initialized:
            return
        self.initialized = False
        if not self.scheduler.running:
            return
        try:
            self.scheduler.shutdown()
            logger.info("Batch scheduler shutdown successfully")
        except Exception as e:
            logger.error(f"Error shutting down batch scheduler: {str(e)}")


# Singleton instance
batch_service = BatchService()

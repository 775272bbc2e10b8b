import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Callable, Dict, Iterable, List, Optional, TypeVar

from tqdm import tqdm

from .errors import InputError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Worker cap from ROUTERKIT_THREADS, defaulting to the CPU count."""
    raw = os.getenv("ROUTERKIT_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"ROUTERKIT_THREADS must be a positive integer, got {raw!r}")
    if value < 1:
        raise InputError(f"ROUTERKIT_THREADS must be a positive integer, got {raw!r}")
    return value


class JobManager:
    """Runs independent jobs (fits, sweeps, trials) on a thread pool."""

    def __init__(self, max_workers: Optional[int] = None, progress: bool = False):
        self.max_workers = max_workers if max_workers is not None else worker_count()
        if self.max_workers < 1:
            raise InputError("max_workers must be >= 1")
        self.progress = progress
        self.lock = threading.Lock()

        # Metrics
        self.total_jobs_created = 0
        self.total_jobs_failed = 0
        self.total_batches = 0
        self.start_time = datetime.now()

    def _run(self, func: Callable[[T], R], item: T):
        try:
            return True, func(item)
        except Exception as e:
            with self.lock:
                self.total_jobs_failed += 1
            logger.debug("Job failed: %r", e)
            return False, e

    def map(self, func: Callable[[T], R], items: Iterable[T], desc: str = "jobs") -> List[R]:
        """Apply func to every item, preserving order.

        All jobs run to completion; the first failure in input order is then
        re-raised.
        """
        items = list(items)
        with self.lock:
            self.total_jobs_created += len(items)
            self.total_batches += 1
        workers = min(self.max_workers, len(items))
        logger.debug("Running %d %s on %d worker(s)", len(items), desc, max(workers, 1))

        if workers <= 1:
            iterator = tqdm(items, desc=desc, disable=not self.progress)
            outcomes = [self._run(func, item) for item in iterator]
        else:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(self._run, func, item) for item in items]
                outcomes = [f.result() for f in tqdm(futures, total=len(futures), desc=desc, disable=not self.progress)]

        for ok, value in outcomes:
            if not ok:
                raise value
        return [value for _, value in outcomes]

    def status(self) -> Dict:
        runtime = (datetime.now() - self.start_time).total_seconds()
        return {
            "workers": self.max_workers,
            "batches": self.total_batches,
            "jobs_created": self.total_jobs_created,
            "jobs_failed": self.total_jobs_failed,
            "runtime_s": runtime,
        }

    def log_status(self):
        """Log current pool counters."""
        s = self.status()
        logger.info(
            "Jobs: %d created, %d failed in %d batch(es) on %d worker(s), %.1fs",
            s["jobs_created"], s["jobs_failed"], s["batches"], s["workers"], s["runtime_s"],
        )

"""Process pool for independent replicates"""

import logging
from multiprocessing import Pool
from typing import Callable, Iterable, List, Optional, TypeVar

from tqdm import tqdm

import config as env

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: Optional[int], n_tasks: int) -> int:
    """Requested workers capped by ZICP_THREADS and by the task count"""
    return max(1, min(requested or env.ZICP_THREADS, env.ZICP_THREADS, n_tasks))


def run_replicates(worker: Callable[[T], R], tasks: Iterable[T], processes: Optional[int] = None,
                   desc: str = "replicates", progress: bool = True) -> List[R]:
    """Map `worker` over `tasks` keeping task order.

    `worker` must be a picklable top-level function; each task carries its own
    random-stream key so the result does not depend on the worker count.
    """
    tasks = list(tasks)
    processes = worker_count(processes, len(tasks))
    logger.debug(f"running {len(tasks)} {desc} on {processes} process(es)")
    if processes <= 1:
        return [worker(t) for t in tqdm(tasks, desc=desc, disable=not progress)]
    with Pool(processes=processes) as pool:
        return list(tqdm(pool.imap(worker, tasks), total=len(tasks), desc=desc, disable=not progress))

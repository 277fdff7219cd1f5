"""
MAP Market Lab - Seeded Path Fan-out

Each path draws from its own generator spawned from (seed, path index), so
a path's randomness does not depend on which worker ran it. Results come
back in index order and every reduction downstream runs over that ordered
list, which keeps aggregates bit-identical at any thread count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

logger = logging.getLogger(__name__)

T = TypeVar("T")


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index`` of a run seeded with ``seed``"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def map_paths(fn: Callable[[int, np.random.Generator], T], n_paths: int, seed: int, threads: int = 1,
              description: Optional[str] = None) -> List[T]:
    """
    Run ``fn(index, rng)`` for every path index and collect the results

    Args:
        fn: per-path worker; must only use the generator it is handed
        n_paths: number of independent paths
        seed: run seed
        threads: worker count; 1 runs inline
        description: when given, a progress bar with this label is shown

    Returns:
        Results ordered by path index
    """
    threads = max(int(threads), 1)
    logger.info("running %d paths on %d thread(s), seed %d", n_paths, threads, seed)

    def task(index: int) -> T:
        return fn(index, path_rng(seed, index))

    if description is None:
        if threads == 1:
            return [task(i) for i in range(n_paths)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(task, range(n_paths)))

    results: List[T] = []
    with Progress(SpinnerColumn(), TextColumn("{task.description}"), BarColumn(), TimeElapsedColumn(),
                  transient=True) as progress:
        bar = progress.add_task(description, total=n_paths)
        if threads == 1:
            for i in range(n_paths):
                results.append(task(i))
                progress.advance(bar)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for result in pool.map(task, range(n_paths)):
                    results.append(result)
                    progress.advance(bar)
    return results

"""Bunch of random utilities."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np
import psutil

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent random stream from a run seed.

    All randomness in a run flows from one integer seed. Sub-streams are
    addressed by integer keys (command id, manifest entry index, epoch, ...)
    and fed to a counter-based Philox generator, so the same
    ``(seed, *keys)`` always gives the same stream no matter in which
    order or on which thread the streams are consumed.

    Example:

    .. code-block:: python

        rng = make_rng(42, 3)  # stream for manifest entry 3
        eps = rng.standard_normal((n_res, 3))

    :param seed: Run seed
    :param keys: Spawn key path
    :return: Fresh generator
    """
    assert seed >= 0, f"Seed must be non-negative, got {seed}"
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def resolve_jobs(jobs: int) -> int:
    """Turn a ``--jobs`` value into a worker count.

    :param jobs: 0 means one worker per physical core
    """
    if jobs > 0:
        return jobs
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return cores


def ordered_map(func: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Map over items, optionally on a thread pool, keeping input order.

    :param func: Pure per-item function
    :param items: Work items
    :param jobs: Worker count, see :py:func:`resolve_jobs`
    :return: Results in the same order as `items`
    """
    items = list(items)
    workers = resolve_jobs(jobs)
    if workers == 1 or len(items) <= 1:
        return [func(i) for i in items]
    logger.debug("Running %d items on %d workers", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))

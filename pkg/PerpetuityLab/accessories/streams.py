"""
Seeded random streams and deterministic replica fan-out.

Every Monte Carlo routine in PerpetuityLab draws from a
``numpy.random.Generator``. Replica work is cut into fixed-size blocks; block
``i`` always receives the ``i``-th child of ``SeedSequence(seed)``, so the
merged result depends on the seed and block size only, never on the number of
worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
import numpy as np
from PerpetuityLab.settings import get_logger, REPLICA_BLOCK_SIZE, DEFAULT_THREADS

logger = get_logger(__name__)


def make_rng(seed):
    """Return a ``numpy.random.Generator`` for ``seed`` (int, SeedSequence or None)."""
    return np.random.default_rng(seed)


def block_sizes(total, block_size=REPLICA_BLOCK_SIZE):
    """
    Split ``total`` replicas into consecutive blocks.

    Parameters
    ----------
    total : int
        Number of replicas, at least 1.
    block_size : int, optional
        Maximal block length.

    Returns
    -------
    list of int
        Block lengths summing to ``total``.
    """
    if total < 1:
        raise ValueError("At least one replica is required.")
    full, rest = divmod(total, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(task, total, seed, threads=DEFAULT_THREADS, block_size=REPLICA_BLOCK_SIZE):
    """
    Run ``task(rng, size, index)`` over replica blocks and return results in block order.

    Parameters
    ----------
    task : callable
        Worker receiving a private Generator, the block length and the block index.
    total : int
        Total number of replicas.
    seed : int, sequence of int or numpy.random.SeedSequence
        Root seed. A SeedSequence is copied, so passing it twice repeats the draws.
    threads : int, optional
        Worker count; 1 runs inline.
    block_size : int, optional
        Replicas per block.

    Returns
    -------
    list
        One result per block, ordered by block index.
    """
    sizes = block_sizes(total, block_size)
    if isinstance(seed, np.random.SeedSequence):
        # fresh copy, spawning never advances the caller's sequence
        root = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key,
                                      pool_size=seed.pool_size)
    else:
        root = np.random.SeedSequence(seed)
    children = root.spawn(len(sizes))
    logger.debug("Dispatching %d replicas in %d blocks on %d thread(s)",
                 total, len(sizes), threads)

    if threads <= 1 or len(sizes) == 1:
        return [task(make_rng(child), size, index)
                for index, (child, size) in enumerate(zip(children, sizes))]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task, make_rng(child), size, index)
                   for index, (child, size) in enumerate(zip(children, sizes))]
        return [future.result() for future in futures]

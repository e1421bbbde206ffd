"""Order-preserving map over independent replicate tasks."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def _run_chunk(fn, chunk):
    return [fn(i) for i in chunk]


def resolve_jobs(n_jobs: int | None) -> int:
    if n_jobs is None or n_jobs == 0:
        return 1
    if n_jobs < 0:
        return max(1, (os.cpu_count() or 1) + 1 + n_jobs)
    return n_jobs


def indexed_map(fn, indices, n_jobs: int | None = 1) -> list:
    """``[fn(i) for i in indices]``, optionally spread over worker processes.

    ``fn`` must be picklable. Each task derives its own randomness from its
    index, so results do not depend on ``n_jobs``.
    """
    indices = list(indices)
    jobs = min(resolve_jobs(n_jobs), max(1, len(indices)))
    if jobs == 1:
        return [fn(i) for i in indices]
    size = -(-len(indices) // (4 * jobs))
    chunks = [indices[k:k + size] for k in range(0, len(indices), size)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_run_chunk, [fn] * len(chunks), chunks)
        return [item for part in parts for item in part]

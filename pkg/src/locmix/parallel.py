"""Deterministic task-parallel helpers.

Work is split into fixed blocks, each with its own child seed, so results do
not depend on how many threads execute the blocks.  ``LOCMIX_THREADS`` caps
the pool size.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_BLOCK = 250


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("LOCMIX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def map_ordered(fn: Callable[[T], R], tasks: Sequence[T], threads: int | None = None) -> list[R]:
    """Apply fn to every task, returning results in task order."""
    k = thread_count(threads)
    if k == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=min(k, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def blocks(total: int, block: int = DEFAULT_BLOCK) -> list[int]:
    """Sizes of consecutive blocks covering ``total`` items."""
    out = [block] * (total // block)
    if total % block:
        out.append(total % block)
    return out


def block_rngs(seed: int | np.random.SeedSequence, count: int) -> list[np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in ss.spawn(count)]


def run_blocks(fn: Callable[[int, np.random.Generator], R], total: int, seed,
               block: int = DEFAULT_BLOCK, threads: int | None = None) -> list[R]:
    """Run fn(size, rng) on each block with a per-block seed stream."""
    sizes = blocks(total, block)
    rngs = block_rngs(seed, len(sizes))
    return map_ordered(lambda a: fn(*a), list(zip(sizes, rngs)), threads)

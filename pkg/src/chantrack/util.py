"""Small shared helpers."""

from __future__ import annotations

from contextlib import nullcontext

import numpy as np

__all__ = ["as_rng", "single_thread_blas"]


def as_rng(seed_or_rng) -> np.random.Generator:
    """Normalize an int seed / SeedSequence / Generator into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


try:
    from threadpoolctl import threadpool_limits

    def single_thread_blas():
        """Pin BLAS to one thread for loops of small factorizations and matvecs.

        The tracking and prediction loops alternate sub-millisecond kernels
        (30x30 solves, ~10^3 matvecs) where multithreaded BLAS pools spend
        more time waking workers than computing; one thread is optimal there.
        """
        return threadpool_limits(limits=1)

except ImportError:  # pragma: no cover

    def single_thread_blas():
        return nullcontext()

"""Worker-thread control.

Deterministic mode pins every BLAS pool to one thread so reductions always
run in a fixed order; otherwise ``threads`` caps the pools. The limit object
is kept alive module-wide so it applies until changed again.
"""
from __future__ import annotations

import threadpoolctl

_active_limit: threadpoolctl.threadpool_limits | None = None
_current: tuple[int, bool] | None = None


def apply(threads: int | None, deterministic: bool) -> int:
    """Apply the thread cap; returns the effective worker count."""
    global _active_limit, _current
    effective = 1 if deterministic else max(1, threads or 1)
    key = (effective, deterministic)
    if key != _current:
        if _active_limit is not None:
            _active_limit.restore_original_limits()
        _active_limit = threadpoolctl.threadpool_limits(limits=effective)
        _current = key
    return effective

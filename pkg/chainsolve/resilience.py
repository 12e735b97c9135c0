"""
Failure handling for chainsolve.
Typed errors for numerical failures, failure-isolated batch execution and a kernel-table cache.
"""

import hashlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ChainsolveError(Exception):
    """Base class for all chainsolve errors"""


class ConfigError(ChainsolveError):
    """Invalid or incomplete run configuration"""
    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")


class GridError(ChainsolveError):
    """Incompatible grids or sampled data"""


class NumericalError(ChainsolveError):
    """A computation did not reach its accuracy target"""


class QuadratureError(NumericalError):
    """Radial quadrature error estimate above tolerance"""
    def __init__(self, estimate: float, tolerance: float, where: str = ""):
        self.estimate = estimate
        self.tolerance = tolerance
        self.where = where
        super().__init__(f"quadrature error estimate {estimate:.3e} exceeds {tolerance:.1e} {where}".rstrip())


class ModeError(NumericalError):
    """Per-mode kernel requested at a zero or non-finite wavenumber"""
    def __init__(self, r: float):
        self.r = r
        super().__init__(f"mode kernel needs a finite wavenumber r > 0, got {r!r}")


class SingularOffsetError(NumericalError):
    """Kernel requested at a singular offset; the smooth part is attached when known"""
    def __init__(self, k2: Optional[float] = None):
        self.k2 = k2
        detail = "" if k2 is None else f" (k2 = {k2:.12g})"
        super().__init__(f"kernel total undefined at zero offset{detail}")


class MemoryBudgetError(ChainsolveError):
    """Kernel table would exceed the configured memory budget"""
    def __init__(self, required_mb: float, limit_mb: float):
        self.required_mb = required_mb
        self.limit_mb = limit_mb
        super().__init__(f"kernel table needs {required_mb:.0f} MB, limit is {limit_mb:.0f} MB")


class LinearSolveError(NumericalError):
    """Preconditioned CG did not converge"""
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"CG stopped after {iterations} iterations with relative residual {residual:.3e}")


class NoNehariSeedError(NumericalError):
    """No seed reached the region V0 < 0"""
    def __init__(self, attempts: int):
        self.attempts = attempts
        super().__init__(f"no Nehari seed: V0 >= 0 for all {attempts} seed widths")


class ConvergenceError(NumericalError):
    """Descent stopped before the gradient tolerance was met"""
    def __init__(self, iterations: int, grad_norm: float, trace: Optional[list] = None):
        self.iterations = iterations
        self.grad_norm = grad_norm
        self.trace = trace or []
        super().__init__(f"no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")


class SupportError(ChainsolveError):
    """Test function does not fit inside the slab"""
    def __init__(self, extent: float, ell: float):
        self.extent = extent
        self.ell = ell
        super().__init__(f"support reaches |x3| = {extent:.4g}, not inside slab of half-period {ell:.4g}")


class InsufficientResultsError(ChainsolveError):
    """Too few work items succeeded"""
    def __init__(self, required: int, received: int, errors: list[str]):
        self.required = required
        self.received = received
        self.errors = errors
        super().__init__(f"Need {required} results, got {received}")


def resilient_map(
    func: Callable[[T], Any],
    items: list[T],
    max_workers: int = 1,
    min_required: int = 0,
) -> tuple[list[tuple[T, Any]], list[tuple[T, str]]]:
    """
    Run independent work items, isolating failures.

    Numpy and scipy release the GIL inside FFTs and BLAS, so a thread pool
    gives real parallelism for the ell-scan rows.

    Returns:
        - List of (item, result) for items that succeeded, in input order
        - List of (item, error message) for items that raised ChainsolveError
    """
    def guarded(item: T):
        try:
            return item, func(item), None
        except ChainsolveError as e:
            logger.warning(f"Work item {item!r} failed: {e}")
            return item, None, str(e)

    if max_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(guarded, items))
    else:
        outcomes = [guarded(item) for item in items]

    successful = [(item, result) for item, result, error in outcomes if error is None]
    failed = [(item, error) for item, _, error in outcomes if error is not None]

    if len(successful) < min_required:
        raise InsufficientResultsError(min_required, len(successful), [e for _, e in failed])

    return successful, failed


class TableCache:
    """In-memory cache of kernel tables keyed by grid and kernel settings, shared by scan threads"""

    def __init__(self, max_entries: int = 8):
        self.tables: dict[str, Any] = {}
        self.max_entries = max_entries
        self._lock = threading.Lock()

    def _cache_key(self, grid: Any, near_field_cells: int, settings: dict[str, Any]) -> str:
        extra = ",".join(f"{name}={settings[name]!r}" for name in sorted(settings))
        return hashlib.sha256(f"{grid!r}:{near_field_cells}:{extra}".encode()).hexdigest()[:32]

    def get(self, grid: Any, near_field_cells: int, **settings: Any) -> Optional[Any]:
        key = self._cache_key(grid, near_field_cells, settings)
        with self._lock:
            table = self.tables.get(key)
        if table is not None:
            logger.debug(f"Table cache hit for ell={grid.ell}")
        return table

    def set(self, grid: Any, near_field_cells: int, table: Any, **settings: Any):
        key = self._cache_key(grid, near_field_cells, settings)
        with self._lock:
            self.tables.pop(key, None)
            while self.tables and len(self.tables) >= self.max_entries:
                # drop the oldest entry
                self.tables.pop(next(iter(self.tables)), None)
            self.tables[key] = table

    def clear(self):
        with self._lock:
            self.tables.clear()


# Global instance
_table_cache = TableCache()


def get_table_cache() -> TableCache:
    return _table_cache

"""Exception types shared across the package."""


class HBProxyError(Exception):
    """Base class for all package errors."""


class ConfigError(HBProxyError):
    """Malformed case file.  Carries the offending line number when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class TopologyError(HBProxyError):
    """Inconsistent block/cut/body description."""


class CapacityError(HBProxyError):
    """More ranks requested than there are blocks to distribute."""


class ProtocolError(HBProxyError):
    """Message-layer misuse: bad envelope, duplicate in-flight tag, leaked messages."""


class CollectiveError(HBProxyError):
    """Mismatched participation in a collective operation."""


class RunAborted(HBProxyError):
    """Raised on ranks woken up because another rank failed."""


class RankFailure(HBProxyError):
    """A rank worker died; carries the rank id and the original error."""

    def __init__(self, rank, cause):
        self.rank = rank
        self.cause = cause
        super().__init__(f"rank {rank} failed: {cause!r}")


class DivergenceError(HBProxyError):
    """Non-finite solution value detected after a Runge-Kutta stage."""

    def __init__(self, block, i, j, p, n):
        self.block, self.i, self.j, self.p, self.n = block, i, j, p, n
        super().__init__(
            f"non-finite value in block {block} at (i={i}, j={j}, pde={p}, plane={n})"
        )


class PlanError(HBProxyError):
    """Invalid work plan: skewed init map or overlapping record ownership."""


class DomainError(HBProxyError):
    """Metric formula evaluated outside its domain (non-positive inputs etc.)."""


class WriteError(HBProxyError):
    """Output file failure; message carries the offset/thread context."""

"""
Beacon Privacy Defense - Error Hierarchy.

Every failure the toolkit raises on purpose derives from BeaconError, which
carries the CLI exit code and a machine-readable dict for stderr.
"""

from typing import Any, Dict, Optional


class BeaconError(Exception):
    """
    Root of all toolkit errors.

    Attributes:
        message: Human-readable description.
        exit_code: Process exit status used by the CLI.
        details: Extra structured context (field names, offsets, ids).
    """

    exit_code: int = 2
    kind: str = "error"

    def __init__(self, message: str, **details: Any):
        """Initialize BeaconError."""
        self.message = message
        self.details: Dict[str, Any] = {k: v for k, v in details.items() if v is not None}
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert error to a JSON-serializable dictionary.

        Returns:
            dict: {"error": kind, "message": ..., **details}
        """
        return {"error": self.kind, "message": self.message, **self.details}


class ParameterError(BeaconError, ValueError):
    """Invalid numeric or structural parameter (δ, counts, K, ε, p)."""

    kind = "parameter_error"


class ConfigurationError(BeaconError):
    """Invalid configuration combination (e.g. online fixed threshold θ > 0)."""

    kind = "configuration_error"


class DomainError(ParameterError):
    """Operation undefined on its input (e.g. empty Q₁ for the δ-bound)."""

    kind = "domain_error"


class SizeError(ParameterError):
    """Instance too large for the exhaustive solver."""

    kind = "size_error"


class DegenerateError(ParameterError):
    """Input without enough spread to be clustered or ranked."""

    kind = "degenerate_error"


class SnvIndexError(BeaconError, IndexError):
    """SNV or individual index outside the matrix."""

    kind = "index_error"


class FormatError(BeaconError):
    """
    Malformed matrix file, config file or snapshot.

    Attributes carried in details: path, line, field, offset.
    """

    kind = "format_error"

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        field: Optional[str] = None,
        offset: Optional[int] = None,
    ):
        """Initialize FormatError, appending location info to the message."""
        where = []
        if path:
            where.append(f"file {path}")
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full, path=path, line=line, field=field, offset=offset)


class SnapshotError(FormatError):
    """Corrupt or unreadable service snapshot / commitment log."""

    kind = "snapshot_error"


class ContractViolationError(BeaconError):
    """A caller broke a documented contract (e.g. flipping a 0-response)."""

    kind = "contract_violation"
    exit_code = 3


class InvariantError(BeaconError):
    """An internal invariant check failed."""

    kind = "invariant_failure"
    exit_code = 3


class InfeasibleError(BeaconError):
    """
    No flip set can satisfy the privacy constraints.

    Attributes:
        individual: Index of an individual that cannot be protected.
    """

    kind = "infeasible"
    exit_code = 1

    def __init__(self, message: str, individual: Optional[int] = None):
        """Initialize InfeasibleError."""
        self.individual = individual
        super().__init__(message, individual=individual)


class AuthError(BeaconError):
    """Authenticated service mode received a request without a token."""

    kind = "missing_token"

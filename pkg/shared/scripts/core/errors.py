"""
Error types raised by the workbench.

Every error carries a stable ``code`` so the entry scripts can report
failures as one machine-readable JSON line.
"""

import json
import sys


class WorkbenchError(Exception):
    """Base class for all workbench errors."""

    code = "workbench_error"


class ConfigurationError(WorkbenchError, ValueError):
    """Invalid or unknown configuration values."""

    code = "configuration_error"


class UsageError(WorkbenchError, ValueError):
    """An operation was called with an argument of the wrong kind."""

    code = "usage_error"


class ContractError(WorkbenchError, ValueError):
    """Shapes, architectures or statistics violate an operation's precondition."""

    code = "contract_error"


class DomainError(WorkbenchError, ValueError):
    """A numeric argument lies outside the function's domain."""

    code = "domain_error"


class DatasetMissingError(WorkbenchError, FileNotFoundError):
    """A command needs artifacts that an earlier command has not produced."""

    code = "dataset_missing"

    def __init__(self, path, hint: str = "run gen first"):
        super().__init__(f"{path} not found ({hint})")
        self.path = str(path)
        self.hint = hint


def report_failure(exc: BaseException) -> int:
    """
    Print one ``{"error": code, "message": ...}`` line on stderr.

    Returns:
        Process exit code: 2 for missing artifacts, 1 otherwise
    """
    if isinstance(exc, WorkbenchError):
        code = exc.code
    elif isinstance(exc, OSError):
        code = "io_error"
    else:
        code = "internal_error"
    print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
    return 2 if isinstance(exc, DatasetMissingError) else 1

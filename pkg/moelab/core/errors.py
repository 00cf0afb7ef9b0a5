"""
Error Handling Module
=====================

Exception hierarchy shared by every moelab module:
- Structured errors (code, severity, category, details)
- Process exit codes for the command-line front end
- Log-friendly serialization
- A decorator mapping failures to exit codes

Exit codes: 0 success, 1 configuration, 2 data/contract, 3 numeric.
"""

import logging
import traceback
import uuid
from datetime import datetime, timezone
from enum import Enum
from functools import wraps
from typing import Any, Callable, Dict, Iterable, Optional

logger = logging.getLogger(__name__)


# =============================================================================
# Error Severity Levels
# =============================================================================

class ErrorSeverity(str, Enum):
    DEBUG = "debug"
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


class ErrorCategory(str, Enum):
    CONFIGURATION = "configuration"  # Invalid or inconsistent settings
    DATA = "data"                    # Corpus or batch content problems
    CONTRACT = "contract"            # Precondition violated by the caller
    IO = "io"                        # Filesystem failures
    NUMERIC = "numeric"              # Shapes, NaN/Inf, non-finite loss
    INTERNAL = "internal"


# =============================================================================
# Custom Exception Classes
# =============================================================================

class MoeLabError(Exception):
    """Base exception for moelab"""

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        error_code: str = "UNKNOWN_ERROR",
        severity: ErrorSeverity = ErrorSeverity.ERROR,
        category: ErrorCategory = ErrorCategory.INTERNAL,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.severity = severity
        self.category = category
        self.details = details or {}
        self.error_id = str(uuid.uuid4())[:8]
        self.timestamp = datetime.now(timezone.utc)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a dictionary for reports"""
        return {
            "error": True,
            "error_id": self.error_id,
            "code": self.error_code,
            "message": self.message,
            "category": self.category.value,
            "exit_code": self.exit_code,
            "timestamp": self.timestamp.isoformat(),
        }

    def to_log_dict(self) -> Dict[str, Any]:
        """Convert to a dictionary for logging (includes internal details)"""
        return {
            **self.to_dict(),
            "details": self.details,
            "severity": self.severity.value,
            "traceback": traceback.format_exc(),
        }


class ConfigError(MoeLabError):
    """Configuration is invalid or internally inconsistent"""

    exit_code = 1

    def __init__(self, message: str, violations: Optional[Iterable[str]] = None, **kwargs):
        violations = list(violations or [])
        if violations:
            message = f"{message}: " + "; ".join(violations)
        super().__init__(
            message=message,
            error_code="CONFIG_ERROR",
            severity=ErrorSeverity.ERROR,
            category=ErrorCategory.CONFIGURATION,
            **kwargs,
        )
        self.violations = violations
        self.details["violations"] = violations


class CompatibilityError(ConfigError):
    """Checkpoint and data were produced under different domain schemas"""

    def __init__(self, expected: str, found: str, **kwargs):
        super().__init__(f"schema hash mismatch: expected {expected}, found {found}", **kwargs)
        self.error_code = "COMPATIBILITY_ERROR"
        self.details.update({"expected": expected, "found": found})


class DataError(MoeLabError):
    """Corpus or batch content is malformed"""

    exit_code = 2

    def __init__(self, message: str, coordinates: Optional[Dict[str, Any]] = None, **kwargs):
        super().__init__(
            message=message,
            error_code="DATA_ERROR",
            severity=ErrorSeverity.ERROR,
            category=ErrorCategory.DATA,
            **kwargs,
        )
        self.details["coordinates"] = coordinates or {}


class DomainLookupError(DataError):
    """Domain id is not part of the schema or parameter map"""

    def __init__(self, domain: Any, known: Optional[Iterable[Any]] = None, **kwargs):
        known = list(known or [])
        super().__init__(f"unknown domain {domain!r} (known: {known})", **kwargs)
        self.error_code = "UNKNOWN_DOMAIN"
        self.details.update({"domain": domain, "known": known})


class ContractError(MoeLabError):
    """Caller violated an operation's precondition"""

    exit_code = 2

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message=message,
            error_code="CONTRACT_ERROR",
            severity=ErrorSeverity.WARNING,
            category=ErrorCategory.CONTRACT,
            **kwargs,
        )


class CorpusIOError(MoeLabError):
    """Reading or writing a file failed"""

    exit_code = 2

    def __init__(self, path: Any, message: str, **kwargs):
        super().__init__(
            message=f"{path}: {message}",
            error_code="IO_ERROR",
            severity=ErrorSeverity.ERROR,
            category=ErrorCategory.IO,
            **kwargs,
        )
        self.details["path"] = str(path)


class DimensionError(MoeLabError):
    """Tensor shapes are incompatible"""

    exit_code = 3

    def __init__(self, message: str, *shapes: Any, **kwargs):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(
            message=message,
            error_code="DIMENSION_ERROR",
            severity=ErrorSeverity.ERROR,
            category=ErrorCategory.NUMERIC,
            **kwargs,
        )
        self.details["shapes"] = [list(s) for s in shapes]


class NumericError(MoeLabError):
    """A non-finite value was produced"""

    exit_code = 3

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message=message,
            error_code="NUMERIC_ERROR",
            severity=ErrorSeverity.CRITICAL,
            category=ErrorCategory.NUMERIC,
            **kwargs,
        )


# =============================================================================
# Error Handler Decorators
# =============================================================================

def exit_code_for(exc: BaseException) -> int:
    """Process exit code for an exception"""
    if isinstance(exc, MoeLabError):
        return exc.exit_code
    return 1


def handle_cli_errors(func: Callable[..., int]) -> Callable[..., int]:
    """
    Run a command and translate failures into exit codes.

    MoeLabError subclasses are logged with their structured payload;
    anything else is logged with a traceback and mapped to exit code 1.
    """

    @wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs)
        except MoeLabError as e:
            log_level = logging.WARNING if e.severity == ErrorSeverity.WARNING else logging.ERROR
            logger.log(
                log_level,
                f"[{e.error_id}] {e.error_code}: {e.message}",
                extra={"error": e.to_log_dict()},
            )
            return e.exit_code
        except Exception as e:
            logger.exception(f"Unhandled error in {func.__name__}: {e}")
            return 1

    return wrapper

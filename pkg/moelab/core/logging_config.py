"""
Structured Logging Module
=========================

Logging for experiment runs with:
- JSON structured output (for log files and batch jobs)
- Coloured console output (for interactive runs)
- Run context tracking (run id, command, seed, step)
- Performance metrics in logs
"""

import json
import logging
import sys
import time
import traceback
import uuid
from contextvars import ContextVar
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, Optional

# Context variable for run tracking
run_context: ContextVar[Dict[str, Any]] = ContextVar("run_context", default={})

_RESERVED_ATTRS = {
    "name", "msg", "args", "created", "filename", "funcName",
    "levelname", "levelno", "lineno", "module", "msecs",
    "pathname", "process", "processName", "relativeCreated",
    "stack_info", "exc_info", "exc_text", "thread", "threadName",
    "message", "asctime", "taskName",
}


# =============================================================================
# JSON Formatter
# =============================================================================

class JSONFormatter(logging.Formatter):
    """
    JSON log formatter for structured logging

    Output format:
    {
        "timestamp": "2024-01-01T12:00:00.000Z",
        "level": "INFO",
        "logger": "moelab.train.loop",
        "message": "Log message",
        "run_id": "abc123",
        "extra": {...}
    }
    """

    def __init__(self, include_trace: bool = True):
        super().__init__()
        self.include_trace = include_trace

    def format(self, record: logging.LogRecord) -> str:
        log_entry: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        ctx = run_context.get()
        if ctx:
            for key in ("run_id", "command", "seed", "step"):
                if key in ctx:
                    log_entry[key] = ctx[key]

        log_entry["location"] = {
            "file": record.filename,
            "line": record.lineno,
            "function": record.funcName,
        }

        if record.exc_info and self.include_trace:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": traceback.format_exception(*record.exc_info),
            }

        extra = {k: v for k, v in record.__dict__.items() if k not in _RESERVED_ATTRS}
        if extra:
            log_entry["extra"] = extra

        return json.dumps(log_entry, default=str)


# =============================================================================
# Console Formatter (Human Readable)
# =============================================================================

class ColoredFormatter(logging.Formatter):
    """Coloured console output for interactive runs"""

    COLORS = {
        "DEBUG": "\033[36m",     # Cyan
        "INFO": "\033[32m",      # Green
        "WARNING": "\033[33m",   # Yellow
        "ERROR": "\033[31m",     # Red
        "CRITICAL": "\033[41m",  # Red background
    }
    RESET = "\033[0m"

    def format(self, record: logging.LogRecord) -> str:
        color = self.COLORS.get(record.levelname, "")
        timestamp = datetime.fromtimestamp(record.created).strftime("%H:%M:%S.%f")[:-3]

        ctx = run_context.get()
        parts = [
            f"\033[90m{timestamp}\033[0m",
            f"{color}{record.levelname:8s}{self.RESET}",
            f"\033[35m{record.name:24s}\033[0m",
        ]
        if ctx.get("run_id"):
            tag = ctx["run_id"][:8]
            if "step" in ctx:
                tag += f"@{ctx['step']}"
            parts.append(f"\033[90m[{tag}]\033[0m")
        parts.append(record.getMessage())

        result = " ".join(parts)
        if record.exc_info:
            result += f"\n{self.COLORS['ERROR']}{self.formatException(record.exc_info)}{self.RESET}"
        return result


# =============================================================================
# Logger Configuration
# =============================================================================

class LogConfig:
    """Logger configuration"""

    def __init__(
        self,
        level: str = "INFO",
        json_format: bool = False,
        include_trace: bool = True,
        log_file: Optional[str] = None,
    ):
        self.level = level
        self.json_format = json_format
        self.include_trace = include_trace
        self.log_file = log_file


def setup_logging(config: Optional[LogConfig] = None) -> logging.Logger:
    """
    Setup application logging

    Usage:
        setup_logging(LogConfig(level="DEBUG", json_format=False))
    """
    config = config or LogConfig()
    level = getattr(logging, config.level.upper())

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    if config.json_format:
        console_handler.setFormatter(JSONFormatter(include_trace=config.include_trace))
    else:
        console_handler.setFormatter(ColoredFormatter())
    root_logger.addHandler(console_handler)

    if config.log_file:
        file_handler = logging.FileHandler(config.log_file, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(JSONFormatter(include_trace=config.include_trace))
        root_logger.addHandler(file_handler)

    return root_logger


# =============================================================================
# Run Context
# =============================================================================

class LogContext:
    """Context manager adding run fields to every record logged inside it"""

    def __init__(self, **kwargs):
        self.context = kwargs
        self._token = None

    def __enter__(self):
        current = run_context.get().copy()
        current.setdefault("run_id", uuid.uuid4().hex[:12])
        current.update(self.context)
        self._token = run_context.set(current)
        return self

    def __exit__(self, *args):
        run_context.reset(self._token)


def update_context(**kwargs) -> None:
    """Update fields of the active run context in place (e.g. the training step)"""
    current = run_context.get().copy()
    current.update(kwargs)
    run_context.set(current)


# =============================================================================
# Performance Logging
# =============================================================================

class PerformanceLogger:
    """Logger for performance metrics"""

    def __init__(self, logger_name: str = "moelab.performance"):
        self.logger = logging.getLogger(logger_name)

    def log_throughput(self, operation: str, count: int, duration_ms: float, unit: str = "items", **extra):
        """Log throughput metrics"""
        rate = (count / duration_ms) * 1000 if duration_ms > 0 else 0.0
        self.logger.info(
            f"{operation}: {count} {unit} in {duration_ms:.2f}ms ({rate:.2f}/s)",
            extra={
                "operation": operation,
                "count": count,
                "duration_ms": duration_ms,
                "rate_per_second": rate,
                **extra,
            },
        )


def timed(logger: Optional[logging.Logger] = None, operation: Optional[str] = None):
    """Decorator to log function execution time"""

    def decorator(func):
        op = operation or func.__name__
        log = logger or logging.getLogger(func.__module__)

        @wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration_ms = (time.perf_counter() - start) * 1000
                log.warning(
                    f"{op} failed after {duration_ms:.2f}ms: {e}",
                    extra={"operation": op, "duration_ms": duration_ms, "error": str(e)},
                )
                raise
            duration_ms = (time.perf_counter() - start) * 1000
            log.debug(
                f"{op} completed in {duration_ms:.2f}ms",
                extra={"operation": op, "duration_ms": duration_ms},
            )
            return result

        return wrapper

    return decorator


perf_logger = PerformanceLogger()

# cmtf_fusion/core/exceptions.py
"""
Consistent error types for the solver, the data containers and the CLI.

Pure Python with no numerical imports; LinAlgError is matched by class
name. Every layer imports from here.
"""
from __future__ import annotations


class CmtfError(Exception):
    """Base exception for all cmtf-fusion errors."""


class ConfigError(CmtfError, ValueError):
    """Malformed or incomplete configuration (JSON config, CLI flags)."""


class ValidationError(CmtfError, ValueError):
    """A precondition or container invariant does not hold."""


# Containers raise this name; it is the same type as ValidationError.
InvariantError = ValidationError


class DataFormatError(ValidationError):
    """On-disk data does not follow the tensor/matrix storage format."""


class SolverAbort(CmtfError, RuntimeError):
    """A fit could not continue (singular system, non-finite iterate)."""


# ---------------------------------------------------------------------------
# Error-mapping helpers
# ---------------------------------------------------------------------------

_NUMERICAL_PATTERNS: list[tuple[str, str]] = [
    ("LinAlgError", "Linear system became singular; the step size underflowed."),
    ("FloatingPointError", "Non-finite value encountered during the fit."),
]


def _chain(new: CmtfError, cause: BaseException) -> CmtfError:
    """Attach *cause* as ``__cause__`` (mimics ``raise new from cause``)."""
    new.__cause__ = cause
    return new


def map_exception(exc: BaseException) -> CmtfError:
    """
    Wrap a low-level exception into the appropriate ``CmtfError`` subclass
    with a user-facing message while preserving the original as ``__cause__``.

    If *exc* is already a ``CmtfError`` it is returned unchanged.
    """
    if isinstance(exc, CmtfError):
        return exc

    # Numerical failures inside numpy / scipy
    for type_name, message in _NUMERICAL_PATTERNS:
        if any(cls.__name__ == type_name for cls in type(exc).__mro__):
            return _chain(SolverAbort(f"{message} ({exc})"), exc)

    # Missing or unreadable files
    if isinstance(exc, FileNotFoundError):
        path = exc.filename or str(exc)
        return _chain(DataFormatError(f"File not found: {path}"), exc)
    if isinstance(exc, OSError):
        path = exc.filename or ""
        suffix = f": {path}" if path else ""
        return _chain(DataFormatError(f"Could not read or write data{suffix} ({exc.strerror or exc})"), exc)

    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return _chain(ConfigError(str(exc)), exc)

    return _chain(SolverAbort(str(exc)), exc)


def friendly_message(exc: BaseException) -> str:
    """Return a short, CLI-safe description for *exc*."""
    mapped = map_exception(exc)
    return str(mapped)


def exit_code(exc: BaseException) -> int:
    """Process exit code for *exc*: 1 for bad input, 2 for solver aborts."""
    mapped = map_exception(exc)
    if isinstance(mapped, SolverAbort):
        return 2
    return 1

"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code so failures stay diagnosable from
shell scripts: validation problems exit 1, missing or unreadable artifacts
exit 2, numerical failures exit 3.
"""

from __future__ import annotations


class FewShotError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(FewShotError):
    """Invalid configuration value, malformed override, or bad argument."""

    exit_code = 1


class ArtifactError(FewShotError):
    """A required artifact is missing, unreadable, or inconsistent."""

    exit_code = 2


class NumericalError(FewShotError):
    """A numerical invariant failed (non-finite loss, broken normalization)."""

    exit_code = 3

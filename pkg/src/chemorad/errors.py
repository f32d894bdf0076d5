"""Exception hierarchy shared by all modules."""
from __future__ import annotations


class ChemoradError(Exception):
    """Base class for every error raised by the package."""


class DomainError(ChemoradError, ValueError):
    """An argument lies outside the domain of a mathematical operation."""


class ConfigError(ChemoradError, ValueError):
    """Invalid configuration value.

    ``key`` names the offending field and ``constraint`` the violated
    requirement, so CLI front ends can report both.
    """

    def __init__(self, message: str, key: str | None = None, constraint: str | None = None):
        super().__init__(message)
        self.key = key
        self.constraint = constraint


class RegimeError(ConfigError):
    """A formula was requested outside the parameter regime where it applies."""


class SchemeError(ChemoradError, RuntimeError):
    """The discrete scheme produced an inadmissible state (internal failure)."""

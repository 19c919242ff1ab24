"""Exception types shared across the package.

The CLI maps these onto its exit codes: usage/config problems exit 1,
ingestion problems exit 2, numerical failures exit 3, and a failed
self-validation run exits 4.
"""

from __future__ import annotations


class PrefcausalError(Exception):
    """Base class for package errors."""


class ConfigError(PrefcausalError):
    """Invalid configuration or command-line usage."""


class GeometryError(PrefcausalError):
    """Invalid grid geometry or out-of-domain points."""


class IngestError(PrefcausalError):
    """Malformed or inconsistent input data."""


class NumericalError(PrefcausalError):
    """A numerical routine failed beyond recovery (e.g. the jitter ladder)."""


class ValidationError(PrefcausalError):
    """A self-validation check failed."""

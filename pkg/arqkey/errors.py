"""Exception types raised by arqkey."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .protocol import ExchangeTrace


class ArqKeyError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ArqKeyError, ValueError):
    """An argument lies outside the operation's domain or a type invariant."""


class IncompleteExchangeError(ArqKeyError):
    """The frame cap was hit before Bob acknowledged k frames."""

    def __init__(self, trace: "ExchangeTrace", max_frames: int) -> None:
        acked = len(trace.acked_indices)
        super().__init__(
            f"exchange incomplete: {acked} ACKs after {max_frames} frames"
        )
        self.trace = trace
        self.max_frames = max_frames


class EnumerationBoundError(ArqKeyError, ValueError):
    """Exact posterior enumeration requested beyond the configured bound."""


class TraceFormatError(ArqKeyError, ValueError):
    """A trace file line could not be parsed."""

    def __init__(self, path: str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class ConfigError(ArqKeyError, ValueError):
    """Bad configuration key or value (from a config file or a flag)."""

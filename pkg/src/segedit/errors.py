"""Exception hierarchy shared by all segedit modules.

Every error raised by the engine derives from :class:`SegEditError` and may
carry a ``stage`` attribute naming the pipeline stage that produced it, so
callers (CLI, HTTP service) can attribute failures without string matching.
"""

from __future__ import annotations


class SegEditError(Exception):
    """Base class for all segedit errors."""

    def __init__(self, message: str, *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        base = super().__str__()
        if self.stage:
            return f"[{self.stage}] {base}"
        return base


class ShapeError(SegEditError):
    """Array dimensions do not agree with the operation's contract."""


class ParameterError(SegEditError):
    """A scalar argument is outside its legal range."""


class EmptyRegionError(SegEditError):
    """An operation that requires a nonempty mask received an empty one."""


class NoTargetError(SegEditError):
    """No target object could be matched to the instruction."""


class AmbiguityError(SegEditError):
    """The instruction contains conflicting action keywords."""


class PaletteError(SegEditError):
    """A segmentation map references class ids missing from its palette."""


class NumericError(SegEditError):
    """A loss or metric became non-finite."""


class BackendError(SegEditError):
    """A pluggable backend failed or violated its contract."""


class SessionNotFoundError(SegEditError):
    """Requested session id does not exist in the store."""


def with_stage(err: SegEditError, stage: str) -> SegEditError:
    """Attach stage attribution to an error in flight (idempotent)."""
    if err.stage is None:
        err.stage = stage
    return err

"""Exception hierarchy for the sciforge engine.

Every domain failure raised by the engine derives from :class:`SciForgeError`
so the CLI can map any of them to exit code 1.
"""

from __future__ import annotations


class SciForgeError(Exception):
    """Base class for all engine-level failures."""


# --- knowledge base ---------------------------------------------------------

class DuplicateId(SciForgeError):
    pass


class AtomicityViolation(SciForgeError):
    """A data unit declared more than one modality / scope / target object."""


class DanglingToolRef(SciForgeError):
    """A case references a tool id absent from the tool lake."""


class CorruptStore(SciForgeError):
    """Persisted store failed schema-version or checksum validation."""


# --- data access ------------------------------------------------------------

class RootMissing(SciForgeError):
    pass


class UnreadableFile(SciForgeError):
    pass


class BudgetExhausted(SciForgeError):
    """Exploration reflection loop ran out of attempts.

    Carries the attempt trace so callers can build a failure record.
    """

    def __init__(self, message: str, attempts: list | None = None):
        super().__init__(message)
        self.attempts = attempts or []


# --- intent parsing ---------------------------------------------------------

class UnparsableQuery(SciForgeError):
    """Backend returned a malformed requirement structure after retries."""


class NoBindableUnits(SciForgeError):
    """Case adaptation could not bind any archetype to a concrete unit."""


class EmptySelection(SciForgeError):
    """Plan generation found no unit matching any requirement variable."""


# --- data processing --------------------------------------------------------

class NoToolForStrategy(SciForgeError):
    """A strategy clause names a capability absent from the tool lake."""


class BackendFailure(SciForgeError):
    pass


class RepairBudgetExhausted(SciForgeError):
    """Execute/repair loop ran out of attempts.

    ``trace`` holds one record per attempt (revision id, error excerpt).
    """

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class CyclicDependency(SciForgeError):
    pass


# --- data integration -------------------------------------------------------

class UnsatisfiableStrategy(SciForgeError):
    """Integration strategy references fields or granularities absent from the units."""


class NoCandidate(SciForgeError):
    """No tool in the lake can realize an integration constraint."""

    def __init__(self, message: str, constraint=None):
        super().__init__(message)
        self.constraint = constraint


class PrecedenceCycle(SciForgeError):
    pass


class BacktrackExhausted(SciForgeError):
    """Integration backtracking ran out of alternatives.

    ``trace`` records one entry per candidate substitution attempted.
    """

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class ConstraintViolation(SciForgeError):
    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


# --- planner backend --------------------------------------------------------

class MalformedResponse(SciForgeError):
    """Backend response failed schema validation."""


class BackendTimeout(SciForgeError):
    pass


class BackendUnavailable(SciForgeError):
    pass


class ScriptExhausted(SciForgeError):
    """Scripted backend received more calls than its recorded sequence."""


# --- execution sandbox ------------------------------------------------------

class TimeoutKilled(SciForgeError):
    """Sandboxed process exceeded its timeout and was killed."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class SpawnFailure(SciForgeError):
    pass


# --- experiment workspace ---------------------------------------------------

class ChecksumMismatch(SciForgeError):
    """An indexed artifact was mutated after being snapshot."""

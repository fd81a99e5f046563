"""Typed domain errors shared across the toolkit."""


class TsadError(Exception):
    """Base class for all domain errors (CLI maps these to exit code 1)."""


# signal ingestion / slicing
class MalformedCsv(TsadError):
    pass


class DuplicateTimestamp(TsadError):
    pass


class EmptySignal(TsadError):
    pass


class EmptySlice(TsadError):
    pass


class InfeasibleSpec(TsadError):
    pass


# primitives
class AllMissingChannel(TsadError):
    pass


class SignalTooShort(TsadError):
    pass


class SingularSystem(TsadError):
    pass


class NonFiniteLoss(TsadError):
    pass


class ShapeMismatch(TsadError):
    pass


# pipeline construction
class SchemaError(TsadError):
    pass


class CycleError(TsadError):
    pass


class UnsatisfiedSlot(TsadError):
    pass


class UnknownPrimitive(TsadError):
    pass


class BadHyperparamSpec(TsadError):
    pass


class OutOfRange(TsadError):
    pass


class UnknownHyperparam(TsadError):
    pass


class StepError(TsadError):
    """Wraps an error raised inside a pipeline step, tagged with the step id."""

    def __init__(self, step_id, cause):
        super().__init__(f"step '{step_id}': {cause}")
        self.step_id = step_id
        self.cause = cause


# metrics
class IntervalOutOfSpan(TsadError):
    pass


# tuner
class NumericalFailure(TsadError):
    pass


class BudgetExhausted(TsadError):
    pass


class AllTrialsFailed(TsadError):
    pass


# knowledge base
class UnknownCollection(TsadError):
    pass


class MissingField(TsadError):
    pass


class DanglingReference(TsadError):
    pass


class Locked(TsadError):
    pass


class CorruptJournal(TsadError):
    def __init__(self, message, last_good_offset):
        super().__init__(message)
        self.last_good_offset = last_good_offset


# feedback
class SingleClassData(TsadError):
    pass

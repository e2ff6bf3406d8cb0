"""Exception hierarchy shared by the pipeline stages."""


class CohortRiskError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CohortRiskError, ValueError):
    """A record line could not be turned into a domain object.

    ``reason`` is one of ``InvalidDate``, ``MissingId``, ``MissingLabValue``,
    ``UnknownKind``, ``MalformedRecord``.
    """

    def __init__(self, reason, message=""):
        self.reason = reason
        super().__init__(f"{reason}: {message}" if message else reason)


class InsufficientPool(CohortRiskError):
    def __init__(self, case_id, available, required):
        self.case_id = case_id
        self.available = available
        self.required = required
        super().__init__(
            f"case {case_id!r}: {available} matching controls available, {required} required"
        )


class NoEncounters(CohortRiskError):
    pass


class UnknownPatient(CohortRiskError, KeyError):
    pass


class EmptyCohort(CohortRiskError, ValueError):
    pass


class DegenerateDesign(CohortRiskError, ValueError):
    pass


class ColumnMismatch(CohortRiskError, ValueError):
    pass


class MissingColumn(ColumnMismatch, KeyError):
    pass


class NotPositiveDefinite(CohortRiskError, ArithmeticError):
    pass


class TooFewSamples(CohortRiskError, ValueError):
    pass


class OneClassOnly(CohortRiskError, ValueError):
    pass


class NoCrossing(CohortRiskError, ValueError):
    pass


class ZeroMargin(CohortRiskError, ValueError):
    pass


class MisalignedCohorts(CohortRiskError, ValueError):
    pass


class ConfigInvalid(CohortRiskError, ValueError):
    pass

"""Exception hierarchy.

Three families map onto the CLI exit codes: input problems (1),
infeasibility (2) and numerical failures (3).
"""

from __future__ import annotations


class SkembedError(Exception):
    exit_code = 3


class InputError(SkembedError, ValueError):
    exit_code = 1


class NumericalError(SkembedError, ArithmeticError):
    exit_code = 3


# chain
class NegativeEntry(InputError):
    pass


class RowSumExceedsOne(InputError):
    pass


class ModeMismatch(InputError):
    pass


class Reducible(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class NotErgodic(InputError):
    pass


class NotAbsorbing(InputError):
    pass


class SingularSystem(NumericalError):
    pass


class ZeroGammaState(NumericalError):
    pass


# costs
class MarginalMismatch(InputError):
    pass


class MissingCemeteryValue(InputError):
    pass


class NoGradient(InputError):
    pass


class SubmartingaleViolated(InputError):
    pass


# potential / snell
class NonConvergence(NumericalError):
    pass


class NegativeIncrement(NumericalError):
    pass


class NotOrdered(SkembedError):
    exit_code = 2


# lp
class Infeasible(SkembedError):
    """LP infeasibility; carries the Farkas ray (and a potential if one was built)."""

    exit_code = 2

    def __init__(self, message, farkas=None, certificate=None):
        super().__init__(message)
        self.farkas = farkas
        self.certificate = certificate


class Unbounded(NumericalError):
    def __init__(self, message, ray=None):
        super().__init__(message)
        self.ray = ray


class NumericalBreakdown(NumericalError):
    pass


class GapTooLarge(NumericalError):
    pass


class NoProgress(NumericalError):
    def __init__(self, message, psi=None, gap=None):
        super().__init__(message)
        self.psi = psi
        self.gap = gap


# verify / sim
class MassLeak(NumericalError):
    pass


class ExcessTruncation(NumericalError):
    pass


# problem files
class SchemaError(InputError):
    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line

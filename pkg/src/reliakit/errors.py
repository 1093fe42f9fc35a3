"""Exception hierarchy. Every toolkit error derives from ``ReliakitError``."""
from __future__ import annotations


class ReliakitError(Exception):
    pass


class ValidationError(ReliakitError, ValueError):
    """A value violates a type invariant."""


class LogFormatError(ReliakitError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class MissingTruthError(ReliakitError, ValueError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"record {record_id!r} has no ground truth")


class EmptySliceError(ReliakitError, ValueError):
    pass


class SingularMatrixError(ReliakitError, ValueError):
    pass


class DegenerateObjectiveError(ReliakitError, ValueError):
    pass


class ConfigError(ReliakitError, ValueError):
    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TestCaseError(ReliakitError):
    """Wraps an error raised while running a named test case."""

    __test__ = False

    def __init__(self, case_name: str, cause: Exception):
        self.case_name = case_name
        self.cause = cause
        super().__init__(f"test case {case_name!r}: {cause}")

"""Exception types shared across the package."""

from __future__ import annotations


class FaqnetError(Exception):
    """Base class for all library errors."""


class ParseError(FaqnetError):
    """A text input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str | None = None):
        self.line = line
        self.column = column
        self.source = source
        where = []
        if source:
            where.append(source)
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"col {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaError(FaqnetError):
    """Relations, attributes or domains are inconsistent with each other."""


class DecompositionError(FaqnetError):
    """A decomposition is invalid or a structural precondition failed."""


class IncompatibleInputError(FaqnetError):
    """A protocol or generator was handed an input shape it does not support."""


class CapacityViolation(FaqnetError):
    """A node tried to push more than the per-edge budget through an edge."""

    def __init__(self, message: str, round_no: int, edge: tuple[str, str]):
        self.round_no = round_no
        self.edge = edge
        super().__init__(f"round {round_no}, edge {edge[0]}-{edge[1]}: {message}")


class RoundCapExceeded(FaqnetError):
    """A simulation did not terminate within its round cap."""


class OracleCapExceeded(FaqnetError):
    """The brute-force evaluator was asked to enumerate too large a space."""

"""Exception hierarchy.

Every error carries a ``category`` (machine-parsable, used by the CLI's
single-line error output) and an ``exit_code``.
"""

from __future__ import annotations


class RouteFlowError(Exception):
    category = "error"
    exit_code = 4


class UsageError(RouteFlowError):
    category = "usage"
    exit_code = 2


class ParseError(RouteFlowError):
    category = "parse"
    exit_code = 3

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


class EmptyInput(RouteFlowError):
    category = "empty_input"


class DegenerateExtent(RouteFlowError):
    category = "degenerate_extent"


class EmptyIndex(RouteFlowError):
    category = "empty_index"


class CyclicGraph(RouteFlowError):
    category = "cyclic_graph"

    def __init__(self, nodes):
        self.nodes = sorted(nodes)
        super().__init__(f"cycle among nodes {self.nodes}")


class IdMismatch(RouteFlowError):
    category = "id_mismatch"


class DegenerateInk(RouteFlowError):
    category = "degenerate_ink"


class GenerationFailed(RouteFlowError):
    category = "generation_failed"


class StageError(RouteFlowError):
    """A pipeline stage failed; wraps the original error with the stage name."""

    category = "pipeline"

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")

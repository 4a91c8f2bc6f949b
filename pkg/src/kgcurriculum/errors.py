"""Exception types shared across the toolkit."""


class KgCurriculumError(Exception):
    """Base class for all toolkit errors."""


class MalformedRecord(KgCurriculumError):
    """A triple record has the wrong arity or an empty field."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ConflictingName(KgCurriculumError):
    """The same entity id appeared with two different names."""


class UnknownNode(KgCurriculumError):
    """A queried node id is not present in the graph."""


class DanglingEntity(KgCurriculumError):
    """A path references an entity id missing from the graph."""


class EmptyGraph(KgCurriculumError):
    """An operation requires a non-empty graph."""


class InvalidConfig(KgCurriculumError):
    """A configuration value violates its contract."""


class DeadEnd(KgCurriculumError):
    """Path traversal ran out of unvisited neighbors before reaching the
    requested length."""

    def __init__(self, depth_reached, requested):
        self.depth_reached = depth_reached
        self.requested = requested
        super().__init__(
            f"dead end at depth {depth_reached} of requested {requested}"
        )


class BackendUnavailable(KgCurriculumError):
    """Retries against a generation backend were exhausted."""


class AuthMissing(KgCurriculumError):
    """The environment variable holding the backend credential is unset."""


class ResponseMalformed(KgCurriculumError):
    """The backend returned a response the client could not interpret."""


class FormatViolation(KgCurriculumError):
    """Raw QA text does not match the expected tagged block format."""

    def __init__(self, element):
        self.element = element
        super().__init__(f"missing or malformed element: {element}")


class EmptyTrace(KgCurriculumError):
    """The trace model returned an empty completion."""


class ProgressStall(KgCurriculumError):
    """The pipeline exhausted its attempt budget before reaching the target
    dataset size."""

    def __init__(self, tallies):
        self.tallies = tallies
        super().__init__(f"attempt budget exhausted; funnel tallies: {tallies}")


class StrataUnfillable(KgCurriculumError):
    """A benchmark stratum could not be filled within the attempt budget."""

    def __init__(self, category, hops, eligible_nodes):
        self.category = category
        self.hops = hops
        self.eligible_nodes = eligible_nodes
        super().__init__(
            f"cell (category={category!r}, hops={hops}) unfillable; "
            f"{eligible_nodes} eligible source nodes"
        )


class TokenBudgetExhausted(KgCurriculumError):
    """A reasoning stream hit its token budget before producing an answer."""

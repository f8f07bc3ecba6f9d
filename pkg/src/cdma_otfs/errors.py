"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    pass


class InvalidParameterError(SimulationError, ValueError):
    """A parameter violates an operation's precondition."""


class CapacityError(InvalidParameterError):
    """More sequences requested than the family can supply."""

    def __init__(self, family, length, requested, limit):
        self.limit = limit
        super().__init__(
            f"{family} family at length {length} holds at most {limit} "
            f"sequences, {requested} requested"
        )


class FramingError(SimulationError, ValueError):
    """Vector lengths do not fit the frame layout."""


class DomainError(SimulationError, ValueError):
    """Value outside the domain an operator is defined on."""


class ConfigError(SimulationError):
    """Invalid experiment configuration; ``problems`` lists every bad field."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericFailure(SimulationError, ArithmeticError):
    """Linear-algebra failure, tagged with the Monte-Carlo coordinates."""

    def __init__(self, message, seed=None, ebno_index=None, frame_index=None):
        self.seed = seed
        self.ebno_index = ebno_index
        self.frame_index = frame_index
        where = ""
        if seed is not None:
            where = f" (seed={seed}, ebno_index={ebno_index}, frame={frame_index})"
        super().__init__(message + where)

"""Exception hierarchy shared by every ehpskit module."""


class EhpsError(Exception):
    pass


class InvalidArgument(EhpsError, ValueError):
    pass


class EmptyInput(EhpsError, ValueError):
    pass


class DegenerateGeometry(EhpsError, ValueError):
    pass


class ParseError(EhpsError, ValueError):
    """Malformed or invariant-violating file content.

    ``path`` locates the offending field (``skin_weights[12]``), ``line`` the
    1-based line for JSON-lines inputs.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class RankDeficient(EhpsError, ValueError):
    def __init__(self, message: str, rank: int):
        self.rank = rank
        super().__init__(f"{message} (rank {rank})")


class TrainingFailure(EhpsError, RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")

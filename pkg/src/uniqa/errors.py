"""Exception hierarchy. ``exit_code`` drives the CLI's process status."""


class UniqaError(Exception):
    exit_code = 2


class DomainError(UniqaError, ValueError):
    """An argument lies outside the operation's domain."""


class ShapeError(UniqaError, ValueError):
    pass


class DegenerateInputError(UniqaError, ValueError):
    pass


class ContractError(UniqaError, ValueError):
    pass


class ConfigError(UniqaError, ValueError):
    pass


class ParseError(UniqaError, ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class IntegrityError(UniqaError, ValueError):
    """A caption references an image id that is not in the manifest."""


class ConflictError(UniqaError, ValueError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"conflicting records for ids: {', '.join(self.ids)}")


class UndefinedMetricError(UniqaError, ValueError):
    pass


class TransportError(UniqaError):
    exit_code = 3


class ContentError(UniqaError):
    pass


class FormatError(UniqaError):
    pass


class VersionError(UniqaError):
    pass


class CorruptionError(UniqaError):
    pass

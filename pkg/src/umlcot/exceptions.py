"""Exception hierarchy.

Everything a caller can fix by changing its inputs derives from
:class:`InputError`; the CLI maps those to exit code 1.
"""


class UmlCotError(Exception):
    """Base class for all package errors."""


class InputError(UmlCotError):
    """Bad user-supplied data (files, references, parameters)."""


class ParseError(InputError):
    """PlantUML source could not be parsed."""


class MissingMarkers(ParseError):
    """No ``@startuml`` followed by ``@enduml``."""


class UnbalancedBraces(ParseError):
    pass


class UnterminatedNode(ParseError):
    """An activity node opened with ``:`` never reaches its ``;``."""


class InvalidReference(InputError):
    """Reference plan is unusable for scoring (e.g. no canonical nodes)."""


class GroupTooSmall(InputError):
    pass


class EmptyCorpus(InputError):
    pass


class MalformedLine(InputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateId(InputError):
    def __init__(self, line: int, instance_id: str):
        super().__init__(f"line {line}: duplicate id {instance_id!r}")
        self.line = line
        self.instance_id = instance_id


class DimensionMismatch(UmlCotError):
    pass


class EmbeddingServiceError(UmlCotError):
    pass


class ServiceUnreachable(EmbeddingServiceError):
    pass


class ServiceMalformedResponse(EmbeddingServiceError):
    pass

"""Exception hierarchy shared by all modules."""


class RattError(Exception):
    """Base class for library errors."""


class ShapeError(RattError, ValueError):
    pass


class DomainError(RattError, ValueError):
    pass


class VocabularyError(RattError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class TaskError(RattError, ValueError):
    pass


class TrainingError(RattError, RuntimeError):
    pass


class DefinitionError(RattError, ValueError):
    """Invalid task definitions handed to a splitting procedure."""


class ConfigError(RattError, ValueError):
    pass

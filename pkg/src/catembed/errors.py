"""Exception types shared across the package.

Each class maps to one CLI exit code so that failure classes stay distinct.
"""


class CatEmbedError(Exception):
    exit_code = 1


class MissingInputError(CatEmbedError, FileNotFoundError):
    exit_code = 2


class ParseError(CatEmbedError, ValueError):
    exit_code = 3

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ConfigError(CatEmbedError, ValueError):
    exit_code = 4


class CoverageError(CatEmbedError, LookupError):
    exit_code = 5


class StructureError(CatEmbedError, ValueError):
    exit_code = 6


class TrainingDivergedError(CatEmbedError, FloatingPointError):
    exit_code = 1

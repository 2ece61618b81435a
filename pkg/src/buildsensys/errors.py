"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI reports for it.
"""


class BuildSenSysError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(BuildSenSysError, ValueError):
    exit_code = 2
    code = "config"


class DataError(BuildSenSysError, ValueError):
    exit_code = 3
    code = "data"


class ShapeError(BuildSenSysError, ValueError):
    exit_code = 4
    code = "shape"


class NumericError(BuildSenSysError, ArithmeticError):
    exit_code = 4
    code = "numeric"

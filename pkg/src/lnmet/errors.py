"""Exception hierarchy shared by the library and the command line.

Every error class carries the process exit code the CLI reports for it.
"""


class LnmetError(Exception):
    exit_code = 1


class ConfigError(LnmetError, ValueError):
    exit_code = 2


class InputError(LnmetError, ValueError):
    exit_code = 3


class DegenerateDataError(LnmetError, ValueError):
    exit_code = 4


class NumericalError(LnmetError, ArithmeticError):
    exit_code = 5

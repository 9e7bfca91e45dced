"""Exception types raised across the package."""


class NormforgeError(Exception):
    pass


class DimensionError(NormforgeError, ValueError):
    """Operand shapes do not line up."""


class DegenerateInputError(NormforgeError, ValueError):
    """An operation is undefined at its input (e.g. the LMO of zero)."""


class NumericInstabilityError(NormforgeError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OracleScopeError(NormforgeError, ValueError):
    """A verification oracle was asked for an input outside its size guard."""


class ConfigError(NormforgeError, ValueError):
    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.message = message
        self.key = key
        self.line = line

    def __str__(self):
        msg = self.message
        if self.key and self.key not in msg:
            msg = f"{self.key}: {msg}"
        return f"line {self.line}: {msg}" if self.line is not None else msg

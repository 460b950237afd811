from __future__ import annotations


class Error(Exception):
    pass


class InvalidInput(Error):
    pass


class ShapeMismatchError(Error):
    pass


class InfeasibleError(Error):
    pass


class DegenerateInputError(Error):
    pass


class InvalidConfig(Error):
    pass


class DivergenceError(Error):
    pass

#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
from typing import Optional


class GEMError(Exception):
    """
    Base class of every error raised by pyGEM.
    """


class GEMParseError(GEMError, ValueError):
    """
    Raised when an input stream is not well-formed in its declared format.
    """
    def __init__(self, msg: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        if line is not None:
            msg = f"[{source or '<stream>'}:{line}] {msg}"
        super().__init__(msg)


class GEMSchemaError(GEMError, ValueError):
    """
    Raised when well-formed input violates the expected schema, for instance an unregistered device type.
    """


class GEMDimensionError(GEMError, ValueError):
    pass


class GEMNumericError(GEMError, ArithmeticError):
    """
    Raised when a computation produces non-finite values.
    """
    def __init__(self, msg: str, layer: Optional[int] = None, epoch: Optional[int] = None):
        self.layer = layer
        self.epoch = epoch
        super().__init__(msg)


class GEMUsageError(GEMError, ValueError):
    pass


class GEMConfigError(GEMError, ValueError):
    pass


class GEMConsistencyError(GEMError, ValueError):
    """
    Raised when two objects which must agree with each other don't, eg: a trace computed with other parameters, or a
    checkpoint built for another device type registry.
    """

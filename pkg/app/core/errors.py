from typing import Optional


class RadonNetsError(Exception):
    """Base class for all toolkit errors"""


class ConfigurationError(RadonNetsError):
    """Dimensions or settings do not conform to the SpaceConfig"""


class NumericError(RadonNetsError):
    """An iterative numerical routine failed to converge"""

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class ParseError(RadonNetsError):
    """A model, dataset or config file is malformed"""

    def __init__(self, message: str, location: Optional[str] = None):
        detail = f"{message} at {location}" if location else message
        super().__init__(detail)
        self.location = location


class PreconditionError(RadonNetsError):
    """An operation was called outside its precondition"""


class EmptyMeasureError(PreconditionError):
    """Sampling or normalising an empty measure"""

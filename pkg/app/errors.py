"""
MAP Market Lab - Exception Hierarchy

Every error raised by the library derives from MarketLabError. The CLI maps
the concrete classes onto process exit codes (see app/core.py).
"""

from typing import Optional


class MarketLabError(Exception):
    """Base class for all library errors"""


class ConfigError(MarketLabError):
    """Scenario document could not be read or does not follow the schema"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SpecError(MarketLabError, ValueError):
    """A construction invariant of a market type is violated"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AdmissibilityError(MarketLabError, ValueError):
    """A portfolio drives a wealth jump factor to zero or below"""

    def __init__(self, factor: str, message: str):
        self.factor = factor
        super().__init__(f"{factor}: {message}")


class DomainError(MarketLabError, ValueError):
    """An operation was called outside the domain it is defined on"""


class GridError(MarketLabError, ValueError):
    """Coefficient grid mismatch or oversized oracle grid"""


class MartingaleTestError(MarketLabError):
    """A discounted asset failed the change-of-measure z-test"""

    def __init__(self, asset: str, message: str):
        self.asset = asset
        super().__init__(f"{asset}: {message}")

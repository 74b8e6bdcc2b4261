"""Domain exceptions shared by the lab modules."""

from typing import Optional


class InvalidInputError(ValueError):
    """Input violates a precondition (shape, finiteness, geometry, audio)."""


class DegenerateScenarioError(ValueError):
    """A silent component makes a calibration ratio undefined."""


class MissingRegimeError(LookupError):
    """A required VAD regime has no frames."""

    def __init__(self, regime, consumer: Optional[str] = None):
        self.regime = regime
        self.consumer = consumer
        where = f" (needed by {consumer})" if consumer else ""
        super().__init__(f"Regime {regime} has no frames{where}")

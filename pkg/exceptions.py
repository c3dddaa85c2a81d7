# exceptions.py
"""Error types shared by every component; each carries the CLI exit code."""


class AuctionLearningError(Exception):
    exit_code = 1


class ConfigError(AuctionLearningError, ValueError):
    """Invalid configuration, scenario or optimizer settings"""
    exit_code = 2


class DataError(AuctionLearningError, ValueError):
    """Missing or malformed auction/user logs"""
    exit_code = 3


class InvalidInputError(DataError):
    """Operation called with inputs outside its domain"""


class SimulationError(AuctionLearningError, RuntimeError):
    exit_code = 4


class DegenerateScoreError(SimulationError):
    """A shown ad has a zero quality score, so its GSP price is undefined"""


class StepSizeError(SimulationError):
    """Gradient descent loss kept increasing"""


class StateSpaceTooLargeError(SimulationError):
    """Joint bid space exceeds the oracle cap"""


class ErgodicityError(SimulationError):
    """Power iteration stalled before reaching the stationary distribution"""

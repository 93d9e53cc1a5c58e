import logging
from typing import Iterable, NamedTuple

import numpy as np

logger = logging.getLogger("heatnet")


# Exceptions
class NetworkError(Exception):
    pass


class DisconnectedConsumerError(NetworkError):
    def __init__(self, consumers: Iterable[int], message: str = ""):
        self.consumers = sorted(int(c) for c in consumers)
        if not message:
            message = f"Consumers {self.consumers} are not connected to any producer."
        super().__init__(message)


class SimulationError(Exception):
    pass


class AdjointError(Exception):
    pass


class InfeasibleDesignError(Exception):
    pass


class NotOptimizedError(Exception):
    pass


# Misc Utils
def check_is_optimized(obj: object, attr_list: list[str]):
    for attr in attr_list:
        if not hasattr(obj, attr):
            raise NotOptimizedError(
                f"Attribute \"{attr}\" not found. {obj.__class__.__name__} has not been run. Please call the 'optimize' method first."
            )


def check_positive(**values: float):
    for name, value in values.items():
        if not np.isfinite(value) or value <= 0:
            raise ValueError(f"Invalid {name}={value}. Must be strictly positive.")


def check_schema(doc: dict, expected: str):
    found = doc.get("schema")
    if found != expected:
        raise ValueError(f"Unsupported schema {found!r}, expected {expected!r}.")


def update_dataclass_from_dict(cls, values: dict):
    # Dataclass configs are read from JSON; unknown keys are rejected
    allowed = set(cls.__dataclass_fields__)
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(
            f"Unknown keys {sorted(unknown)} for {cls.__name__}. Allowed keys are {sorted(allowed)}."
        )
    return cls(**values)


class SmoothAbs(NamedTuple):
    value: np.ndarray
    grad: np.ndarray


def smooth_abs(q: np.ndarray, eps: float) -> SmoothAbs:
    s = np.sqrt(q * q + eps * eps)
    return SmoothAbs(s, q / s)


def positive_part(q: np.ndarray, eps: float):
    # Smoothed max(q, 0) and its derivative
    s = np.sqrt(q * q + eps * eps)
    return 0.5 * (q + s), 0.5 * (1.0 + q / s)

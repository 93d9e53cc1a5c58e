from __future__ import annotations

import abc
import os
from typing import Optional

from heatnet.network import DesignVector, Network


# Abstract base classes defining the interface to implement when adding a topology optimizer
class BaseOptimizer(abc.ABC):
    @abc.abstractmethod
    def optimize(self, network: Network, init: Optional[DesignVector] = None):
        """Optimize the topology and the pipe diameters of ``network``. The result is stored in :attr:`result_` and the optimizer is returned."""
        pass

    @abc.abstractmethod
    def save(self, path: os.PathLike):
        pass

    @classmethod
    @abc.abstractmethod
    def load(path: os.PathLike):
        pass

    @property
    @abc.abstractmethod
    def is_optimized(self) -> bool:
        """Check if the optimizer has been run.

        Returns:
            Returns ``True`` if :func:`optimize` has been called, ``False`` otherwise.
        """
        pass

    @property
    @abc.abstractmethod
    def method(self) -> str:
        """Short name of the method, used in result files and benchmark records."""
        pass

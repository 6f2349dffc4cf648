"""Named parameter storage."""

import logging
from typing import Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from ..errors import ConfigurationError, DimensionError
from .core import Tensor

logger = logging.getLogger(__name__)


class ParamStore:
    """Map from stable dotted paths to parameter tensors.

    Iteration is lexicographic by path so that serialization, gradient checks
    and optimizer state are independent of construction order. Every entry is
    trainable until frozen; the optimizer skips frozen entries.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._frozen: Set[str] = set()

    def register(self, path: str, value: np.ndarray) -> Tensor:
        """Create a tracked leaf tensor under ``path``."""
        if path in self._params:
            raise ConfigurationError(f"parameter path registered twice: {path}")
        tensor = Tensor(np.array(value, dtype=np.float64, order="C"), requires_grad=True)
        self._params[path] = tensor
        return tensor

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.paths())

    def paths(self) -> List[str]:
        return sorted(self._params)

    def items(self) -> List[Tuple[str, Tensor]]:
        return [(path, self._params[path]) for path in self.paths()]

    def is_trainable(self, path: str) -> bool:
        return path in self._params and path not in self._frozen

    def trainable_items(self) -> List[Tuple[str, Tensor]]:
        return [(path, tensor) for path, tensor in self.items() if self.is_trainable(path)]

    def freeze(self, prefix: str) -> int:
        """Mark every parameter at or below ``prefix`` frozen; returns how many matched."""
        matched = [p for p in self._params if p == prefix or p.startswith(prefix + ".")]
        if not matched:
            raise ConfigurationError(f"no parameters below {prefix!r}")
        self._frozen.update(matched)
        logger.debug("froze %d parameter tensors below %s", len(matched), prefix)
        return len(matched)

    def zero_grad(self) -> None:
        """Reset every gradient to zeros of the parameter's shape."""
        for tensor in self._params.values():
            tensor.grad = np.zeros_like(tensor.data)

    def count(self, prefix: Optional[str] = None) -> int:
        """Number of scalar parameters, optionally below a path prefix."""
        return int(
            sum(
                t.data.size
                for path, t in self._params.items()
                if prefix is None or path == prefix or path.startswith(prefix + ".")
            )
        )

    def state(self) -> Dict[str, np.ndarray]:
        """Copy of every parameter array, keyed by path."""
        return {path: t.data.copy() for path, t in self.items()}

    def load_state(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite parameter values in place; shapes must agree."""
        missing = [p for p in self._params if p not in state]
        unexpected = [p for p in state if p not in self._params]
        if strict and (missing or unexpected):
            raise ConfigurationError(f"parameter mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for path, value in state.items():
            if path not in self._params:
                continue
            target = self._params[path]
            value = np.asarray(value)
            if value.size != target.data.size:
                raise DimensionError(f"{path}: stored shape {value.shape} vs expected {target.shape}")
            target.data[...] = value.reshape(target.shape)
        logger.debug("loaded %d parameter tensors", len(state))

